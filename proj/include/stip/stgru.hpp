#pragma once

// Spatiotemporal gated recurrent unit and its K-layer stack.
//
//   R = sigma(W_sr*S + W_tr*T)           U = sigma(W_su*S + W_tu*T)
//   TT = tanh(W_tt*T + R . (W_st*S))     SS = tanh(W_ss*S + R . (W_ts*T))
//   T' = (1-U) . TT + U . T              S' = (1-U) . SS + U . S
//
// T is the layer's own temporal state from t-1, S is the spatial state coming
// up from the layer below at time t.

#include <array>
#include <optional>

#include "stip/nn_ops.hpp"
#include "stip/params.hpp"

namespace stip {

template <typename T>
struct LayerState {
    Var<T> temporal;
    Var<T> spatial;

    static LayerState zeros(int batch, int channels, int h, int w) {
        return {constant(Tensor<T>({batch, channels, h, w})), constant(Tensor<T>({batch, channels, h, w}))};
    }
};

/// Gate values captured for inspection.
template <typename T>
struct GateActivations {
    Tensor<T> trend_gate;      // R
    Tensor<T> update_gate;     // U
    Tensor<T> trend_temporal;  // TT
    Tensor<T> trend_spatial;   // SS
};

/// Per-call switches. The forcing overrides are test hooks; training never sets them.
struct CellOptions {
    bool capture_gates = false;
    std::optional<double> force_update;
    std::optional<double> force_trend;
};

/// Pre-activation sums in the order they are normalized.
enum GateSum : int { kTrendGate = 0, kUpdateGate = 1, kTrendTemporal = 2, kTrendSpatial = 3 };

template <typename T>
struct STGRUParams {
    int hidden = 0;
    int kernel = 0;
    bool layer_norm = false;
    bool bias = false;

    Var<T> w_sr, w_tr, w_su, w_tu, w_tt, w_st, w_ss, w_ts;
    std::array<Var<T>, 4> gate_bias;  // only when bias
    std::array<Var<T>, 4> norm_gain;  // only when layer_norm
    std::array<Var<T>, 4> norm_shift;

    static STGRUParams init(int hidden, int kernel, bool layer_norm, bool bias, Rng& rng) {
        require(hidden >= 1 && kernel >= 1 && kernel % 2 == 1, "STGRUParams: hidden >= 1 and odd kernel required");
        STGRUParams p;
        p.hidden = hidden;
        p.kernel = kernel;
        p.layer_norm = layer_norm;
        p.bias = bias;
        const int fan_in = hidden * kernel * kernel;
        for (Var<T>* w : p.weights()) *w = init_uniform_param<T>({hidden, hidden, kernel, kernel}, fan_in, rng);
        if (bias)
            for (auto& b : p.gate_bias) b = init_uniform_param<T>({hidden}, fan_in, rng);
        if (layer_norm)
            for (int i = 0; i < 4; ++i) {
                p.norm_gain[static_cast<std::size_t>(i)] = init_const_param<T>({hidden}, T(1));
                p.norm_shift[static_cast<std::size_t>(i)] = init_const_param<T>({hidden}, T(0));
            }
        return p;
    }

    std::array<Var<T>*, 8> weights() { return {&w_sr, &w_tr, &w_su, &w_tu, &w_tt, &w_st, &w_ss, &w_ts}; }

    ParamList<T> params(const std::string& prefix = "") const {
        ParamList<T> out;
        const char* names[8] = {"w_sr", "w_tr", "w_su", "w_tu", "w_tt", "w_st", "w_ss", "w_ts"};
        const Var<T>* ws[8] = {&w_sr, &w_tr, &w_su, &w_tu, &w_tt, &w_st, &w_ss, &w_ts};
        for (int i = 0; i < 8; ++i) out.add(prefix + names[i], *ws[i]);
        const char* sums[4] = {"r", "u", "tt", "ss"};
        if (bias)
            for (int i = 0; i < 4; ++i) out.add(prefix + "b_" + sums[i], gate_bias[static_cast<std::size_t>(i)]);
        if (layer_norm)
            for (int i = 0; i < 4; ++i) {
                out.add(prefix + "ln_gain_" + sums[i], norm_gain[static_cast<std::size_t>(i)]);
                out.add(prefix + "ln_shift_" + sums[i], norm_shift[static_cast<std::size_t>(i)]);
            }
        return out;
    }

    /// 8*C^2*k^2, plus 4*C per enabled bias and 8*C for normalization affine terms.
    static std::size_t closed_form_count(int hidden, int kernel, bool layer_norm, bool bias) {
        const std::size_t c = static_cast<std::size_t>(hidden);
        std::size_t n = 8 * c * c * static_cast<std::size_t>(kernel) * static_cast<std::size_t>(kernel);
        if (bias) n += 4 * c;
        if (layer_norm) n += 8 * c;
        return n;
    }
};

template <typename T>
struct CellOutput {
    Var<T> temporal;
    Var<T> spatial;
    std::optional<GateActivations<T>> gates;
};

namespace detail {

template <typename T>
void require_finite(const Var<T>& v, const char* what) {
    if (!v.value().all_finite()) throw NumericError(std::string(what) + " contains non-finite values");
}

template <typename T>
Var<T> finish_gate_sum(const STGRUParams<T>& p, Var<T> pre, GateSum which) {
    const auto i = static_cast<std::size_t>(which);
    if (p.bias) pre = add_channel_bias(pre, p.gate_bias[i]);
    if (p.layer_norm) pre = group_norm(pre, 1, p.norm_gain[i], p.norm_shift[i]);
    return pre;
}

}  // namespace detail

/// One STGRU application. Shapes of both outputs equal the input shapes.
template <typename T>
CellOutput<T> stgru_cell(const Var<T>& temporal_prev, const Var<T>& spatial_below, const STGRUParams<T>& p,
                         const CellOptions& opts = {}) {
    if (temporal_prev.shape() != spatial_below.shape())
        throw ValidationError("stgru_cell: temporal state " + shape_str(temporal_prev.shape()) +
                              " and spatial state " + shape_str(spatial_below.shape()) + " differ in shape");
    require(temporal_prev.value().rank() == 4, "stgru_cell: states must be [B, C, H, W]");
    if (temporal_prev.dim(1) != p.hidden)
        throw ValidationError("stgru_cell: state has " + std::to_string(temporal_prev.dim(1)) + " channels, unit expects " +
                              std::to_string(p.hidden));
    detail::require_finite(temporal_prev, "stgru_cell: temporal state");
    detail::require_finite(spatial_below, "stgru_cell: spatial state");

    const int C = p.hidden;
    const int pad = p.kernel / 2;
    // Convolutions sharing an input run as one wide convolution.
    const Var<T> from_s = conv2d(spatial_below, concat<T>({p.w_sr, p.w_su, p.w_st, p.w_ss}, 0), 1, pad);
    const Var<T> from_t = conv2d(temporal_prev, concat<T>({p.w_tr, p.w_tu, p.w_tt, p.w_ts}, 0), 1, pad);
    auto part = [C](const Var<T>& v, int i) { return slice(v, 1, i * C, (i + 1) * C); };

    Var<T> r;
    if (opts.force_trend)
        r = constant(Tensor<T>::full(temporal_prev.shape(), static_cast<T>(*opts.force_trend)));
    else
        r = sigmoid(detail::finish_gate_sum(p, add(part(from_s, 0), part(from_t, 0)), kTrendGate));

    Var<T> u;
    if (opts.force_update)
        u = constant(Tensor<T>::full(temporal_prev.shape(), static_cast<T>(*opts.force_update)));
    else
        u = sigmoid(detail::finish_gate_sum(p, add(part(from_s, 1), part(from_t, 1)), kUpdateGate));

    const Var<T> trend_t = tanh(detail::finish_gate_sum(p, add(part(from_t, 2), mul(r, part(from_s, 2))), kTrendTemporal));
    const Var<T> trend_s = tanh(detail::finish_gate_sum(p, add(part(from_s, 3), mul(r, part(from_t, 3))), kTrendSpatial));

    const Var<T> keep = one_minus(u);
    CellOutput<T> out;
    out.temporal = add(mul(keep, trend_t), mul(u, temporal_prev));
    out.spatial = add(mul(keep, trend_s), mul(u, spatial_below));
    if (opts.capture_gates) out.gates = GateActivations<T>{r.value(), u.value(), trend_t.value(), trend_s.value()};
    return out;
}

/// 1x1 convolution over [T_E, T_prev] restoring C_h channels. Weight: [C, 2C, 1, 1].
template <typename T>
Var<T> fuse_temporal_input(const Var<T>& encoded_temporal, const Var<T>& temporal_prev, const Var<T>& fusion_weight) {
    const Shape& a = encoded_temporal.shape();
    const Shape& b = temporal_prev.shape();
    if (a.size() != 4 || b.size() != 4 || a[0] != b[0] || a[2] != b[2] || a[3] != b[3])
        throw ValidationError("fuse_temporal_input: encoded " + shape_str(a) + " and temporal state " + shape_str(b) +
                              " are not spatially aligned");
    return conv2d(concat<T>({encoded_temporal, temporal_prev}, 1), fusion_weight, 1, 0);
}

template <typename T>
struct StackOutput {
    std::vector<LayerState<T>> states;
    LayerState<T> top;
    std::vector<GateActivations<T>> gates;  // per layer, when captured
};

/// One time step through K stacked units. Spatial state flows upward within
/// the step; each temporal state recurs across steps; T_E enters layer 1 only.
template <typename T>
StackOutput<T> stack_forward(const std::vector<LayerState<T>>& prev_states, const Var<T>& encoded_temporal,
                             const Var<T>& encoded_spatial, const std::vector<STGRUParams<T>>& units,
                             const Var<T>& fusion_weight, const CellOptions& opts = {}) {
    require(!units.empty(), "stack_forward: at least one unit required");
    if (prev_states.size() != units.size())
        throw ValidationError("stack_forward: " + std::to_string(prev_states.size()) + " states for " +
                              std::to_string(units.size()) + " units");
    StackOutput<T> out;
    Var<T> spatial = encoded_spatial;
    for (std::size_t k = 0; k < units.size(); ++k) {
        const Var<T> temporal_in =
            k == 0 ? fuse_temporal_input(encoded_temporal, prev_states[0].temporal, fusion_weight) : prev_states[k].temporal;
        CellOutput<T> cell = stgru_cell(temporal_in, spatial, units[k], opts);
        spatial = cell.spatial;
        out.states.push_back({cell.temporal, cell.spatial});
        if (cell.gates) out.gates.push_back(std::move(*cell.gates));
    }
    out.top = out.states.back();
    return out;
}

}  // namespace stip
