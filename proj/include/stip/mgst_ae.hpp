#pragma once

// Multi-grained spatiotemporal auto-encoder: twin encoders (temporal/spatial),
// twin decoders recalling lambda-weighted encoder activations, the 1x1 fusion
// head, and the single-step predictor that threads STGRU states through them.

#include <functional>

#include "stip/config.hpp"
#include "stip/pixel_shuffle.hpp"
#include "stip/stgru.hpp"

namespace stip {

inline constexpr double kLeakySlope = 0.2;

/// Encoder activations, finest first; the last entry is the bottleneck.
template <typename T>
struct FeatureStack {
    std::vector<Var<T>> layers;

    const Var<T>& bottleneck() const {
        require(!layers.empty(), "FeatureStack is empty");
        return layers.back();
    }
    std::size_t depth() const noexcept { return layers.size(); }
};

/// First layer is a 3-D convolution whose clip-axis extent equals the clip
/// length (no clip padding), so the clip axis collapses immediately. Its
/// weight is stored as [C_h, C_in, L, 3, 3]. Later layers are 2-D.
template <typename T>
struct EncoderParams {
    std::vector<Var<T>> weights;
    std::vector<Var<T>> biases;

    static EncoderParams init(int in_channels, int clip_length, int hidden, int depth, Rng& rng) {
        require(depth >= 1, "encoder depth must be >= 1");
        EncoderParams p;
        for (int l = 0; l < depth; ++l) {
            const Shape s = l == 0 ? Shape{hidden, in_channels, clip_length, 3, 3} : Shape{hidden, hidden, 3, 3};
            const int fan_in = (l == 0 ? in_channels * clip_length : hidden) * 9;
            p.weights.push_back(init_uniform_param<T>(s, fan_in, rng));
            p.biases.push_back(init_uniform_param<T>({hidden}, fan_in, rng));
        }
        return p;
    }

    ParamList<T> params(const std::string& prefix) const {
        ParamList<T> out;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            out.add(prefix + "conv" + std::to_string(l + 1) + ".weight", weights[l]);
            out.add(prefix + "conv" + std::to_string(l + 1) + ".bias", biases[l]);
        }
        return out;
    }
};

/// Stride-2 transposed convolutions (kernel 3, padding 1, output padding 1), C_h -> C_h.
template <typename T>
struct DecoderParams {
    std::vector<Var<T>> weights;  // [C_h, C_h, 3, 3] each, input-channel major
    std::vector<Var<T>> biases;

    static DecoderParams init(int hidden, int depth, Rng& rng) {
        DecoderParams p;
        for (int l = 0; l < depth; ++l) {
            p.weights.push_back(init_uniform_param<T>({hidden, hidden, 3, 3}, hidden * 9, rng));
            p.biases.push_back(init_uniform_param<T>({hidden}, hidden * 9, rng));
        }
        return p;
    }

    ParamList<T> params(const std::string& prefix) const {
        ParamList<T> out;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            out.add(prefix + "deconv" + std::to_string(l + 1) + ".weight", weights[l]);
            out.add(prefix + "deconv" + std::to_string(l + 1) + ".bias", biases[l]);
        }
        return out;
    }
};

/// clip: [B, C_in, L, H, W] (already pixel-unshuffled). Returns every layer's post-activation output.
template <typename T>
FeatureStack<T> encode(const Var<T>& clip, const EncoderParams<T>& p) {
    require(clip.value().rank() == 5, "encode: clip must be [B, C, L, H, W], got " + shape_str(clip.shape()));
    const int B = clip.dim(0), Cin = clip.dim(1), L = clip.dim(2), H = clip.dim(3), W = clip.dim(4);
    const int depth = static_cast<int>(p.weights.size());
    const Shape& w0 = p.weights.front().shape();
    if (w0[1] != Cin || w0[2] != L)
        throw ValidationError("encode: clip " + shape_str(clip.shape()) + " does not match first-layer kernel " + shape_str(w0));
    const int unit = 1 << depth;
    if (H % unit != 0 || W % unit != 0)
        throw ValidationError("encode: spatial dims " + std::to_string(H) + "x" + std::to_string(W) +
                              " not divisible by 2^depth = " + std::to_string(unit));

    FeatureStack<T> stack;
    Var<T> x = reshape(clip, {B, Cin * L, H, W});
    for (int l = 0; l < depth; ++l) {
        const auto li = static_cast<std::size_t>(l);
        Var<T> w = p.weights[li];
        if (l == 0) w = reshape(w, {w0[0], Cin * L, 3, 3});
        x = leaky_relu(add_channel_bias(conv2d(x, w, 2, 1), p.biases[li]), static_cast<T>(kLeakySlope));
        stack.layers.push_back(x);
    }
    return stack;
}

/// Decoder layer l consumes (previous output + lambda * encoder layer depth-l+1) and upsamples x2.
/// lambda == 0 skips the recall additions entirely.
template <typename T>
Var<T> decode_with_recall(const Var<T>& bottleneck_pred, const FeatureStack<T>& enc_stack, double lambda,
                          const DecoderParams<T>& p) {
    require(lambda >= 0, "decode_with_recall: lambda must be >= 0");
    const std::size_t depth = p.weights.size();
    if (enc_stack.depth() != depth)
        throw ValidationError("decode_with_recall: encoder depth " + std::to_string(enc_stack.depth()) +
                              " != decoder depth " + std::to_string(depth));
    if (bottleneck_pred.shape() != enc_stack.bottleneck().shape())
        throw ValidationError("decode_with_recall: predicted bottleneck " + shape_str(bottleneck_pred.shape()) +
                              " does not match encoder bottleneck " + shape_str(enc_stack.bottleneck().shape()));
    Var<T> x = bottleneck_pred;
    for (std::size_t l = 0; l < depth; ++l) {
        const Var<T>& recalled = enc_stack.layers[depth - 1 - l];
        if (x.shape() != recalled.shape())
            throw ValidationError("decode_with_recall: decoder layer " + std::to_string(l + 1) + " input " +
                                  shape_str(x.shape()) + " does not match recalled feature " + shape_str(recalled.shape()));
        if (lambda != 0.0) x = axpy(x, static_cast<T>(lambda), recalled);
        x = leaky_relu(add_channel_bias(conv_transpose2d(x, p.weights[l], 2, 1, 1), p.biases[l]),
                       static_cast<T>(kLeakySlope));
    }
    return x;
}

/// 1x1 convolution over [T_D, S_D] to C*p^2 channels, then pixel shuffle to full resolution.
/// Weight: [C*p^2, 2*C_h, 1, 1]; bias may be undefined. No output activation.
template <typename T>
Var<T> fuse_output(const Var<T>& temporal_decoded, const Var<T>& spatial_decoded, const Var<T>& head_weight,
                   const Var<T>& head_bias, int patch) {
    const Shape& a = temporal_decoded.shape();
    const Shape& b = spatial_decoded.shape();
    if (a.size() != 4 || b.size() != 4 || a[0] != b[0] || a[2] != b[2] || a[3] != b[3])
        throw ValidationError("fuse_output: decoded features " + shape_str(a) + " and " + shape_str(b) +
                              " are not spatially aligned");
    Var<T> y = conv2d(concat<T>({temporal_decoded, spatial_decoded}, 1), head_weight, 1, 0);
    if (head_bias.defined()) y = add_channel_bias(y, head_bias);
    return pixel_shuffle(y, patch);
}

/// Hooks for structural tests; default-constructed options change nothing.
template <typename T>
struct StepOptions {
    CellOptions cell;
    /// Called with (temporal stack, spatial stack) after encoding, before recall.
    std::function<void(FeatureStack<T>&, FeatureStack<T>&)> recall_hook;
    /// Called with the predicted bottlenecks (T_P, S_P) before decoding.
    std::function<void(const LayerState<T>&)> top_hook;
};

template <typename T>
struct StepOutput {
    Var<T> frame;  // [B, C, H, W], unclamped
    std::vector<LayerState<T>> states;
    std::vector<GateActivations<T>> gates;
};

/// The full predictor: encoders, STGRU stack, decoders and head.
template <typename T>
class Predictor {
public:
    Predictor(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const int cin = cfg_.channels * cfg_.patch * cfg_.patch;
        const int ch = cfg_.hidden;
        enc_t_ = EncoderParams<T>::init(cin, cfg_.clip_length, ch, cfg_.enc_depth, rng);
        enc_s_ = EncoderParams<T>::init(cin, cfg_.clip_length, ch, cfg_.enc_depth, rng);
        fusion_ = init_uniform_param<T>({ch, 2 * ch, 1, 1}, 2 * ch, rng);
        for (int k = 0; k < cfg_.layers; ++k)
            units_.push_back(STGRUParams<T>::init(ch, cfg_.kernel_hidden, cfg_.layer_norm, cfg_.stgru_bias, rng));
        dec_t_ = DecoderParams<T>::init(ch, cfg_.enc_depth, rng);
        dec_s_ = DecoderParams<T>::init(ch, cfg_.enc_depth, rng);
        head_w_ = init_uniform_param<T>({cin, 2 * ch, 1, 1}, 2 * ch, rng);
        head_b_ = init_uniform_param<T>({cin}, 2 * ch, rng);
    }

    Predictor(const Predictor&) = delete;
    Predictor& operator=(const Predictor&) = delete;
    Predictor(Predictor&&) noexcept = default;
    Predictor& operator=(Predictor&&) noexcept = default;

    const ModelConfig& config() const noexcept { return cfg_; }

    ParamList<T> params() const {
        ParamList<T> out;
        out.append(enc_t_.params("enc_t."));
        out.append(enc_s_.params("enc_s."));
        out.add("fusion.weight", fusion_);
        for (std::size_t k = 0; k < units_.size(); ++k) out.append(units_[k].params("stgru" + std::to_string(k + 1) + "."));
        out.append(dec_t_.params("dec_t."));
        out.append(dec_s_.params("dec_s."));
        out.add("head.weight", head_w_);
        out.add("head.bias", head_b_);
        return out;
    }

    std::vector<LayerState<T>> initial_states(int batch) const {
        return std::vector<LayerState<T>>(static_cast<std::size_t>(cfg_.layers),
                                          LayerState<T>::zeros(batch, cfg_.hidden, cfg_.state_height(), cfg_.state_width()));
    }

    /// frames [B, L, C, H, W] -> encoder input [B, C*p^2, L, H/p, W/p].
    Tensor<T> prepare_clip(const Tensor<T>& frames) const {
        require(frames.rank() == 5, "prepare_clip: expected [B, L, C, H, W], got " + shape_str(frames.shape()));
        const int B = frames.dim(0), L = frames.dim(1), C = frames.dim(2), H = frames.dim(3), W = frames.dim(4);
        if (L != cfg_.clip_length || C != cfg_.channels || H != cfg_.height || W != cfg_.width)
            throw ValidationError("prepare_clip: clip " + shape_str(frames.shape()) + " incompatible with model (L=" +
                                  std::to_string(cfg_.clip_length) + ", C=" + std::to_string(cfg_.channels) + ", " +
                                  std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width) + ")");
        const Tensor<T> sq = pixel_unshuffle(frames, cfg_.patch);  // [B, L, Cp, h, w]
        const int Cp = sq.dim(2), h = sq.dim(3), w = sq.dim(4);
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        Tensor<T> out({B, Cp, L, h, w});
        for (int b = 0; b < B; ++b)
            for (int l = 0; l < L; ++l)
                for (int c = 0; c < Cp; ++c)
                    std::copy_n(sq.data() + ((static_cast<std::size_t>(b) * L + l) * Cp + c) * plane, plane,
                                out.data() + ((static_cast<std::size_t>(b) * Cp + c) * L + l) * plane);
        return out;
    }

    /// One prediction step: clip frames [B, L, C, H, W] -> next frame [B, C, H, W].
    StepOutput<T> predict_next_frame(const Tensor<T>& clip_frames, const std::vector<LayerState<T>>& states,
                                     const StepOptions<T>& opts = {}) const {
        const Var<T> clip = constant(prepare_clip(clip_frames));
        FeatureStack<T> t_stack = encode(clip, enc_t_);
        FeatureStack<T> s_stack = encode(clip, enc_s_);
        const Var<T> t_enc = t_stack.bottleneck();
        const Var<T> s_enc = s_stack.bottleneck();
        StackOutput<T> mem = stack_forward(states, t_enc, s_enc, units_, fusion_, opts.cell);
        if (opts.top_hook) opts.top_hook(mem.top);
        if (opts.recall_hook) opts.recall_hook(t_stack, s_stack);
        const Var<T> t_dec = decode_with_recall(mem.top.temporal, t_stack, cfg_.lambda, dec_t_);
        const Var<T> s_dec = decode_with_recall(mem.top.spatial, s_stack, cfg_.lambda, dec_s_);
        StepOutput<T> out;
        out.frame = fuse_output(t_dec, s_dec, head_w_, head_b_, cfg_.patch);
        out.states = std::move(mem.states);
        out.gates = std::move(mem.gates);
        return out;
    }

    EncoderParams<T>& temporal_encoder() noexcept { return enc_t_; }
    EncoderParams<T>& spatial_encoder() noexcept { return enc_s_; }
    DecoderParams<T>& temporal_decoder() noexcept { return dec_t_; }
    DecoderParams<T>& spatial_decoder() noexcept { return dec_s_; }
    std::vector<STGRUParams<T>>& units() noexcept { return units_; }
    Var<T>& fusion_weight() noexcept { return fusion_; }
    Var<T>& head_weight() noexcept { return head_w_; }
    Var<T>& head_bias() noexcept { return head_b_; }

private:
    ModelConfig cfg_;
    EncoderParams<T> enc_t_, enc_s_;
    Var<T> fusion_;
    std::vector<STGRUParams<T>> units_;
    DecoderParams<T> dec_t_, dec_s_;
    Var<T> head_w_, head_b_;
};

}  // namespace stip
