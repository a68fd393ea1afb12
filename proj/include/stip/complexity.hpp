#pragma once

// Parameter and FLOP accounting for one recurrent unit over one sample.

#include <map>

#include "json.hpp"
#include "stip/stgru.hpp"

namespace stip {

struct ConvSpec {
    std::string name;
    int c_in = 0, c_out = 0, kernel = 0;
    int out_h = 0, out_w = 0;

    /// Multiply-accumulates: C_in * C_out * k^2 * H_out * W_out.
    double macs() const {
        return static_cast<double>(c_in) * c_out * kernel * kernel * static_cast<double>(out_h) * out_w;
    }
};

inline double estimate_macs(const std::vector<ConvSpec>& convs) {
    double total = 0;
    for (const auto& c : convs) total += c.macs();
    return total;
}

template <typename T>
std::size_t count_params(const ParamList<T>& params) {
    return params.count();
}

/// The eight "same"-padded convolutions of one cell on an H x W map.
inline std::vector<ConvSpec> stgru_conv_specs(int hidden, int kernel, int h, int w) {
    std::vector<ConvSpec> out;
    for (const char* n : {"w_sr", "w_su", "w_st", "w_ss", "w_tr", "w_tu", "w_tt", "w_ts"})
        out.push_back({n, hidden, hidden, kernel, h, w});
    return out;
}

/// Elementwise operations per cell evaluation, by kind, per output element.
inline std::map<std::string, double> stgru_elementwise_per_element(bool layer_norm, bool bias) {
    std::map<std::string, double> ops;
    ops["gate_sums"] = 4;          // R, U and both candidate pre-activations
    ops["sigmoid"] = 2;            // R, U
    ops["trend_products"] = 2;     // R * (.) inside both candidates
    ops["candidate_adds"] = 2;
    ops["tanh"] = 2;
    ops["state_update"] = 7;       // 1 - U, then U*a + (1-U)*b for both states
    if (bias) ops["bias_adds"] = 4;
    if (layer_norm) ops["layer_norm"] = 4 * 6;  // centre, square, scale, normalise, gain, shift per sum
    return ops;
}

struct ComplexityReport {
    std::string unit;
    int hidden = 0, kernel = 0, map_h = 0, map_w = 0;
    bool layer_norm = false, bias = false;
    std::size_t params = 0;              // enumeration of stored tensors
    std::size_t closed_form_params = 0;
    std::vector<ConvSpec> convs;
    double macs = 0;
    std::map<std::string, double> elementwise;  // totals over the map
    std::vector<std::string> assumptions;

    double elementwise_total() const {
        double s = 0;
        for (const auto& [k, v] : elementwise) s += v;
        return s;
    }

    nlohmann::json to_json() const {
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& c : convs)
            layers.push_back({{"name", c.name}, {"c_in", c.c_in}, {"c_out", c.c_out}, {"kernel", c.kernel},
                              {"out_h", c.out_h}, {"out_w", c.out_w}, {"macs", c.macs()}});
        return {{"unit", unit},
                {"hidden", hidden},
                {"kernel", kernel},
                {"map_size", {map_h, map_w}},
                {"layer_norm", layer_norm},
                {"bias", bias},
                {"params", params},
                {"closed_form_params", closed_form_params},
                {"macs", macs},
                {"gmacs", macs / 1e9},
                {"convolutions", layers},
                {"elementwise_ops", elementwise},
                {"elementwise_total", elementwise_total()},
                {"assumptions", assumptions}};
    }
};

/// One STGRU unit on a map_h x map_w feature map, batch of one.
inline ComplexityReport stgru_complexity(int hidden, int kernel, int map_h, int map_w, bool layer_norm = false,
                                         bool bias = false) {
    require(hidden >= 1, "hidden must be >= 1");
    require(kernel >= 1 && kernel % 2 == 1, "kernel must be a positive odd number");
    require(map_h >= 1 && map_w >= 1, "map size must be >= 1");
    ComplexityReport r;
    r.unit = "STGRU";
    r.hidden = hidden;
    r.kernel = kernel;
    r.map_h = map_h;
    r.map_w = map_w;
    r.layer_norm = layer_norm;
    r.bias = bias;
    Rng rng(0);
    r.params = count_params(STGRUParams<float>::init(hidden, kernel, layer_norm, bias, rng).params());
    r.closed_form_params = STGRUParams<float>::closed_form_count(hidden, kernel, layer_norm, bias);
    r.convs = stgru_conv_specs(hidden, kernel, map_h, map_w);
    r.macs = estimate_macs(r.convs);
    const double elems = static_cast<double>(hidden) * map_h * map_w;
    for (const auto& [k, v] : stgru_elementwise_per_element(layer_norm, bias)) r.elementwise[k] = v * elems;
    r.assumptions = {
        "one unit, one sample (batch 1), one time step",
        "FLOPs reported as multiply-accumulates: 1 MAC = 1 FLOP",
        "convolution MACs = C_in * C_out * k^2 * H * W with same padding",
        "feature map " + std::to_string(map_h) + "x" + std::to_string(map_w) + " (the reference map size is not stated)",
        std::string("convolution bias ") + (bias ? "included" : "excluded"),
        std::string("layer normalisation ") + (layer_norm ? "included (per-channel gain and shift on four sums)" : "excluded"),
        "elementwise operations itemised separately and not included in MACs",
    };
    return r;
}

}  // namespace stip
