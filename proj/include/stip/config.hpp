#pragma once

// Run configuration: architecture, training and evaluation settings, with a
// strict JSON mapping (unknown keys are rejected).

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>

#include "json.hpp"

#include "stip/errors.hpp"

namespace stip {

struct ModelConfig {
    int channels = 1;         // frame channels C
    int height = 64;          // model resolution
    int width = 64;
    int patch = 2;            // pixel-unshuffle factor
    int hidden = 64;          // channel width of STGRU, encoders, decoders and discriminator
    int layers = 16;          // stacked STGRU units K
    int kernel_hidden = 5;    // STGRU kernel size
    int enc_depth = 4;        // stride-2 layers in each encoder (== decoder depth)
    int clip_length = 2;      // frames per encoder clip L
    double lambda = 0.1;      // multi-grained recall weight
    bool layer_norm = true;   // normalize STGRU gate pre-activations
    bool stgru_bias = false;  // bias terms on STGRU gate pre-activations
    int disc_depth = 0;       // 0: halve until the feature map is 4x4
    int disc_hidden = 0;      // 0: same as hidden
    int disc_groups = 4;

    int squeezed_height() const { return height / patch; }
    int squeezed_width() const { return width / patch; }
    int state_height() const { return height / (patch << enc_depth); }
    int state_width() const { return width / (patch << enc_depth); }
    int disc_width() const { return disc_hidden > 0 ? disc_hidden : hidden; }

    int resolved_disc_depth() const {
        if (disc_depth > 0) return disc_depth;
        int d = 0, h = height, w = width;
        while (h > 4 && w > 4 && h % 2 == 0 && w % 2 == 0) {
            h /= 2;
            w /= 2;
            ++d;
        }
        return std::max(d, 1);
    }

    void validate() const {
        require(channels >= 1, "model.channels must be >= 1");
        require(patch >= 1, "model.patch must be >= 1");
        require(hidden >= 1, "model.hidden must be >= 1");
        require(layers >= 1, "model.layers must be >= 1");
        require(kernel_hidden >= 1 && kernel_hidden % 2 == 1, "model.kernel_hidden must be a positive odd number");
        require(enc_depth >= 1, "model.enc_depth must be >= 1");
        require(clip_length >= 1, "model.clip_length must be >= 1");
        require(lambda >= 0, "model.lambda must be >= 0");
        const int unit = patch << enc_depth;
        require(height > 0 && width > 0 && height % unit == 0 && width % unit == 0,
                "model.height/width (" + std::to_string(height) + "x" + std::to_string(width) +
                    ") must be divisible by patch*2^enc_depth = " + std::to_string(unit));
        require(disc_depth >= 0, "model.disc_depth must be >= 0");
        require(disc_groups >= 1 && disc_width() % disc_groups == 0,
                "model.disc_hidden must be divisible by model.disc_groups");
        const int dd = resolved_disc_depth();
        require((height >> dd) >= 1 && (width >> dd) >= 1 && height % (1 << dd) == 0 && width % (1 << dd) == 0,
                "model.disc_depth too large for resolution");
    }
};

struct TrainConfig {
    int input_horizon = 4;
    int predict_horizon_train = 1;
    int predict_horizon_test = 6;
    int batch = 4;
    double lr_p = 1e-3;
    double lr_d = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double clip_norm = 1.0;
    double gamma1 = 0.010;
    double gamma2 = 0.0010;
    int steps = 1000;
    std::uint64_t seed = 1;
    std::string loss_frames = "all";  // "all": every v_2..v_T carries loss; "last": only the final frame
    int checkpoint_every = 0;         // 0: final checkpoint only
    int log_every = 10;

    int window_length() const { return input_horizon + predict_horizon_train; }

    void validate() const {
        require(input_horizon >= 1, "train.horizons.input must be >= 1");
        require(predict_horizon_train >= 1, "train.horizons.train must be >= 1");
        require(predict_horizon_test >= 1, "train.horizons.test must be >= 1");
        require(batch >= 1, "train.batch must be >= 1");
        require(lr_p > 0, "train.lr_p must be > 0");
        require(lr_d >= 0, "train.lr_d must be >= 0");
        require(gamma1 >= 0 && gamma2 >= 0, "train.gamma1/gamma2 must be >= 0");
        require(steps >= 0, "train.steps must be >= 0");
        require(loss_frames == "all" || loss_frames == "last", "train.loss_frames must be \"all\" or \"last\"");
        require(checkpoint_every >= 0, "train.checkpoint_every must be >= 0");
    }
};

struct DataConfig {
    int window_stride = 1;  // spacing between admissible training-window start frames

    void validate() const { require(window_stride >= 1, "data.window_stride must be >= 1"); }
};

struct EvalConfig {
    int horizon = 0;  // 0: use train.horizons.test

    void validate() const { require(horizon >= 0, "eval.horizon must be >= 0"); }
};

struct RunConfig {
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;

    void validate() const {
        data.validate();
        model.validate();
        train.validate();
        eval.validate();
    }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::string& section, const std::set<std::string>& known) {
    if (!j.is_object()) throw ValidationError(section + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ValidationError("unknown config key: " + section + "." + it.key());
}

template <typename V>
void read_field(const nlohmann::json& j, const std::string& section, const char* key, V& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError("config key " + section + "." + key + " has the wrong type");
    }
}

}  // namespace detail

inline nlohmann::json to_json(const ModelConfig& m) {
    return {{"channels", m.channels},       {"height", m.height},         {"width", m.width},
            {"patch", m.patch},             {"hidden", m.hidden},         {"layers", m.layers},
            {"kernel_hidden", m.kernel_hidden}, {"enc_depth", m.enc_depth}, {"clip_length", m.clip_length},
            {"lambda", m.lambda},           {"layer_norm", m.layer_norm}, {"stgru_bias", m.stgru_bias},
            {"disc_depth", m.disc_depth},   {"disc_hidden", m.disc_hidden}, {"disc_groups", m.disc_groups}};
}

inline nlohmann::json to_json(const TrainConfig& t) {
    return {{"horizons", {{"input", t.input_horizon}, {"train", t.predict_horizon_train}, {"test", t.predict_horizon_test}}},
            {"batch", t.batch},
            {"lr_p", t.lr_p},
            {"lr_d", t.lr_d},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"clip_norm", t.clip_norm},
            {"gamma1", t.gamma1},
            {"gamma2", t.gamma2},
            {"steps", t.steps},
            {"seed", t.seed},
            {"loss_frames", t.loss_frames},
            {"checkpoint_every", t.checkpoint_every},
            {"log_every", t.log_every}};
}

inline nlohmann::json to_json(const RunConfig& c) {
    return {{"data", {{"window_stride", c.data.window_stride}}},
            {"model", to_json(c.model)},
            {"train", to_json(c.train)},
            {"eval", {{"horizon", c.eval.horizon}}}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    using detail::read_field;
    const std::string s = "model";
    detail::reject_unknown(j, s,
                           {"channels", "height", "width", "patch", "hidden", "layers", "kernel_hidden", "enc_depth",
                            "clip_length", "lambda", "layer_norm", "stgru_bias", "disc_depth", "disc_hidden", "disc_groups"});
    ModelConfig m;
    read_field(j, s, "channels", m.channels);
    read_field(j, s, "height", m.height);
    read_field(j, s, "width", m.width);
    read_field(j, s, "patch", m.patch);
    read_field(j, s, "hidden", m.hidden);
    read_field(j, s, "layers", m.layers);
    read_field(j, s, "kernel_hidden", m.kernel_hidden);
    read_field(j, s, "enc_depth", m.enc_depth);
    read_field(j, s, "clip_length", m.clip_length);
    read_field(j, s, "lambda", m.lambda);
    read_field(j, s, "layer_norm", m.layer_norm);
    read_field(j, s, "stgru_bias", m.stgru_bias);
    read_field(j, s, "disc_depth", m.disc_depth);
    read_field(j, s, "disc_hidden", m.disc_hidden);
    read_field(j, s, "disc_groups", m.disc_groups);
    return m;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    using detail::read_field;
    const std::string s = "train";
    detail::reject_unknown(j, s,
                           {"horizons", "batch", "lr_p", "lr_d", "beta1", "beta2", "clip_norm", "gamma1", "gamma2",
                            "steps", "seed", "loss_frames", "checkpoint_every", "log_every"});
    TrainConfig t;
    if (j.contains("horizons")) {
        const auto& h = j.at("horizons");
        detail::reject_unknown(h, "train.horizons", {"input", "train", "test"});
        read_field(h, "train.horizons", "input", t.input_horizon);
        read_field(h, "train.horizons", "train", t.predict_horizon_train);
        read_field(h, "train.horizons", "test", t.predict_horizon_test);
    }
    read_field(j, s, "batch", t.batch);
    read_field(j, s, "lr_p", t.lr_p);
    read_field(j, s, "lr_d", t.lr_d);
    read_field(j, s, "beta1", t.beta1);
    read_field(j, s, "beta2", t.beta2);
    read_field(j, s, "clip_norm", t.clip_norm);
    read_field(j, s, "gamma1", t.gamma1);
    read_field(j, s, "gamma2", t.gamma2);
    read_field(j, s, "steps", t.steps);
    read_field(j, s, "seed", t.seed);
    read_field(j, s, "loss_frames", t.loss_frames);
    read_field(j, s, "checkpoint_every", t.checkpoint_every);
    read_field(j, s, "log_every", t.log_every);
    return t;
}

/// Parse and validate a run configuration; absent keys take defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, "config", {"data", "model", "train", "eval"});
    RunConfig c;
    if (j.contains("data")) {
        detail::reject_unknown(j.at("data"), "data", {"window_stride"});
        detail::read_field(j.at("data"), "data", "window_stride", c.data.window_stride);
    }
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("eval")) {
        detail::reject_unknown(j.at("eval"), "eval", {"horizon"});
        detail::read_field(j.at("eval"), "eval", "horizon", c.eval.horizon);
    }
    c.validate();
    return c;
}

}  // namespace stip
