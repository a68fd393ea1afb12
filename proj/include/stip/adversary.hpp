#pragma once

// Frame discriminator and the training objective:
//   L = L_MSE + gamma1 * L_GAN(P) + gamma2 * L_LP
// with every term summed over predicted time steps and averaged over the batch.

#include "stip/config.hpp"
#include "stip/nn_ops.hpp"
#include "stip/params.hpp"

namespace stip {

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kLogClampEps = 1e-7;

template <typename T>
struct DiscriminatorParams {
    int groups = 4;
    std::vector<Var<T>> weights;  // stride-2 3x3 convolutions
    std::vector<Var<T>> biases;
    std::vector<Var<T>> norm_gain;
    std::vector<Var<T>> norm_shift;
    Var<T> fc_weight;  // [1, C_d * h * w]
    Var<T> fc_bias;    // [1]

    static DiscriminatorParams init(int in_channels, int height, int width, int hidden, int depth, int groups, Rng& rng) {
        require(depth >= 1, "discriminator depth must be >= 1");
        require(hidden % groups == 0, "discriminator width must be divisible by the group count");
        const int unit = 1 << depth;
        if (height % unit != 0 || width % unit != 0)
            throw ValidationError("discriminator: resolution " + std::to_string(height) + "x" + std::to_string(width) +
                                  " incompatible with depth " + std::to_string(depth));
        DiscriminatorParams p;
        p.groups = groups;
        for (int l = 0; l < depth; ++l) {
            const int cin = l == 0 ? in_channels : hidden;
            p.weights.push_back(init_uniform_param<T>({hidden, cin, 3, 3}, cin * 9, rng));
            p.biases.push_back(init_uniform_param<T>({hidden}, cin * 9, rng));
            p.norm_gain.push_back(init_const_param<T>({hidden}, T(1)));
            p.norm_shift.push_back(init_const_param<T>({hidden}, T(0)));
        }
        const int flat = hidden * (height / unit) * (width / unit);
        p.fc_weight = init_uniform_param<T>({1, flat}, flat, rng);
        p.fc_bias = init_uniform_param<T>({1}, flat, rng);
        return p;
    }

    static DiscriminatorParams init(const ModelConfig& cfg, Rng& rng) {
        return init(cfg.channels, cfg.height, cfg.width, cfg.disc_width(), cfg.resolved_disc_depth(), cfg.disc_groups, rng);
    }

    std::size_t depth() const noexcept { return weights.size(); }

    ParamList<T> params(const std::string& prefix = "disc.") const {
        ParamList<T> out;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            const std::string n = prefix + "conv" + std::to_string(l + 1);
            out.add(n + ".weight", weights[l]);
            out.add(n + ".bias", biases[l]);
            out.add(n + ".gn_gain", norm_gain[l]);
            out.add(n + ".gn_shift", norm_shift[l]);
        }
        out.add(prefix + "fc.weight", fc_weight);
        out.add(prefix + "fc.bias", fc_bias);
        return out;
    }
};

template <typename T>
struct DiscriminatorOutput {
    Var<T> score;                 // [B], each in (0, 1)
    std::vector<Var<T>> features; // per conv layer, when captured
    Var<T> last_features;         // final conv feature map (always set)
};

template <typename T>
DiscriminatorOutput<T> discriminate(const Var<T>& frame, const DiscriminatorParams<T>& p, bool capture_features = false) {
    require(frame.value().rank() == 4, "discriminate: frame must be [B, C, H, W], got " + shape_str(frame.shape()));
    const int B = frame.dim(0);
    DiscriminatorOutput<T> out;
    Var<T> x = frame;
    for (std::size_t l = 0; l < p.depth(); ++l) {
        x = conv2d(x, p.weights[l], 2, 1);
        x = add_channel_bias(x, p.biases[l]);
        x = group_norm(x, p.groups, p.norm_gain[l], p.norm_shift[l]);
        x = leaky_relu(x, T(0.2));
        if (capture_features) out.features.push_back(x);
    }
    out.last_features = x;
    const int flat = static_cast<int>(x.numel()) / B;
    if (flat != p.fc_weight.dim(1))
        throw ValidationError("discriminate: frame " + shape_str(frame.shape()) + " yields " + std::to_string(flat) +
                              " features, fully-connected layer expects " + std::to_string(p.fc_weight.dim(1)));
    out.score = reshape(sigmoid(linear(reshape(x, {B, flat}), p.fc_weight, p.fc_bias)), {B});
    return out;
}

// ---------------------------------------------------------------------------
// Loss terms over a predicted window. Frames are [B, C, H, W] Vars; truth
// frames are constants.

template <typename T>
void check_window(const std::vector<Var<T>>& truth, const std::vector<Var<T>>& pred, const char* op) {
    if (truth.size() != pred.size())
        throw ValidationError(std::string(op) + ": " + std::to_string(truth.size()) + " truth frames vs " +
                              std::to_string(pred.size()) + " predicted frames");
    require(!pred.empty(), std::string(op) + ": empty frame window");
}

/// sum_t mean((v_t - v^_t)^2)
template <typename T>
Var<T> mse_loss(const std::vector<Var<T>>& truth, const std::vector<Var<T>>& pred) {
    check_window(truth, pred, "mse_loss");
    std::vector<Var<T>> terms;
    for (std::size_t t = 0; t < pred.size(); ++t) terms.push_back(mse(pred[t], truth[t]));
    return add_all(terms);
}

template <typename T>
void require_finite_scores(const Var<T>& s) {
    if (!s.value().all_finite()) throw NumericError("discriminator produced a non-finite score");
}

/// -sum_t mean_b log D(v^_t), from precomputed scores.
template <typename T>
Var<T> gan_loss_P_from_scores(const std::vector<Var<T>>& fake_scores) {
    require(!fake_scores.empty(), "gan_loss_P: empty frame window");
    const T eps = static_cast<T>(kLogClampEps);
    std::vector<Var<T>> terms;
    for (const auto& s : fake_scores) {
        require_finite_scores(s);
        terms.push_back(scale(mean(log_clamped(s, eps, T(1) - eps)), T(-1)));
    }
    return add_all(terms);
}

/// -sum_t mean_b [log D(v_t) + log(1 - D(v^_t))], from precomputed scores.
template <typename T>
Var<T> gan_loss_D_from_scores(const std::vector<Var<T>>& real_scores, const std::vector<Var<T>>& fake_scores) {
    check_window(real_scores, fake_scores, "gan_loss_D");
    const T eps = static_cast<T>(kLogClampEps);
    std::vector<Var<T>> terms;
    for (std::size_t t = 0; t < real_scores.size(); ++t) {
        require_finite_scores(real_scores[t]);
        require_finite_scores(fake_scores[t]);
        const Var<T> real = mean(log_clamped(real_scores[t], eps, T(1) - eps));
        const Var<T> fake = mean(log_clamped(one_minus(fake_scores[t]), eps, T(1) - eps));
        terms.push_back(scale(add(real, fake), T(-1)));
    }
    return add_all(terms);
}

template <typename T>
Var<T> gan_loss_P(const std::vector<Var<T>>& pred, const DiscriminatorParams<T>& disc) {
    std::vector<Var<T>> scores;
    for (const auto& f : pred) scores.push_back(discriminate(f, disc).score);
    return gan_loss_P_from_scores(scores);
}

template <typename T>
Var<T> gan_loss_D(const std::vector<Var<T>>& truth, const std::vector<Var<T>>& pred, const DiscriminatorParams<T>& disc) {
    check_window(truth, pred, "gan_loss_D");
    std::vector<Var<T>> real, fake;
    for (std::size_t t = 0; t < truth.size(); ++t) {
        real.push_back(discriminate(truth[t], disc).score);
        fake.push_back(discriminate(pred[t], disc).score);
    }
    return gan_loss_D_from_scores(real, fake);
}

/// sum_t mean((D_l(v_t) - D_l(v^_t))^2) on the last convolutional feature map.
template <typename T>
Var<T> lp_loss(const std::vector<Var<T>>& truth, const std::vector<Var<T>>& pred, const DiscriminatorParams<T>& disc) {
    check_window(truth, pred, "lp_loss");
    std::vector<Var<T>> terms;
    for (std::size_t t = 0; t < pred.size(); ++t)
        terms.push_back(mse(discriminate(truth[t], disc).last_features, discriminate(pred[t], disc).last_features));
    return add_all(terms);
}

struct LossBundle {
    double mse = 0;
    double gan_P = 0;
    double gan_D = 0;
    double lp = 0;
    double total = 0;
    double gamma1 = 0;
    double gamma2 = 0;
};

template <typename T>
struct TotalLoss {
    Var<T> total;
    LossBundle bundle;
};

inline void check_loss_weights(double gamma1, double gamma2) {
    if (!(gamma1 >= 0) || !(gamma2 >= 0))
        throw ValidationError("loss weights must be >= 0 (gamma1=" + std::to_string(gamma1) +
                              ", gamma2=" + std::to_string(gamma2) + ")");
}

/// total = mse + gamma1 * gan_P + gamma2 * lp. Zero-weight terms are left out of the graph.
template <typename T>
TotalLoss<T> total_loss(const Var<T>& mse_term, const Var<T>& gan_p_term, const Var<T>& lp_term, double gamma1,
                        double gamma2) {
    check_loss_weights(gamma1, gamma2);
    TotalLoss<T> out;
    out.total = mse_term;
    if (gamma1 != 0) out.total = axpy(out.total, static_cast<T>(gamma1), gan_p_term);
    if (gamma2 != 0) out.total = axpy(out.total, static_cast<T>(gamma2), lp_term);
    out.bundle.mse = static_cast<double>(mse_term.item());
    out.bundle.gan_P = static_cast<double>(gan_p_term.item());
    out.bundle.lp = static_cast<double>(lp_term.item());
    out.bundle.total = static_cast<double>(out.total.item());
    out.bundle.gamma1 = gamma1;
    out.bundle.gamma2 = gamma2;
    return out;
}

/// Scalar form of the same composition.
inline double compose_total(double mse_value, double gan_p_value, double lp_value, double gamma1, double gamma2) {
    check_loss_weights(gamma1, gamma2);
    return mse_value + gamma1 * gan_p_value + gamma2 * lp_value;
}

}  // namespace stip
