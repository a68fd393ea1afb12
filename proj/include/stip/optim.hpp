#pragma once

#include <cmath>
#include <vector>

#include "stip/params.hpp"

namespace stip {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // <= 0 disables global-norm clipping
};

/// Adam over a fixed ParamList. Each optimizer owns only its own parameters.
template <typename T>
class Adam {
public:
    Adam(ParamList<T> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
        for (const auto& p : params_) {
            m_.emplace_back(p.var.shape());
            v_.emplace_back(p.var.shape());
        }
    }

    /// Global L2 norm of the current gradients.
    double grad_norm() const {
        double s = 0;
        for (const auto& p : params_) {
            if (p.var.node()->grad.empty()) continue;
            for (T g : p.var.node()->grad.vec()) s += static_cast<double>(g) * static_cast<double>(g);
        }
        return std::sqrt(s);
    }

    void step() {
        const double norm = grad_norm();
        if (!std::isfinite(norm)) throw NumericError("Adam: non-finite gradient norm");
        const double clip = (opts_.clip_norm > 0 && norm > opts_.clip_norm) ? opts_.clip_norm / norm : 1.0;
        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& var = params_[i].var;
            if (var.node()->grad.empty()) continue;
            const auto& g = var.node()->grad;
            auto& w = var.mutable_value();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < w.numel(); ++k) {
                const double gk = static_cast<double>(g[k]) * clip;
                const double mk = opts_.beta1 * static_cast<double>(m[k]) + (1 - opts_.beta1) * gk;
                const double vk = opts_.beta2 * static_cast<double>(v[k]) + (1 - opts_.beta2) * gk * gk;
                m[k] = static_cast<T>(mk);
                v[k] = static_cast<T>(vk);
                w[k] = static_cast<T>(static_cast<double>(w[k]) - opts_.lr * (mk / bc1) / (std::sqrt(vk / bc2) + opts_.eps));
            }
        }
    }

    void zero_grad() { params_.zero_grad(); }

    const ParamList<T>& params() const noexcept { return params_; }
    std::vector<Tensor<T>>& first_moments() noexcept { return m_; }
    std::vector<Tensor<T>>& second_moments() noexcept { return v_; }
    const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
    const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }
    std::uint64_t steps() const noexcept { return t_; }
    void set_steps(std::uint64_t t) noexcept { t_ = t; }
    AdamOptions& options() noexcept { return opts_; }

private:
    ParamList<T> params_;
    AdamOptions opts_;
    std::vector<Tensor<T>> m_, v_;
    std::uint64_t t_ = 0;
};

}  // namespace stip
