#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "stip/autograd.hpp"

namespace stip {

using Rng = std::mt19937_64;

template <typename T>
struct NamedParam {
    std::string name;
    Var<T> var;
};

/// Ordered, named view over trainable tensors. Holds handles, not copies.
template <typename T>
class ParamList {
public:
    void add(std::string name, const Var<T>& v) {
        require(v.defined(), "ParamList: undefined parameter " + name);
        items_.push_back({std::move(name), v});
    }
    void append(const ParamList& other) { items_.insert(items_.end(), other.items_.begin(), other.items_.end()); }

    std::size_t size() const noexcept { return items_.size(); }
    const std::vector<NamedParam<T>>& items() const noexcept { return items_; }
    const NamedParam<T>& operator[](std::size_t i) const { return items_[i]; }
    NamedParam<T>& operator[](std::size_t i) { return items_[i]; }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }
    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }

    /// Total scalar count across all tensors.
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& p : items_) n += p.var.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : items_) p.var.zero_grad();
    }

    std::vector<Tensor<T>> snapshot() const {
        std::vector<Tensor<T>> out;
        for (const auto& p : items_) out.push_back(p.var.value());
        return out;
    }

private:
    std::vector<NamedParam<T>> items_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
template <typename T>
Var<T> init_uniform_param(Shape s, int fan_in, Rng& rng) {
    const T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
    return parameter(Tensor<T>::uniform(std::move(s), -bound, bound, rng));
}

template <typename T>
Var<T> init_const_param(Shape s, T v) {
    return parameter(Tensor<T>::full(std::move(s), v));
}

}  // namespace stip
