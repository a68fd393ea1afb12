#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stip/errors.hpp"

namespace stip {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense row-major tensor with value semantics.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
        for (int d : shape_) require(d >= 0, "negative tensor dimension in " + shape_str(shape_));
    }
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        require(data_.size() == shape_numel(shape_),
                "tensor data size " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }

    template <typename Rng>
    static Tensor uniform(Shape s, T lo, T hi, Rng& rng) {
        Tensor t(std::move(s));
        std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
        for (auto& v : t.data_) v = static_cast<T>(dist(rng));
        return t;
    }

    template <typename Rng>
    static Tensor normal(Shape s, T mean, T stddev, Rng& rng) {
        Tensor t(std::move(s));
        std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
        for (auto& v : t.data_) v = static_cast<T>(dist(rng));
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? static_cast<int>(shape_.size()) + i : i)); }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> span() noexcept { return data_; }
    std::span<const T> span() const noexcept { return data_; }
    std::vector<T>& vec() noexcept { return data_; }
    const std::vector<T>& vec() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
    const T& at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

    Tensor reshaped(Shape s) const {
        require(shape_numel(s) == numel(), "cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
        return Tensor(std::move(s), data_);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

    /// Slice [begin, end) along the leading axis.
    Tensor slice0(int begin, int end) const {
        require(rank() >= 1 && 0 <= begin && begin <= end && end <= shape_[0], "slice0 out of range");
        Shape s = shape_;
        s[0] = end - begin;
        const std::size_t inner = numel() / static_cast<std::size_t>(std::max(shape_[0], 1));
        return Tensor(s, std::vector<T>(data_.begin() + static_cast<std::ptrdiff_t>(begin * inner),
                                        data_.begin() + static_cast<std::ptrdiff_t>(end * inner)));
    }

    /// Element i of the leading axis, with that axis dropped.
    Tensor index0(int i) const {
        Tensor t = slice0(i, i + 1);
        Shape s(shape_.begin() + 1, shape_.end());
        return t.reshaped(s);
    }

private:
    std::size_t offset(std::initializer_list<int> idx) const {
        require(idx.size() == shape_.size(), "index rank mismatch");
        std::size_t off = 0;
        std::size_t k = 0;
        for (int i : idx) {
            if (i < 0 || i >= shape_[k]) throw IndexError("tensor index out of range");
            off = off * static_cast<std::size_t>(shape_[k]) + static_cast<std::size_t>(i);
            ++k;
        }
        return off;
    }

    Shape shape_;
    std::vector<T> data_;
};

/// Stack equally-shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack0(const std::vector<Tensor<T>>& parts) {
    require(!parts.empty(), "stack0 of empty list");
    Shape s = parts.front().shape();
    for (const auto& p : parts) require(p.shape() == s, "stack0 shape mismatch");
    std::vector<T> data;
    data.reserve(parts.size() * parts.front().numel());
    for (const auto& p : parts) data.insert(data.end(), p.vec().begin(), p.vec().end());
    s.insert(s.begin(), static_cast<int>(parts.size()));
    return Tensor<T>(std::move(s), std::move(data));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

}  // namespace stip
