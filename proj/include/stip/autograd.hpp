#pragma once

// Minimal reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a handle to a graph node. Ops record a backward closure only when at
// least one input requires a gradient, so inference builds no graph.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stip/tensor.hpp"

namespace stip {

/// Thread-local switch for graph recording.
struct GradMode {
    static bool& enabled() {
        thread_local bool on = true;
        return on;
    }
};

/// Disables graph recording for its lifetime (inference).
class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::enabled() = false; }
    ~NoGradGuard() { GradMode::enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Tensor<T>&)> backward_fn;

    /// Gradient buffer, zero-initialized on first use.
    Tensor<T>& grad_buffer() {
        if (grad.numel() != value.numel() || grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
        return grad;
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : n_(std::make_shared<Node<T>>()) {
        n_->value = std::move(value);
        n_->requires_grad = requires_grad;
    }

    bool defined() const noexcept { return static_cast<bool>(n_); }
    const Tensor<T>& value() const { return n_->value; }
    Tensor<T>& mutable_value() { return n_->value; }
    const Tensor<T>& grad() const { return n_->grad_buffer(); }
    Tensor<T>& mutable_grad() { return n_->grad_buffer(); }
    bool requires_grad() const noexcept { return n_ && n_->requires_grad; }
    const Shape& shape() const { return n_->value.shape(); }
    int dim(int i) const { return n_->value.dim(i); }
    std::size_t numel() const { return n_->value.numel(); }
    T item() const {
        require(numel() == 1, "item() on tensor of shape " + shape_str(shape()));
        return n_->value[0];
    }

    void zero_grad() {
        if (n_) n_->grad = Tensor<T>();
    }

    /// Same value, cut from the graph.
    Var detach() const { return Var(n_->value, false); }

    const std::shared_ptr<Node<T>>& node() const noexcept { return n_; }

private:
    std::shared_ptr<Node<T>> n_;
};

template <typename T>
Var<T> constant(Tensor<T> v) {
    return Var<T>(std::move(v), false);
}

template <typename T>
Var<T> parameter(Tensor<T> v) {
    return Var<T>(std::move(v), true);
}

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Var<T>*> inputs) {
    return std::any_of(inputs.begin(), inputs.end(), [](const Var<T>* v) { return v->requires_grad(); });
}

template <typename T>
bool any_requires_grad(const std::vector<Var<T>>& inputs) {
    return std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
}

/// Wrap an op result; the backward closure is kept only when a gradient is needed.
template <typename T, typename Inputs>
Var<T> make_result(Tensor<T> value, const Inputs& inputs, bool needs_grad, std::function<void(const Tensor<T>&)> bw) {
    needs_grad = needs_grad && GradMode::enabled();
    Var<T> out(std::move(value), needs_grad);
    if (needs_grad) {
        for (const auto& in : inputs) out.node()->parents.push_back(in.node());
        out.node()->backward_fn = std::move(bw);
    }
    return out;
}

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

/// Run reverse accumulation from a scalar. Releases the graph afterwards.
template <typename T>
void backward(const Var<T>& root) {
    require(root.numel() == 1, "backward() requires a scalar root");
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(n->grad);
    }
    for (Node<T>* n : order) {
        if (n->backward_fn) {
            n->backward_fn = nullptr;
            n->parents.clear();
            n->grad = Tensor<T>();
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T, typename Fwd, typename Deriv>
Var<T> unary_op(const Var<T>& x, Fwd fwd, Deriv deriv) {
    Tensor<T> y(x.shape());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = fwd(xv[i]);
    auto xn = x.node();
    Var<T> out = detail::make_result<T>(std::move(y), std::vector<Var<T>>{x}, x.requires_grad(), nullptr);
    if (out.requires_grad()) {
        std::weak_ptr<Node<T>> self = out.node();
        out.node()->backward_fn = [xn, self, deriv](const Tensor<T>& g) {
            auto on = self.lock();
            auto& gx = xn->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * deriv(xn->value[i], on->value[i]);
        };
    }
    return out;
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    return unary_op(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
    return unary_op(
        x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

/// While alive, every leaky_relu appends the sign of each input to `signs`.
/// Finite-difference checks use it to spot probes that straddle the kink at 0.
class ActivationSignRecorder {
public:
    explicit ActivationSignRecorder(std::vector<bool>& signs) : prev_(current()) { current() = &signs; }
    ~ActivationSignRecorder() { current() = prev_; }
    ActivationSignRecorder(const ActivationSignRecorder&) = delete;
    ActivationSignRecorder& operator=(const ActivationSignRecorder&) = delete;

    static std::vector<bool>*& current() {
        thread_local std::vector<bool>* rec = nullptr;
        return rec;
    }

private:
    std::vector<bool>* prev_;
};

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
    if (auto* rec = ActivationSignRecorder::current())
        for (T v : x.value().vec()) rec->push_back(v > T(0));
    return unary_op(
        x, [slope](T v) { return v > T(0) ? v : slope * v; }, [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> scale(const Var<T>& x, T c) {
    return unary_op(
        x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

/// 1 - x
template <typename T>
Var<T> one_minus(const Var<T>& x) {
    return unary_op(
        x, [](T v) { return T(1) - v; }, [](T, T) { return T(-1); });
}

/// log(clamp(x, lo, hi)); zero gradient where the clamp is active.
template <typename T>
Var<T> log_clamped(const Var<T>& x, T lo, T hi) {
    return unary_op(
        x, [lo, hi](T v) { return std::log(std::clamp(v, lo, hi)); },
        [lo, hi](T v, T) { return (v < lo || v > hi) ? T(0) : T(1) / v; });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<T> y(a.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] + b.value()[i];
    const bool ng = detail::any_requires_grad<T>({&a, &b});
    auto an = a.node(), bn = b.node();
    return detail::make_result<T>(std::move(y), std::vector<Var<T>>{a, b}, ng, [an, bn](const Tensor<T>& g) {
        for (auto* n : {an.get(), bn.get()}) {
            if (!n->requires_grad) continue;
            auto& gb = n->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor<T> y(a.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] - b.value()[i];
    const bool ng = detail::any_requires_grad<T>({&a, &b});
    auto an = a.node(), bn = b.node();
    return detail::make_result<T>(std::move(y), std::vector<Var<T>>{a, b}, ng, [an, bn](const Tensor<T>& g) {
        if (an->requires_grad) {
            auto& ga = an->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<T> y(a.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * b.value()[i];
    const bool ng = detail::any_requires_grad<T>({&a, &b});
    auto an = a.node(), bn = b.node();
    return detail::make_result<T>(std::move(y), std::vector<Var<T>>{a, b}, ng, [an, bn](const Tensor<T>& g) {
        if (an->requires_grad) {
            auto& ga = an->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * an->value[i];
        }
    });
}

/// a + c * b
template <typename T>
Var<T> axpy(const Var<T>& a, T c, const Var<T>& b) {
    return add(a, scale(b, c));
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
    T s = 0;
    for (T v : x.value().vec()) s += v;
    auto xn = x.node();
    return detail::make_result<T>(Tensor<T>(Shape{}, s), std::vector<Var<T>>{x}, x.requires_grad(), [xn](const Tensor<T>& g) {
        auto& gx = xn->grad_buffer();
        for (auto& v : gx.vec()) v += g[0];
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Mean squared difference over all elements.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape(a, b, "mse");
    const std::size_t n = a.numel();
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    s /= static_cast<T>(n);
    const bool ng = detail::any_requires_grad<T>({&a, &b});
    auto an = a.node(), bn = b.node();
    return detail::make_result<T>(Tensor<T>(Shape{}, s), std::vector<Var<T>>{a, b}, ng, [an, bn, n](const Tensor<T>& g) {
        const T k = T(2) * g[0] / static_cast<T>(n);
        if (an->requires_grad) {
            auto& ga = an->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) ga[i] += k * (an->value[i] - bn->value[i]);
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) gb[i] -= k * (an->value[i] - bn->value[i]);
        }
    });
}

template <typename T>
Var<T> add_all(const std::vector<Var<T>>& terms) {
    require(!terms.empty(), "add_all of empty list");
    Var<T> acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return acc;
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Var<T> reshape(const Var<T>& x, Shape s) {
    Tensor<T> y = x.value().reshaped(std::move(s));
    auto xn = x.node();
    return detail::make_result<T>(std::move(y), std::vector<Var<T>>{x}, x.requires_grad(), [xn](const Tensor<T>& g) {
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    });
}

namespace detail {
inline void outer_inner(const Shape& s, int axis, std::size_t& outer, std::size_t& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
}
}  // namespace detail

/// Concatenate along `axis`; all other dims must match.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
    require(!xs.empty(), "concat of empty list");
    Shape s = xs.front().shape();
    require(axis >= 0 && axis < static_cast<int>(s.size()), "concat axis out of range");
    int total = 0;
    for (const auto& x : xs) {
        Shape o = x.shape();
        require(o.size() == s.size(), "concat rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d)
            if (static_cast<int>(d) != axis && o[d] != s[d])
                throw ValidationError("concat: shape mismatch " + shape_str(o) + " vs " + shape_str(s));
        total += o[static_cast<std::size_t>(axis)];
    }
    Shape os = s;
    os[static_cast<std::size_t>(axis)] = total;
    std::size_t outer, inner;
    detail::outer_inner(os, axis, outer, inner);
    Tensor<T> y(os);
    std::vector<int> widths;
    for (const auto& x : xs) widths.push_back(x.shape()[static_cast<std::size_t>(axis)]);
    {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            const std::size_t chunk = static_cast<std::size_t>(widths[k]) * inner;
            for (std::size_t o = 0; o < outer; ++o)
                std::copy_n(xs[k].value().data() + o * chunk, chunk, y.data() + o * total * inner + offset);
            offset += chunk;
        }
    }
    std::vector<std::shared_ptr<Node<T>>> nodes;
    for (const auto& x : xs) nodes.push_back(x.node());
    return detail::make_result<T>(std::move(y), xs, detail::any_requires_grad(xs),
                                  [nodes, widths, outer, inner, total](const Tensor<T>& g) {
                                      std::size_t offset = 0;
                                      for (std::size_t k = 0; k < nodes.size(); ++k) {
                                          const std::size_t chunk = static_cast<std::size_t>(widths[k]) * inner;
                                          if (nodes[k]->requires_grad) {
                                              auto& gk = nodes[k]->grad_buffer();
                                              for (std::size_t o = 0; o < outer; ++o) {
                                                  const T* src = g.data() + o * total * inner + offset;
                                                  T* dst = gk.data() + o * chunk;
                                                  for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                                              }
                                          }
                                          offset += chunk;
                                      }
                                  });
}

/// Elements [begin, end) along `axis`.
template <typename T>
Var<T> slice(const Var<T>& x, int axis, int begin, int end) {
    const Shape& s = x.shape();
    require(axis >= 0 && axis < static_cast<int>(s.size()), "slice axis out of range");
    const int len = s[static_cast<std::size_t>(axis)];
    require(0 <= begin && begin <= end && end <= len, "slice bounds out of range");
    Shape os = s;
    os[static_cast<std::size_t>(axis)] = end - begin;
    std::size_t outer, inner;
    detail::outer_inner(s, axis, outer, inner);
    const std::size_t chunk = static_cast<std::size_t>(end - begin) * inner;
    const std::size_t off = static_cast<std::size_t>(begin) * inner;
    const std::size_t stride = static_cast<std::size_t>(len) * inner;
    Tensor<T> y(os);
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(x.value().data() + o * stride + off, chunk, y.data() + o * chunk);
    auto xn = x.node();
    return detail::make_result<T>(std::move(y), std::vector<Var<T>>{x}, x.requires_grad(),
                                  [xn, outer, chunk, off, stride](const Tensor<T>& g) {
                                      auto& gx = xn->grad_buffer();
                                      for (std::size_t o = 0; o < outer; ++o)
                                          for (std::size_t i = 0; i < chunk; ++i) gx[o * stride + off + i] += g[o * chunk + i];
                                  });
}

/// y = x W^T + b for x [B, N], W [O, N], b [O] (b may be undefined).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    require(x.value().rank() == 2 && w.value().rank() == 2, "linear expects rank-2 input and weight");
    const int B = x.dim(0), N = x.dim(1), O = w.dim(0);
    require(w.dim(1) == N, "linear: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
    const bool has_bias = b.defined();
    if (has_bias) require(b.numel() == static_cast<std::size_t>(O), "linear: bias size mismatch");
    Tensor<T> y({B, O});
    for (int i = 0; i < B; ++i)
        for (int o = 0; o < O; ++o) {
            T acc = has_bias ? b.value()[static_cast<std::size_t>(o)] : T(0);
            for (int n = 0; n < N; ++n)
                acc += x.value()[static_cast<std::size_t>(i * N + n)] * w.value()[static_cast<std::size_t>(o * N + n)];
            y[static_cast<std::size_t>(i * O + o)] = acc;
        }
    std::vector<Var<T>> ins{x, w};
    if (has_bias) ins.push_back(b);
    auto xn = x.node(), wn = w.node();
    auto bn = has_bias ? b.node() : nullptr;
    return detail::make_result<T>(std::move(y), ins, detail::any_requires_grad(ins), [xn, wn, bn, B, N, O](const Tensor<T>& g) {
        for (int i = 0; i < B; ++i)
            for (int o = 0; o < O; ++o) {
                const T go = g[static_cast<std::size_t>(i * O + o)];
                if (bn && bn->requires_grad) bn->grad_buffer()[static_cast<std::size_t>(o)] += go;
                if (wn->requires_grad) {
                    auto& gw = wn->grad_buffer();
                    for (int n = 0; n < N; ++n)
                        gw[static_cast<std::size_t>(o * N + n)] += go * xn->value[static_cast<std::size_t>(i * N + n)];
                }
                if (xn->requires_grad) {
                    auto& gx = xn->grad_buffer();
                    for (int n = 0; n < N; ++n)
                        gx[static_cast<std::size_t>(i * N + n)] += go * wn->value[static_cast<std::size_t>(o * N + n)];
                }
            }
    });
}

}  // namespace stip
