#pragma once

// Convolution, transposed convolution and normalization ops on NCHW tensors.
// Convolutions lower to im2col + GEMM (Eigen), one sample at a time.

#include <Eigen/Core>

#include "stip/autograd.hpp"

namespace stip {

struct ConvGeometry {
    int channels, height, width;  // image side
    int kernel, stride, pad;
    int out_h, out_w;             // column grid
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
    const int k = g.kernel;
    const std::size_t cols = static_cast<std::size_t>(g.out_h) * g.out_w;
    for (int c = 0; c < g.channels; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                T* row = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * cols;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int ih = oh * g.stride - g.pad + ki;
                    T* dst = row + static_cast<std::size_t>(oh) * g.out_w;
                    if (ih < 0 || ih >= g.height) {
                        std::fill_n(dst, g.out_w, T(0));
                        continue;
                    }
                    const T* src = img + (static_cast<std::size_t>(c) * g.height + ih) * g.width;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int iw = ow * g.stride - g.pad + kj;
                        dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : T(0);
                    }
                }
            }
}

/// Scatter-add columns back onto the image (adjoint of im2col).
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
    const int k = g.kernel;
    const std::size_t cols = static_cast<std::size_t>(g.out_h) * g.out_w;
    for (int c = 0; c < g.channels; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const T* row = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * cols;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int ih = oh * g.stride - g.pad + ki;
                    if (ih < 0 || ih >= g.height) continue;
                    T* dst = img + (static_cast<std::size_t>(c) * g.height + ih) * g.width;
                    const T* src = row + static_cast<std::size_t>(oh) * g.out_w;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int iw = ow * g.stride - g.pad + kj;
                        if (iw >= 0 && iw < g.width) dst[iw] += src[ow];
                    }
                }
            }
}

}  // namespace detail

inline int conv_out_size(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

inline int conv_transpose_out_size(int in, int kernel, int stride, int pad, int out_pad) {
    return (in - 1) * stride - 2 * pad + kernel + out_pad;
}

/// x [B, Ci, H, W] * w [Co, Ci, k, k] -> [B, Co, Ho, Wo]. No bias.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int stride, int pad) {
    using Mat = detail::RowMat<T>;
    require(x.value().rank() == 4, "conv2d: input must be [B,C,H,W], got " + shape_str(x.shape()));
    require(w.value().rank() == 4 && w.dim(2) == w.dim(3), "conv2d: weight must be [Co,Ci,k,k], got " + shape_str(w.shape()));
    const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(0), k = w.dim(2);
    if (w.dim(1) != Ci)
        throw ValidationError("conv2d: weight " + shape_str(w.shape()) + " expects " + std::to_string(w.dim(1)) +
                              " input channels, input has " + std::to_string(Ci));
    const int Ho = conv_out_size(H, k, stride, pad), Wo = conv_out_size(W, k, stride, pad);
    require(Ho > 0 && Wo > 0, "conv2d: input " + shape_str(x.shape()) + " too small for kernel");
    const ConvGeometry g{Ci, H, W, k, stride, pad, Ho, Wo};
    const int K = Ci * k * k, N = Ho * Wo;

    Tensor<T> y({B, Co, Ho, Wo});
    std::vector<T> col(static_cast<std::size_t>(K) * N);
    Eigen::Map<const Mat> Wm(w.value().data(), Co, K);
    for (int b = 0; b < B; ++b) {
        detail::im2col(x.value().data() + static_cast<std::size_t>(b) * Ci * H * W, g, col.data());
        Eigen::Map<const Mat> C(col.data(), K, N);
        Eigen::Map<Mat> Y(y.data() + static_cast<std::size_t>(b) * Co * N, Co, N);
        Y.noalias() = Wm * C;
    }

    auto xn = x.node(), wn = w.node();
    return detail::make_result<T>(std::move(y), std::vector<Var<T>>{x, w}, detail::any_requires_grad<T>({&x, &w}),
                                  [xn, wn, g, B, Co, K, N](const Tensor<T>& gy) {
                                      using M = detail::RowMat<T>;
                                      const std::size_t in_sz = static_cast<std::size_t>(g.channels) * g.height * g.width;
                                      std::vector<T> col(static_cast<std::size_t>(K) * N);
                                      Eigen::Map<const M> Wm(wn->value.data(), Co, K);
                                      for (int b = 0; b < B; ++b) {
                                          Eigen::Map<const M> G(gy.data() + static_cast<std::size_t>(b) * Co * N, Co, N);
                                          if (wn->requires_grad) {
                                              detail::im2col(xn->value.data() + b * in_sz, g, col.data());
                                              Eigen::Map<const M> C(col.data(), K, N);
                                              Eigen::Map<M> GW(wn->grad_buffer().data(), Co, K);
                                              GW.noalias() += G * C.transpose();
                                          }
                                          if (xn->requires_grad) {
                                              Eigen::Map<M> C(col.data(), K, N);
                                              C.noalias() = Wm.transpose() * G;
                                              detail::col2im(col.data(), g, xn->grad_buffer().data() + b * in_sz);
                                          }
                                      }
                                  });
}

/// x [B, Ci, H, W], w [Ci, Co, k, k] -> [B, Co, (H-1)s-2p+k+op, ...]. No bias.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, int stride, int pad, int out_pad) {
    using Mat = detail::RowMat<T>;
    require(x.value().rank() == 4, "conv_transpose2d: input must be [B,C,H,W], got " + shape_str(x.shape()));
    require(w.value().rank() == 4 && w.dim(2) == w.dim(3),
            "conv_transpose2d: weight must be [Ci,Co,k,k], got " + shape_str(w.shape()));
    require(out_pad >= 0 && out_pad < stride, "conv_transpose2d: output padding must be < stride");
    const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = w.dim(1), k = w.dim(2);
    if (w.dim(0) != Ci)
        throw ValidationError("conv_transpose2d: weight " + shape_str(w.shape()) + " expects " + std::to_string(w.dim(0)) +
                              " input channels, input has " + std::to_string(Ci));
    const int Ho = conv_transpose_out_size(H, k, stride, pad, out_pad);
    const int Wo = conv_transpose_out_size(W, k, stride, pad, out_pad);
    require(Ho > 0 && Wo > 0, "conv_transpose2d: empty output");
    // Geometry of the equivalent forward convolution from output image to the input grid.
    const ConvGeometry g{Co, Ho, Wo, k, stride, pad, H, W};
    const int K = Co * k * k, N = H * W;

    Tensor<T> y({B, Co, Ho, Wo});
    std::vector<T> col(static_cast<std::size_t>(K) * N);
    Eigen::Map<const Mat> Wm(w.value().data(), Ci, K);
    for (int b = 0; b < B; ++b) {
        Eigen::Map<const Mat> X(x.value().data() + static_cast<std::size_t>(b) * Ci * N, Ci, N);
        Eigen::Map<Mat> C(col.data(), K, N);
        C.noalias() = Wm.transpose() * X;
        detail::col2im(col.data(), g, y.data() + static_cast<std::size_t>(b) * Co * Ho * Wo);
    }

    auto xn = x.node(), wn = w.node();
    return detail::make_result<T>(std::move(y), std::vector<Var<T>>{x, w}, detail::any_requires_grad<T>({&x, &w}),
                                  [xn, wn, g, B, Ci, K, N](const Tensor<T>& gy) {
                                      using M = detail::RowMat<T>;
                                      const std::size_t out_sz = static_cast<std::size_t>(g.channels) * g.height * g.width;
                                      std::vector<T> col(static_cast<std::size_t>(K) * N);
                                      Eigen::Map<const M> Wm(wn->value.data(), Ci, K);
                                      for (int b = 0; b < B; ++b) {
                                          detail::im2col(gy.data() + b * out_sz, g, col.data());
                                          Eigen::Map<const M> C(col.data(), K, N);
                                          if (xn->requires_grad) {
                                              Eigen::Map<M> GX(xn->grad_buffer().data() + static_cast<std::size_t>(b) * Ci * N, Ci, N);
                                              GX.noalias() += Wm * C;
                                          }
                                          if (wn->requires_grad) {
                                              Eigen::Map<const M> X(xn->value.data() + static_cast<std::size_t>(b) * Ci * N, Ci, N);
                                              Eigen::Map<M> GW(wn->grad_buffer().data(), Ci, K);
                                              GW.noalias() += X * C.transpose();
                                          }
                                      }
                                  });
}

/// Adds b[c] to every element of channel c of x [B, C, ...].
template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& b) {
    require(x.value().rank() >= 2, "add_channel_bias: input rank must be >= 2");
    const int B = x.dim(0), C = x.dim(1);
    require(b.numel() == static_cast<std::size_t>(C), "add_channel_bias: bias size " + std::to_string(b.numel()) +
                                                          " does not match channel count " + std::to_string(C));
    const std::size_t inner = x.numel() / (static_cast<std::size_t>(B) * C);
    Tensor<T> y = x.value();
    for (int n = 0; n < B; ++n)
        for (int c = 0; c < C; ++c) {
            T* p = y.data() + (static_cast<std::size_t>(n) * C + c) * inner;
            const T bc = b.value()[static_cast<std::size_t>(c)];
            for (std::size_t i = 0; i < inner; ++i) p[i] += bc;
        }
    auto xn = x.node(), bn = b.node();
    return detail::make_result<T>(std::move(y), std::vector<Var<T>>{x, b}, detail::any_requires_grad<T>({&x, &b}),
                                  [xn, bn, B, C, inner](const Tensor<T>& g) {
                                      if (xn->requires_grad) {
                                          auto& gx = xn->grad_buffer();
                                          for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
                                      }
                                      if (bn->requires_grad) {
                                          auto& gb = bn->grad_buffer();
                                          for (int n = 0; n < B; ++n)
                                              for (int c = 0; c < C; ++c) {
                                                  const T* p = g.data() + (static_cast<std::size_t>(n) * C + c) * inner;
                                                  T s = 0;
                                                  for (std::size_t i = 0; i < inner; ++i) s += p[i];
                                                  gb[static_cast<std::size_t>(c)] += s;
                                              }
                                      }
                                  });
}

/// Group normalization over x [B, C, ...] with per-channel affine gain/shift.
/// groups == 1 is layer normalization over (C, H, W).
template <typename T>
Var<T> group_norm(const Var<T>& x, int groups, const Var<T>& gain, const Var<T>& shift, T eps = T(1e-5)) {
    require(x.value().rank() >= 2, "group_norm: input rank must be >= 2");
    const int B = x.dim(0), C = x.dim(1);
    require(groups >= 1 && C % groups == 0,
            "group_norm: channel count " + std::to_string(C) + " not divisible by " + std::to_string(groups) + " groups");
    require(gain.numel() == static_cast<std::size_t>(C) && shift.numel() == static_cast<std::size_t>(C),
            "group_norm: affine parameter size mismatch");
    const std::size_t inner = x.numel() / (static_cast<std::size_t>(B) * C);
    const int cpg = C / groups;
    const std::size_t n = static_cast<std::size_t>(cpg) * inner;

    Tensor<T> xhat(x.shape());
    std::vector<T> rstd(static_cast<std::size_t>(B) * groups);
    Tensor<T> y(x.shape());
    for (int b = 0; b < B; ++b)
        for (int gi = 0; gi < groups; ++gi) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + static_cast<std::size_t>(gi) * cpg) * inner;
            const T* px = x.value().data() + base;
            T m = 0;
            for (std::size_t i = 0; i < n; ++i) m += px[i];
            m /= static_cast<T>(n);
            T v = 0;
            for (std::size_t i = 0; i < n; ++i) v += (px[i] - m) * (px[i] - m);
            v /= static_cast<T>(n);
            const T r = T(1) / std::sqrt(v + eps);
            rstd[static_cast<std::size_t>(b * groups + gi)] = r;
            for (std::size_t i = 0; i < n; ++i) {
                const int c = gi * cpg + static_cast<int>(i / inner);
                const T xh = (px[i] - m) * r;
                xhat[base + i] = xh;
                y[base + i] = xh * gain.value()[static_cast<std::size_t>(c)] + shift.value()[static_cast<std::size_t>(c)];
            }
        }

    auto xn = x.node(), gn = gain.node(), sn = shift.node();
    return detail::make_result<T>(
        std::move(y), std::vector<Var<T>>{x, gain, shift}, detail::any_requires_grad<T>({&x, &gain, &shift}),
        [xn, gn, sn, xhat = std::move(xhat), rstd = std::move(rstd), B, C, groups, cpg, inner, n](const Tensor<T>& g) {
            for (int b = 0; b < B; ++b)
                for (int gi = 0; gi < groups; ++gi) {
                    const std::size_t base = (static_cast<std::size_t>(b) * C + static_cast<std::size_t>(gi) * cpg) * inner;
                    T sum_d = 0, sum_dx = 0;
                    for (std::size_t i = 0; i < n; ++i) {
                        const int c = gi * cpg + static_cast<int>(i / inner);
                        const T gy = g[base + i];
                        if (sn->requires_grad) sn->grad_buffer()[static_cast<std::size_t>(c)] += gy;
                        if (gn->requires_grad) gn->grad_buffer()[static_cast<std::size_t>(c)] += gy * xhat[base + i];
                        const T d = gy * gn->value[static_cast<std::size_t>(c)];
                        sum_d += d;
                        sum_dx += d * xhat[base + i];
                    }
                    if (!xn->requires_grad) continue;
                    auto& gx = xn->grad_buffer();
                    const T r = rstd[static_cast<std::size_t>(b * groups + gi)];
                    const T inv_n = T(1) / static_cast<T>(n);
                    for (std::size_t i = 0; i < n; ++i) {
                        const int c = gi * cpg + static_cast<int>(i / inner);
                        const T d = g[base + i] * gn->value[static_cast<std::size_t>(c)];
                        gx[base + i] += r * (d - inv_n * sum_d - xhat[base + i] * inv_n * sum_dx);
                    }
                }
        });
}

}  // namespace stip
