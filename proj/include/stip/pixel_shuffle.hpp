#pragma once

// Space-to-channel rearrangement. Channel order matches the common
// convention: out[c*p*p + i*p + j][h][w] = in[c][h*p + i][w*p + j].

#include "stip/autograd.hpp"

namespace stip {

namespace detail {

struct ShuffleGeometry {
    std::size_t lead = 1;  // product of dims before C
    int C = 0, H = 0, W = 0, p = 1;
};

/// Index of the fine (unshuffled-input) element for each coarse element, laid out in coarse order.
inline std::vector<std::size_t> shuffle_index(const ShuffleGeometry& g) {
    const int Hc = g.H / g.p, Wc = g.W / g.p, pp = g.p * g.p;
    std::vector<std::size_t> idx(g.lead * static_cast<std::size_t>(g.C) * g.H * g.W);
    std::size_t k = 0;
    for (std::size_t n = 0; n < g.lead; ++n)
        for (int c = 0; c < g.C; ++c)
            for (int ij = 0; ij < pp; ++ij) {
                const int i = ij / g.p, j = ij % g.p;
                for (int h = 0; h < Hc; ++h)
                    for (int w = 0; w < Wc; ++w)
                        idx[k++] = ((n * static_cast<std::size_t>(g.C) + static_cast<std::size_t>(c)) * g.H +
                                    static_cast<std::size_t>(h * g.p + i)) *
                                       g.W +
                                   static_cast<std::size_t>(w * g.p + j);
            }
    return idx;
}

}  // namespace detail

/// [..., C, H, W] -> [..., C*p*p, H/p, W/p]
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int p) {
    require(p >= 1, "pixel_unshuffle: patch must be >= 1");
    require(x.rank() >= 3, "pixel_unshuffle: expected [..., C, H, W], got " + shape_str(x.shape()));
    const int C = x.dim(-3), H = x.dim(-2), W = x.dim(-1);
    if (H % p != 0 || W % p != 0)
        throw ValidationError("pixel_unshuffle: spatial dims " + std::to_string(H) + "x" + std::to_string(W) +
                              " not divisible by patch " + std::to_string(p));
    detail::ShuffleGeometry g{x.numel() / (static_cast<std::size_t>(C) * H * W), C, H, W, p};
    Shape s = x.shape();
    s[s.size() - 3] = C * p * p;
    s[s.size() - 2] = H / p;
    s[s.size() - 1] = W / p;
    const auto idx = detail::shuffle_index(g);
    Tensor<T> y(s);
    for (std::size_t k = 0; k < idx.size(); ++k) y[k] = x[idx[k]];
    return y;
}

/// [..., C*p*p, H, W] -> [..., C, H*p, W*p]; exact inverse of pixel_unshuffle.
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int p) {
    require(p >= 1, "pixel_shuffle: patch must be >= 1");
    require(x.rank() >= 3, "pixel_shuffle: expected [..., C, H, W], got " + shape_str(x.shape()));
    const int Cp = x.dim(-3), Hc = x.dim(-2), Wc = x.dim(-1);
    if (Cp % (p * p) != 0)
        throw ValidationError("pixel_shuffle: channel count " + std::to_string(Cp) + " not divisible by patch^2 = " +
                              std::to_string(p * p));
    detail::ShuffleGeometry g{x.numel() / (static_cast<std::size_t>(Cp) * Hc * Wc), Cp / (p * p), Hc * p, Wc * p, p};
    Shape s = x.shape();
    s[s.size() - 3] = g.C;
    s[s.size() - 2] = g.H;
    s[s.size() - 1] = g.W;
    const auto idx = detail::shuffle_index(g);
    Tensor<T> y(s);
    for (std::size_t k = 0; k < idx.size(); ++k) y[idx[k]] = x[k];
    return y;
}

template <typename T>
Var<T> pixel_unshuffle(const Var<T>& x, int p) {
    auto xn = x.node();
    return detail::make_result<T>(pixel_unshuffle(x.value(), p), std::vector<Var<T>>{x}, x.requires_grad(),
                                  [xn, p](const Tensor<T>& g) {
                                      const Tensor<T> back = pixel_shuffle(g, p);
                                      auto& gx = xn->grad_buffer();
                                      for (std::size_t i = 0; i < back.numel(); ++i) gx[i] += back[i];
                                  });
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int p) {
    auto xn = x.node();
    return detail::make_result<T>(pixel_shuffle(x.value(), p), std::vector<Var<T>>{x}, x.requires_grad(),
                                  [xn, p](const Tensor<T>& g) {
                                      const Tensor<T> back = pixel_unshuffle(g, p);
                                      auto& gx = xn->grad_buffer();
                                      for (std::size_t i = 0; i < back.numel(); ++i) gx[i] += back[i];
                                  });
}

}  // namespace stip
