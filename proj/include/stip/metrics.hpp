#pragma once

// Frame quality metrics (MSE, PSNR, SSIM), discriminator-feature distance,
// and the rollout evaluation protocol.

#include <fstream>
#include <limits>
#include <map>

#include "stip/trainer.hpp"

namespace stip {

namespace detail {

template <typename A, typename B>
void check_frames(const Tensor<A>& truth, const Tensor<B>& pred, const char* op) {
    if (truth.shape() != pred.shape())
        throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(truth.shape()) + " vs " + shape_str(pred.shape()));
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace detail

/// Mean squared error with the prediction clamped to [0, 1].
template <typename A, typename B>
double frame_mse(const Tensor<A>& truth, const Tensor<B>& pred) {
    detail::check_frames(truth, pred, "frame_mse");
    double s = 0;
    for (std::size_t i = 0; i < truth.numel(); ++i) {
        const double d = static_cast<double>(truth[i]) - detail::clamp01(static_cast<double>(pred[i]));
        s += d * d;
    }
    return s / static_cast<double>(truth.numel());
}

inline double psnr_from_mse(double mse, double max_val = 1.0) {
    if (mse <= 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

/// 10 log10(max^2 / mse); identical frames give +inf.
template <typename A, typename B>
double psnr(const Tensor<A>& truth, const Tensor<B>& pred, double max_val = 1.0) {
    return psnr_from_mse(frame_mse(truth, pred), max_val);
}

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double max_val = 1.0;
};

inline std::vector<double> gaussian_kernel_1d(int size, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(size));
    const double c = (size - 1) / 2.0;
    double total = 0;
    for (int i = 0; i < size; ++i) {
        g[static_cast<std::size_t>(i)] = std::exp(-((i - c) * (i - c)) / (2 * sigma * sigma));
        total += g[static_cast<std::size_t>(i)];
    }
    for (auto& v : g) v /= total;
    return g;
}

/// Channel-mean grayscale of a [C, H, W] (or [H, W]) frame, clamped to [0, 1] when `clamp`.
template <typename A>
std::vector<double> to_gray(const Tensor<A>& f, bool clamp, int& H, int& W) {
    require(f.rank() == 3 || f.rank() == 2, "expected a [C, H, W] frame, got " + shape_str(f.shape()));
    const int C = f.rank() == 3 ? f.dim(0) : 1;
    H = f.dim(-2);
    W = f.dim(-1);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<double> g(plane, 0.0);
    for (int c = 0; c < C; ++c)
        for (std::size_t i = 0; i < plane; ++i) {
            const double v = static_cast<double>(f[static_cast<std::size_t>(c) * plane + i]);
            g[i] += clamp ? detail::clamp01(v) : v;
        }
    for (auto& v : g) v /= C;
    return g;
}

namespace detail {

/// Separable Gaussian filter, valid region only.
inline std::vector<double> filter_valid(const std::vector<double>& img, int H, int W, const std::vector<double>& k) {
    const int n = static_cast<int>(k.size());
    const int Ho = H - n + 1, Wo = W - n + 1;
    std::vector<double> rows(static_cast<std::size_t>(H) * Wo);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < Wo; ++x) {
            double s = 0;
            for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * img[static_cast<std::size_t>(y) * W + x + i];
            rows[static_cast<std::size_t>(y) * Wo + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(Ho) * Wo);
    for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x) {
            double s = 0;
            for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>(y + i) * Wo + x];
            out[static_cast<std::size_t>(y) * Wo + x] = s;
        }
    return out;
}

}  // namespace detail

/// Mean SSIM over the valid region, on channel-mean grayscale. The prediction is clamped to [0, 1].
template <typename A, typename B>
double ssim(const Tensor<A>& truth, const Tensor<B>& pred, const SsimOptions& o = {}) {
    detail::check_frames(truth, pred, "ssim");
    int H, W;
    const std::vector<double> x = to_gray(truth, false, H, W);
    const std::vector<double> y = to_gray(pred, true, H, W);
    if (H < o.window || W < o.window)
        throw ValidationError("ssim: frame " + std::to_string(H) + "x" + std::to_string(W) + " smaller than the " +
                              std::to_string(o.window) + "x" + std::to_string(o.window) + " window");
    const auto k = gaussian_kernel_1d(o.window, o.sigma);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, H, W, k);
    const auto my = detail::filter_valid(y, H, W, k);
    const auto sxx = detail::filter_valid(xx, H, W, k);
    const auto syy = detail::filter_valid(yy, H, W, k);
    const auto sxy = detail::filter_valid(xy, H, W, k);
    const double c1 = (o.k1 * o.max_val) * (o.k1 * o.max_val);
    const double c2 = (o.k2 * o.max_val) * (o.k2 * o.max_val);
    double total = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cov = sxy[i] - mx[i] * my[i];
        const double num = (2 * mx[i] * my[i] + c1) * (2 * cov + c2);
        const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
        total += num / den;
    }
    return total / static_cast<double>(mx.size());
}

/// Mean squared distance between the discriminator's last conv features of two
/// frames [C, H, W]. Reported alongside, not comparable to, LPIPS.
template <typename T, typename A, typename B>
double feature_distance(const Tensor<A>& truth, const Tensor<B>& pred, const DiscriminatorParams<T>& disc) {
    detail::check_frames(truth, pred, "feature_distance");
    NoGradGuard no_grad;
    Shape s = truth.shape();
    s.insert(s.begin(), 1);
    Tensor<T> a = truth.template cast<T>().reshaped(s);
    Tensor<T> b(s);
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] = static_cast<T>(detail::clamp01(static_cast<double>(pred[i])));
    const Var<T> fa = discriminate(constant(std::move(a)), disc).last_features;
    const Var<T> fb = discriminate(constant(std::move(b)), disc).last_features;
    return static_cast<double>(mse(fa, fb).item());
}

// ---------------------------------------------------------------------------
// Evaluation

struct MetricsRow {
    std::string sequence_id;
    int t = 0;  // 1-based index of the predicted frame within its sequence
    double mse = 0;
    double psnr = 0;
    double ssim = 0;
    double feat_dist = std::numeric_limits<double>::quiet_NaN();
};

struct MetricsAggregate {
    int t = 0;
    int count = 0;
    double mse = 0, psnr = 0, ssim = 0, feat_dist = 0;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;

    /// Means per predicted frame index, in increasing t.
    std::vector<MetricsAggregate> per_t() const {
        std::map<int, MetricsAggregate> acc;
        for (const auto& r : rows) {
            auto& a = acc[r.t];
            a.t = r.t;
            ++a.count;
            a.mse += r.mse;
            a.psnr += r.psnr;
            a.ssim += r.ssim;
            a.feat_dist += r.feat_dist;
        }
        std::vector<MetricsAggregate> out;
        for (auto& [t, a] : acc) {
            a.mse /= a.count;
            a.psnr /= a.count;
            a.ssim /= a.count;
            a.feat_dist /= a.count;
            out.push_back(a);
        }
        return out;
    }

    MetricsAggregate overall() const {
        MetricsAggregate a;
        for (const auto& r : rows) {
            ++a.count;
            a.mse += r.mse;
            a.psnr += r.psnr;
            a.ssim += r.ssim;
            a.feat_dist += r.feat_dist;
        }
        if (a.count) {
            a.mse /= a.count;
            a.psnr /= a.count;
            a.ssim /= a.count;
            a.feat_dist /= a.count;
        }
        return a;
    }
};

inline std::string format_metric(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

inline constexpr const char* kMetricsHeader = "sequence_id,t,mse,psnr,ssim,feat_dist";

inline void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << kMetricsHeader << '\n';
    for (const auto& r : report.rows)
        out << r.sequence_id << ',' << r.t << ',' << format_metric(r.mse) << ',' << format_metric(r.psnr) << ','
            << format_metric(r.ssim) << ',' << format_metric(r.feat_dist) << '\n';
}

/// Produces `horizon` frames [horizon, C, H, W] following the first
/// `input_horizon` frames of a sequence. Implementations must only look at
/// those context frames; test stubs may cheat.
using FramePredictor = std::function<Tensor<float>(const VideoSequence& seq, int input_horizon, int horizon)>;

/// Adapts a trained predictor to FramePredictor via autoregressive rollout.
template <typename T>
FramePredictor rollout_predictor(const Predictor<T>& model) {
    return [&model](const VideoSequence& seq, int input_horizon, int horizon) {
        Shape cs = seq.frames.shape();
        cs[0] = input_horizon;
        cs.insert(cs.begin(), 1);
        const Tensor<T> context = seq.frames.slice0(0, input_horizon).template cast<T>().reshaped(cs);
        Tensor<T> pred = rollout(model, context, horizon);
        Shape ps = pred.shape();
        ps.erase(ps.begin());
        return pred.reshaped(ps).template cast<float>();
    };
}

/// Rolls every sequence forward and scores each predicted frame.
template <typename T>
MetricsReport evaluate(const std::vector<VideoSequence>& data, int input_horizon, int horizon, const FramePredictor& predict,
                       const DiscriminatorParams<T>* disc) {
    require(input_horizon >= 1 && horizon >= 1, "evaluate: horizons must be >= 1");
    MetricsReport report;
    for (const auto& seq : data) {
        if (seq.length() < input_horizon + horizon)
            throw ValidationError("evaluate: sequence " + seq.sequence_id + " has " + std::to_string(seq.length()) +
                                  " frames, needs " + std::to_string(input_horizon + horizon));
        const Tensor<float> pred = predict(seq, input_horizon, horizon);
        Shape expect = seq.frames.shape();
        expect[0] = horizon;
        if (pred.shape() != expect)
            throw ValidationError("evaluate: predictor returned " + shape_str(pred.shape()) + ", expected " + shape_str(expect));
        for (int k = 0; k < horizon; ++k) {
            const Tensor<float> truth = seq.frames.index0(input_horizon + k);
            const Tensor<float> guess = pred.index0(k);
            MetricsRow row;
            row.sequence_id = seq.sequence_id;
            row.t = input_horizon + k + 1;
            row.mse = frame_mse(truth, guess);
            row.psnr = psnr_from_mse(row.mse);
            row.ssim = ssim(truth, guess);
            if (disc) row.feat_dist = feature_distance(truth, guess, *disc);
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

}  // namespace stip
