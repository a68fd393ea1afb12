#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "test_support.hpp"

using namespace stip;
using namespace stip::testing;
namespace fs = std::filesystem;

namespace {

/// Direct 2-D sliding-window SSIM with an explicitly built 11x11 Gaussian.
double ssim_reference(const Tensor<double>& x, const Tensor<double>& y) {
    const int H = x.dim(1), W = x.dim(2), n = 11;
    double w[11][11], wsum = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
            wsum += w[i][j];
        }
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0;
    int count = 0;
    for (int r = 0; r + n <= H; ++r)
        for (int c = 0; c + n <= W; ++c) {
            double mx = 0, my = 0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    const double k = w[i][j] / wsum;
                    mx += k * x.at({0, r + i, c + j});
                    my += k * y.at({0, r + i, c + j});
                }
            double vx = 0, vy = 0, cov = 0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    const double k = w[i][j] / wsum;
                    const double dx = x.at({0, r + i, c + j}) - mx, dy = y.at({0, r + i, c + j}) - my;
                    vx += k * dx * dx;
                    vy += k * dy * dy;
                    cov += k * dx * dy;
                }
            total += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    return total / count;
}

std::vector<VideoSequence> small_set(int n = 3, int T = 8) {
    std::vector<VideoSequence> out;
    for (int i = 0; i < n; ++i) out.push_back(generate_sequence(i, T, 32, 32, 2, 21));
    return out;
}

FramePredictor perfect_stub() {
    return [](const VideoSequence& s, int in, int h) { return s.frames.slice0(in, in + h); };
}

FramePredictor black_stub() {
    return [](const VideoSequence& s, int, int h) {
        Shape sh = s.frames.shape();
        sh[0] = h;
        return Tensor<float>(sh);
    };
}

}  // namespace

TEST(Psnr, AnalyticValues) {
    Tensor<double> a({1, 4, 4}, 0.5), b({1, 4, 4}, 0.6);
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
    EXPECT_TRUE(std::isinf(psnr(a, a)));
    EXPECT_EQ(format_metric(psnr(a, a)), "inf");
    EXPECT_THROW(psnr(a, Tensor<double>({1, 4, 5})), ValidationError);
}

TEST(Psnr, MatchesBruteForceAccumulation) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto x = random_tensor<double>({3, 9, 7}, seed, 0, 1);
        const auto y = random_tensor<double>({3, 9, 7}, seed + 100, -0.2, 1.2);
        double s = 0;
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 9; ++i)
                for (int j = 0; j < 7; ++j) {
                    const double p = std::min(1.0, std::max(0.0, y.at({c, i, j})));
                    s += (x.at({c, i, j}) - p) * (x.at({c, i, j}) - p);
                }
        EXPECT_NEAR(psnr(x, y), 10 * std::log10(1.0 / (s / (3 * 9 * 7))), 1e-9);
    }
}

TEST(Psnr, StrictlyDecreasingInMse) {
    double prev = std::numeric_limits<double>::infinity();
    for (double m = 1e-6; m < 1; m *= 1.7) {
        EXPECT_LT(psnr_from_mse(m), prev);
        prev = psnr_from_mse(m);
    }
}

TEST(Ssim, IdentityIsExactlyOne) {
    const auto x = random_tensor<double>({1, 24, 24}, 1, 0, 1);
    EXPECT_EQ(ssim(x, x), 1.0);
}

TEST(Ssim, NegativeImageIsAnticorrelated) {
    Tensor<double> x({1, 32, 32}), y({1, 32, 32});
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j) {
            x.at({0, i, j}) = ((i / 2 + j / 2) % 2) ? 1.0 : 0.0;
            y.at({0, i, j}) = 1.0 - x.at({0, i, j});
        }
    EXPECT_LT(ssim(x, y), 0.0);
}

TEST(Ssim, MatchesSlidingWindowReference) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto x = random_tensor<double>({1, 20, 23}, seed, 0, 1);
        const auto y = random_tensor<double>({1, 20, 23}, seed + 50, 0, 1);
        EXPECT_NEAR(ssim(x, y), ssim_reference(x, y), 1e-6);
    }
}

TEST(Ssim, SymmetricAndBounded) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_tensor<double>({2, 16, 16}, rng(), 0, 1);
        const auto y = random_tensor<double>({2, 16, 16}, rng(), 0, 1);
        const double a = ssim(x, y), b = ssim(y, x);
        EXPECT_NEAR(a, b, 1e-12);
        EXPECT_GE(a, -1.0);
        EXPECT_LE(a, 1.0);
    }
}

TEST(Ssim, RejectsFramesSmallerThanWindow) {
    Tensor<double> x({1, 10, 32});
    EXPECT_THROW(ssim(x, x), ValidationError);
}

TEST(Evaluate, PerfectStubScoresExactly) {
    const auto data = small_set();
    const auto r = evaluate<float>(data, 4, 3, perfect_stub(), nullptr);
    ASSERT_EQ(r.rows.size(), 9u);
    for (const auto& row : r.rows) {
        EXPECT_EQ(row.mse, 0.0);
        EXPECT_EQ(row.ssim, 1.0);
        EXPECT_TRUE(std::isinf(row.psnr));
        EXPECT_TRUE(std::isnan(row.feat_dist));
    }
    const auto per_t = r.per_t();
    ASSERT_EQ(per_t.size(), 3u);
    EXPECT_EQ(per_t[0].t, 5);
    EXPECT_EQ(per_t[2].t, 7);
    EXPECT_EQ(per_t[1].count, 3);
}

TEST(Evaluate, BlackStubMatchesHandComputedValues) {
    const auto data = small_set(2);
    const auto r = evaluate<float>(data, 4, 2, black_stub(), nullptr);
    for (const auto& row : r.rows) {
        const auto& seq = row.sequence_id == data[0].sequence_id ? data[0] : data[1];
        const Tensor<float> f = seq.frames.index0(row.t - 1);
        double s = 0;
        for (float v : f.vec()) s += static_cast<double>(v) * v;
        const double mse = s / static_cast<double>(f.numel());
        EXPECT_NEAR(row.mse, mse, 1e-12);
        EXPECT_NEAR(row.psnr, -10 * std::log10(mse), 1e-9);

        Tensor<double> gray({1, 32, 32});
        for (std::size_t i = 0; i < gray.numel(); ++i) gray[i] = f[i];
        const double ref = ssim_reference(gray, Tensor<double>({1, 32, 32}));
        EXPECT_NEAR(row.ssim, ref, 1e-9);
        EXPECT_GT(row.ssim, 0);
    }
}

TEST(Evaluate, CsvHasOneRowPerSequenceAndStep) {
    const auto data = small_set(3);
    Rng rng(4);
    const auto disc = DiscriminatorParams<float>::init(1, 32, 32, 4, 3, 4, rng);
    const auto r = evaluate<float>(data, 4, 4, perfect_stub(), &disc);
    for (const auto& row : r.rows) EXPECT_EQ(row.feat_dist, 0.0);
    const fs::path p = fs::temp_directory_path() / ("stip_metrics_" + std::to_string(::getpid()) + ".csv");
    write_metrics_csv(p, r);
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "sequence_id,t,mse,psnr,ssim,feat_dist");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        EXPECT_NE(line.find(",inf,"), std::string::npos);
    }
    EXPECT_EQ(rows, 3 * 4);
    fs::remove(p);
}

TEST(Evaluate, ShortSequenceAndBadPredictor) {
    const auto data = small_set(1, 5);
    EXPECT_THROW(evaluate<float>(data, 4, 2, perfect_stub(), nullptr), ValidationError);
    const FramePredictor wrong = [](const VideoSequence& s, int, int) { return s.frames.slice0(0, 1); };
    EXPECT_THROW(evaluate<float>(data, 3, 2, wrong, nullptr), ValidationError);
}

TEST(FeatureDistance, ZeroAtIdentityPositiveOtherwise) {
    Rng rng(5);
    const auto disc = DiscriminatorParams<double>::init(1, 16, 16, 4, 2, 4, rng);
    const auto a = random_tensor<float>({1, 16, 16}, 1, 0, 1);
    const auto b = random_tensor<float>({1, 16, 16}, 2, 0, 1);
    EXPECT_EQ(feature_distance(a, a, disc), 0.0);
    EXPECT_GT(feature_distance(a, b, disc), 0.0);
}

TEST(Complexity, ReferenceUnitAtSixteenSquaredMap) {
    const auto r = stgru_complexity(128, 5, 16, 16);
    EXPECT_EQ(r.params, 3276800u);
    EXPECT_EQ(r.closed_form_params, r.params);
    EXPECT_EQ(r.macs, 838860800.0);
    EXPECT_NEAR(static_cast<double>(r.params) / 3.14e6, 1.0, 0.10);
    EXPECT_NEAR(r.macs / 0.79e9, 1.0, 0.15);
    EXPECT_FALSE(r.assumptions.empty());
    const auto j = r.to_json();
    EXPECT_EQ(j.at("params").get<std::size_t>(), 3276800u);
    EXPECT_TRUE(j.at("assumptions").is_array());
}

TEST(Complexity, UnitCases) {
    EXPECT_EQ(stgru_complexity(1, 1, 1, 1).params, 8u);
    EXPECT_EQ((ConvSpec{"x", 1, 1, 1, 1, 1}.macs()), 1.0);
    EXPECT_EQ((ConvSpec{"fusion", 128, 64, 1, 1, 1}.macs()), 8192.0);
    EXPECT_THROW(stgru_complexity(4, 4, 8, 8), ValidationError);
}

TEST(Complexity, ClosedFormEqualsEnumerationForEveryOption) {
    for (int h : {1, 3, 16})
        for (int k : {1, 3, 5})
            for (bool ln : {false, true})
                for (bool bias : {false, true}) {
                    const auto r = stgru_complexity(h, k, 4, 4, ln, bias);
                    EXPECT_EQ(r.params, r.closed_form_params) << h << " " << k << " " << ln << " " << bias;
                }
}

TEST(Complexity, FusionHeadParams) {
    Rng rng(1);
    ModelConfig c;
    c.height = c.width = 64;
    c.hidden = 64;
    c.layers = 1;
    c.kernel_hidden = 3;
    c.enc_depth = 2;
    Predictor<float> p(c, rng);
    EXPECT_EQ(p.fusion_weight().numel(), 8192u);
}

TEST(Complexity, ScalingLaws) {
    const auto base = stgru_complexity(8, 3, 8, 8);
    EXPECT_EQ(stgru_complexity(8, 3, 16, 16).macs, 4 * base.macs);
    EXPECT_EQ(stgru_complexity(8, 3, 16, 8).macs, 2 * base.macs);
    EXPECT_EQ(stgru_complexity(16, 3, 8, 8).macs, 4 * base.macs);
    EXPECT_EQ(stgru_complexity(8, 3, 16, 16).params, base.params);
    EXPECT_EQ(stgru_complexity(8, 3, 16, 16).elementwise_total(), 4 * base.elementwise_total());
}
