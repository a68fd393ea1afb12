#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace stip;
using namespace stip::testing;

namespace {

std::vector<Var<double>> frames(std::initializer_list<std::uint64_t> seeds, Shape s = {2, 1, 16, 16}) {
    std::vector<Var<double>> out;
    for (auto seed : seeds) out.push_back(constant(random_tensor<double>(s, seed, 0, 1)));
    return out;
}

Var<double> scores(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return constant(Tensor<double>({n}, std::move(v)));
}

DiscriminatorParams<double> small_disc(std::uint64_t seed) {
    Rng rng(seed);
    return DiscriminatorParams<double>::init(1, 16, 16, 4, 2, 4, rng);
}

}  // namespace

TEST(Losses, GanHalfScores) {
    EXPECT_NEAR(gan_loss_P_from_scores<double>({scores({0.5})}).item(), 0.6931, 1e-4);
    EXPECT_DOUBLE_EQ(gan_loss_P_from_scores<double>({scores({0.5})}).item(), -std::log(0.5));
    EXPECT_NEAR(gan_loss_D_from_scores<double>({scores({0.5})}, {scores({0.5})}).item(), 1.3863, 1e-4);
    EXPECT_DOUBLE_EQ(gan_loss_D_from_scores<double>({scores({0.5})}, {scores({0.5})}).item(), -2 * std::log(0.5));
    const auto three = gan_loss_P_from_scores<double>({scores({0.5}), scores({0.5}), scores({0.5})}).item();
    EXPECT_NEAR(three, 3 * 0.6931, 3e-4);
}

TEST(Losses, PerfectDiscriminatorHasNearZeroLoss) {
    const double eps = kLogClampEps;
    const double v = gan_loss_D_from_scores<double>({scores({1 - eps})}, {scores({eps})}).item();
    EXPECT_GE(v, 0);
    EXPECT_LT(v, 1e-6);
    // Saturated scores stay finite through clamping.
    EXPECT_TRUE(std::isfinite(gan_loss_D_from_scores<double>({scores({0.0})}, {scores({1.0})}).item()));
    EXPECT_TRUE(std::isfinite(gan_loss_P_from_scores<double>({scores({0.0})}).item()));
}

TEST(Losses, GanPStrictlyDecreasingInScore) {
    double prev = std::numeric_limits<double>::infinity();
    for (double s = 0.05; s < 1; s += 0.05) {
        const double v = gan_loss_P_from_scores<double>({scores({s, 0.3})}).item();
        EXPECT_LT(v, prev);
        prev = v;
    }
}

TEST(Losses, NonFiniteScoreIsNumericError) {
    EXPECT_THROW(gan_loss_P_from_scores<double>({scores({std::nan("")})}), NumericError);
    EXPECT_THROW(gan_loss_D_from_scores<double>({scores({0.5})}, {scores({std::nan("")})}), NumericError);
}

TEST(Losses, MseExamples) {
    const auto a = constant(Tensor<double>({1, 1, 1, 1}, 0.0));
    const auto b = constant(Tensor<double>({1, 1, 1, 1}, 0.1));
    EXPECT_NEAR(mse_loss<double>({a}, {b}).item(), 0.01, 1e-15);
    const auto f = frames({1, 2, 3});
    EXPECT_EQ(mse_loss(f, f).item(), 0.0);
    EXPECT_THROW(mse_loss(f, frames({1, 2})), ValidationError);
}

TEST(Losses, MseMatchesTwoLoopOracle) {
    const auto t = frames({4, 5}), p = frames({6, 7});
    double expect = 0;
    for (std::size_t k = 0; k < 2; ++k) {
        double s = 0;
        for (std::size_t i = 0; i < t[k].numel(); ++i) s += std::pow(t[k].value()[i] - p[k].value()[i], 2);
        expect += s / static_cast<double>(t[k].numel());
    }
    EXPECT_NEAR(mse_loss(t, p).item(), expect, 1e-14);
}

TEST(Losses, TotalCompositionAtReferenceWeights) {
    EXPECT_DOUBLE_EQ(compose_total(1.0, 0.6931, 2.0, 0.010, 0.0010), 1.0 + 0.010 * 0.6931 + 0.0010 * 2.0);
    EXPECT_NEAR(compose_total(1.0, 0.6931, 2.0, 0.010, 0.0010), 1.00893, 1e-5);
    EXPECT_NEAR(compose_total(1.0, 0.6931, 2.0, 0.005, 0.0005), 1.00447, 1e-5);
    EXPECT_EQ(compose_total(1.0, 0.6931, 2.0, 0, 0), 1.0);
    EXPECT_THROW(compose_total(1, 1, 1, -0.1, 0), ValidationError);

    const auto l = total_loss(scores({1.0}), scores({0.6931}), scores({2.0}), 0.010, 0.0010);
    EXPECT_DOUBLE_EQ(l.total.item(), l.bundle.total);
    EXPECT_NEAR(l.bundle.total, 1.00893, 1e-5);
    EXPECT_EQ(total_loss(scores({1.0}), scores({0.6931}), scores({2.0}), 0, 0).total.item(), 1.0);
    EXPECT_THROW(total_loss(scores({1.0}), scores({0.6931}), scores({2.0}), 0.1, -1), ValidationError);
}

TEST(Discriminator, ZeroWeightsScoreHalf) {
    auto d = small_disc(1);
    for (auto& w : d.weights) w.mutable_value().fill(0);
    d.fc_weight.mutable_value().fill(0);
    d.fc_bias.mutable_value().fill(0);
    const auto out = discriminate(frames({8})[0], d, true);
    for (double s : out.score.value().vec()) EXPECT_EQ(s, 0.5);
    EXPECT_EQ(out.features.size(), 2u);
    EXPECT_EQ(out.last_features.shape(), (Shape{2, 4, 4, 4}));
}

TEST(Discriminator, ScoresStayInOpenUnitInterval) {
    const auto d = small_disc(2);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 20; ++i) {
        const auto x = constant(Tensor<double>::uniform({3, 1, 16, 16}, -5, 5, rng));
        for (double s : discriminate(x, d).score.value().vec()) {
            EXPECT_GT(s, 0);
            EXPECT_LT(s, 1);
        }
    }
}

TEST(Discriminator, MatchesDirectOracle) {
    const auto d = small_disc(4);
    const auto x = random_tensor<double>({1, 1, 16, 16}, 5, 0, 1);
    Tensor<double> h = x;
    for (std::size_t l = 0; l < d.depth(); ++l) {
        h = naive_conv2d(h, d.weights[l].value(), 2, 1);
        const int C = h.dim(1);
        const std::size_t inner = h.numel() / static_cast<std::size_t>(C);
        for (std::size_t i = 0; i < h.numel(); ++i) h[i] += d.biases[l].value()[i / inner];
        const int cpg = C / d.groups;
        for (int g = 0; g < d.groups; ++g) {
            const std::size_t base = static_cast<std::size_t>(g * cpg) * inner, n = static_cast<std::size_t>(cpg) * inner;
            double m = 0, v = 0;
            for (std::size_t i = 0; i < n; ++i) m += h[base + i];
            m /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) v += std::pow(h[base + i] - m, 2);
            v /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t c = (base + i) / inner;
                h[base + i] = leaky_d((h[base + i] - m) / std::sqrt(v + 1e-5) * d.norm_gain[l].value()[c] + d.norm_shift[l].value()[c]);
            }
        }
    }
    double z = d.fc_bias.value()[0];
    for (std::size_t i = 0; i < h.numel(); ++i) z += d.fc_weight.value()[i] * h[i];
    const auto out = discriminate(constant(x), d);
    EXPECT_NEAR(out.score.item(), sigmoid_d(z), 1e-12);
    EXPECT_LT(max_abs_diff(out.last_features.value(), h.reshaped(out.last_features.shape())), 1e-12);
}

TEST(Discriminator, IncompatibleResolution) {
    Rng rng(6);
    EXPECT_THROW(DiscriminatorParams<double>::init(1, 20, 20, 4, 3, 4, rng), ValidationError);
    const auto d = small_disc(7);
    EXPECT_THROW(discriminate(constant(Tensor<double>({1, 1, 32, 32})), d), ValidationError);
}

TEST(LpLoss, IdentitySymmetryAndZeroMap) {
    const auto d = small_disc(8);
    const auto a = frames({9, 10}), b = frames({11, 12});
    EXPECT_EQ(lp_loss(a, a, d).item(), 0.0);
    EXPECT_GT(lp_loss(a, b, d).item(), 0.0);
    EXPECT_DOUBLE_EQ(lp_loss(a, b, d).item(), lp_loss(b, a, d).item());
    auto z = small_disc(8);
    for (auto& w : z.weights) w.mutable_value().fill(0);
    for (auto& b2 : z.biases) b2.mutable_value().fill(0);
    EXPECT_EQ(lp_loss(a, b, z).item(), 0.0);
}

TEST(LossGradients, AllTermsAgainstFiniteDifferences) {
    const auto d = small_disc(13);
    std::vector<Var<double>> pred;
    for (std::uint64_t s : {14, 15}) pred.push_back(parameter(random_tensor<double>({2, 1, 16, 16}, s, 0, 1)));
    const auto truth = frames({16, 17});
    auto params = d.params().items();
    params.push_back({"pred0", pred[0]});
    params.push_back({"pred1", pred[1]});
    auto loss = [&] {
        return add_all<double>({mse_loss(truth, pred), scale(gan_loss_P(pred, d), 0.3), lp_loss(truth, pred, d),
                                scale(gan_loss_D(truth, pred, d), 0.2)});
    };
    const auto r = check_gradients(params, loss, 20, 1e-4, 18);
    EXPECT_GE(r.checked, 100);
    EXPECT_LT(r.worst_rel, 1e-4) << r.worst_where;
}
