#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "crisp/allocation.hpp"
#include "crisp/ops.hpp"
#include "support/eigen_bridge.hpp"
#include "support/gradcheck.hpp"

using namespace crisp;
using crisp::testing::random_tensor;

namespace {

// Independent oracle: the projection is clamp(clip(v) + lambda); find lambda
// by bisection on the monotone sum.
std::vector<double> bisection_projection(const std::vector<double>& v, double lo, double hi) {
    auto total = [&](double lam) {
        double s = 0.0;
        for (double x : v) s += std::clamp(std::clamp(x, lo, hi) + lam, lo, hi);
        return s;
    };
    double a = -1.0, b = 1.0;
    for (int it = 0; it < 200; ++it) {
        double m = 0.5 * (a + b);
        (total(m) < 1.0 ? a : b) = m;
    }
    const double lam = 0.5 * (a + b);
    std::vector<double> out;
    for (double x : v) out.push_back(std::clamp(std::clamp(x, lo, hi) + lam, lo, hi));
    return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST(Projection, FeasibleInputUnchanged) {
    std::vector<double> w(13, 1.0 / 13.0);
    EXPECT_EQ(project_constraints(w), w);
    std::vector<double> v{0.25, 0.25, 0.25, 0.05, 0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.04};
    ASSERT_NEAR(std::accumulate(v.begin(), v.end(), 0.0), 1.0, 1e-15);
    EXPECT_LT(max_abs_diff(project_constraints(v), v), 1e-15);
}

TEST(Projection, PointMassSpreadsRemainder) {
    std::vector<double> w(13, 0.0);
    w[0] = 1.0;
    auto p = project_constraints(w);
    EXPECT_DOUBLE_EQ(p[0], 0.25);
    for (std::size_t i = 1; i < 13; ++i) {
        EXPECT_NEAR(p[i], 0.0625, 1e-15);
        EXPECT_GE(p[i], 0.02);
    }
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-15);
}

TEST(Projection, MatchesBisectionOracleAndIsIdempotent) {
    std::mt19937_64 rng(1);
    std::exponential_distribution<double> e(1.0);
    std::uniform_int_distribution<int> sharp(1, 6);
    for (int rep = 0; rep < 2000; ++rep) {
        std::vector<double> v(13);
        const int k = sharp(rng);
        for (auto& x : v) x = std::pow(e(rng), k);
        const double s = std::accumulate(v.begin(), v.end(), 0.0);
        for (auto& x : v) x /= s;
        auto p = project_constraints(v);
        EXPECT_LT(max_abs_diff(p, bisection_projection(v, 0.02, 0.25)), 1e-12);
        EXPECT_TRUE(WeightBounds{}.feasible(p, 1e-12));
        EXPECT_LT(max_abs_diff(project_constraints(p), p), 1e-12);
    }
}

TEST(Projection, InfeasibleBoundsAreConfigErrors) {
    EXPECT_THROW(project_constraints(std::vector<double>(3, 1.0 / 3.0)), ConfigError);  // 3 * 0.25 < 1
    EXPECT_THROW(WeightBounds{}.validate(60), ConfigError);                               // 60 * 0.02 > 1
    EXPECT_NO_THROW(WeightBounds{}.validate(13));
    EXPECT_THROW((WeightBounds{0.3, 0.2}.validate(4)), ConfigError);
}

TEST(Projection, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(2);
    std::exponential_distribution<double> e(1.0);
    int checked = 0;
    for (int rep = 0; rep < 30; ++rep) {
        std::vector<double> v(13);
        for (auto& x : v) x = std::pow(e(rng), 3.0);
        const double s = std::accumulate(v.begin(), v.end(), 0.0);
        for (auto& x : v) x /= s;
        // Keep clear of the kinks where a coordinate sits on a bound.
        auto p = project_constraints(v);
        bool near_kink = false;
        for (std::size_t i = 0; i < 13; ++i) {
            near_kink |= std::fabs(v[i] - 0.02) < 1e-4 || std::fabs(v[i] - 0.25) < 1e-4;
            near_kink |= (p[i] > 0.02 && p[i] - 0.02 < 1e-4) || (p[i] < 0.25 && 0.25 - p[i] < 1e-4);
        }
        if (near_kink) continue;
        Tensor w({13}, v, true);
        Tensor c = random_tensor({13}, rng);
        auto res = crisp::testing::grad_check([&] { return sum(mul(square(project_constraints(w)), c)); }, {w});
        EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
        ++checked;
    }
    EXPECT_GT(checked, 10);
}

TEST(ScoreToWeights, EqualScoresGiveEqualWeights) {
    auto w = score_to_weights(std::vector<double>(13, 0.7));
    for (double x : w) EXPECT_NEAR(x, 1.0 / 13.0, 1e-15);
}

TEST(ScoreToWeights, DominantScoreIsCapped) {
    std::vector<double> s(13, 0.0);
    s[4] = 1e6;
    auto w = score_to_weights(s);
    EXPECT_DOUBLE_EQ(w[4], 0.25);
    for (std::size_t i = 0; i < 13; ++i) EXPECT_GE(w[i], 0.02);
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
    EXPECT_LT(max_abs_diff(w, bisection_projection(std::vector<double>{0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0},
                                                    0.02, 0.25)),
              1e-12);
}

TEST(ScoreToWeights, LowerTemperatureSharpens) {
    std::vector<double> s(13, 0.0);
    s[0] = 1.0;
    Tensor st({13}, s);
    Tensor p08 = softmax(st, -1, 0.8);
    Tensor p10 = softmax(st, -1, 1.0);
    EXPECT_GT(p08.values()[0], p10.values()[0]);
    EXPECT_GT(score_to_weights(s, 0.8)[0], score_to_weights(s, 1.0)[0]);
}

TEST(ScoreToWeights, RaisingAScoreNeverLowersItsPreProjectionWeight) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z(0.0, 2.0);
    std::uniform_real_distribution<double> bump(0.0, 3.0);
    for (int rep = 0; rep < 500; ++rep) {
        std::vector<double> s(13);
        for (auto& x : s) x = z(rng);
        const std::size_t i = static_cast<std::size_t>(rep % 13);
        Tensor a = softmax(Tensor({13}, s), -1, 0.8);
        s[i] += bump(rng);
        Tensor b = softmax(Tensor({13}, s), -1, 0.8);
        EXPECT_GE(b.values()[i], a.values()[i]);
    }
}

TEST(ScoreToWeights, TenThousandRandomVectorsAreFeasible) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> scale(0.01, 50.0);
    for (int rep = 0; rep < 10000; ++rep) {
        std::vector<double> s(13);
        const double k = scale(rng);
        for (auto& x : s) x = k * z(rng);
        auto w = score_to_weights(s);
        ASSERT_TRUE(WeightBounds{}.feasible(w, 1e-9));
    }
}

TEST(ScoreToWeights, BatchedRowsMatchSingleRows) {
    std::mt19937_64 rng(5);
    Tensor s = random_tensor({4, 13}, rng, 3.0);
    Tensor w = score_to_weights(s);
    for (std::size_t r = 0; r < 4; ++r) {
        std::vector<double> row(s.values().begin() + static_cast<std::ptrdiff_t>(r * 13),
                                s.values().begin() + static_cast<std::ptrdiff_t>(r * 13 + 13));
        auto single = score_to_weights(row);
        for (std::size_t i = 0; i < 13; ++i) EXPECT_EQ(w.at({r, i}), single[i]);
    }
}

TEST(RandomWeights, AlwaysFeasible) {
    std::mt19937_64 rng(6);
    for (int rep = 0; rep < 1000; ++rep) EXPECT_TRUE(WeightBounds{}.feasible(random_feasible_weights(13, rng)));
}

TEST(AllocationHead, SingleStepAndZeroParameters) {
    ParameterSet p;
    std::mt19937_64 rng(7);
    HeadConfig cfg;
    cfg.input = 6;
    cfg.lstm_hidden = 4;
    cfg.mlp_hidden = 5;
    auto head = make_allocation_head(p, cfg, rng);
    Tensor z1 = random_tensor({3, 1, 6}, rng);
    Tensor one = head.aggregate(z1);
    EXPECT_EQ(one.shape(), (Shape{3, 4}));
    Tensor ref = head.lstm.run(z1).last;
    for (std::size_t k = 0; k < one.numel(); ++k) EXPECT_EQ(one.values()[k], ref.values()[k]);

    for (auto& item : p.items())
        for (auto& v : item.tensor.mutable_values()) v = 0.0;
    Tensor h = head.aggregate(random_tensor({3, 5, 6}, rng));
    for (double v : h.values()) EXPECT_EQ(v, 0.0);
}

TEST(AllocationHead, AggregateAndMlpGradient) {
    ParameterSet p;
    std::mt19937_64 rng(8);
    HeadConfig cfg;
    cfg.input = 5;
    cfg.lstm_hidden = 3;
    cfg.mlp_hidden = 4;
    auto head = make_allocation_head(p, cfg, rng);
    Tensor z = random_tensor({4, 3, 5}, rng, 1.0, true);
    Tensor c = random_tensor({1, 4}, rng);
    std::vector<Tensor> inputs{z};
    std::vector<std::string> names{"z"};
    for (auto& item : p.items()) inputs.push_back(item.tensor), names.push_back(item.name);
    std::mt19937_64 drop(0);
    auto res = crisp::testing::grad_check(
        [&] {
            Tensor s = reshape(head.scores(head.aggregate(z), false, drop), {1, 4});
            return sum(mul(softmax(s, -1, 0.8), c));
        },
        inputs, names);
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(AllocationHead, DropoutOnlyInTraining) {
    ParameterSet p;
    std::mt19937_64 rng(9);
    HeadConfig cfg;
    cfg.input = 5;
    cfg.mlp_hidden = 64;
    auto head = make_allocation_head(p, cfg, rng);
    Tensor agg = head.aggregate(random_tensor({6, 4, 5}, rng));
    std::mt19937_64 r1(1), r2(2);
    Tensor e1 = head.scores(agg, false, r1), e2 = head.scores(agg, false, r2);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(e1.values()[k], e2.values()[k]);
    std::mt19937_64 r3(3);
    Tensor t1 = head.scores(agg, true, r3);
    bool differs = false;
    for (std::size_t k = 0; k < 6; ++k) differs |= t1.values()[k] != e1.values()[k];
    EXPECT_TRUE(differs);
}

TEST(AllocationHead, MeanPoolingVariant) {
    ParameterSet p;
    std::mt19937_64 rng(10);
    HeadConfig cfg;
    cfg.input = 5;
    cfg.lstm_hidden = 3;
    cfg.use_lstm = false;
    auto head = make_allocation_head(p, cfg, rng);
    EXPECT_FALSE(p.contains("head.lstm.w_ih"));
    Tensor h = head.aggregate(random_tensor({4, 6, 5}, rng));
    EXPECT_EQ(h.shape(), (Shape{4, 3}));
}
