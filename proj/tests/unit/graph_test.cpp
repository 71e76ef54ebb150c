#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "crisp/graph.hpp"
#include "crisp/ops.hpp"
#include "support/eigen_bridge.hpp"
#include "support/gradcheck.hpp"

using namespace crisp;
using crisp::testing::from_matrix;
using crisp::testing::random_tensor;
using crisp::testing::to_matrix;

namespace {

Eigen::MatrixXd random_row_stochastic(int n, std::mt19937_64& rng) {
    std::exponential_distribution<double> e(1.0);
    std::bernoulli_distribution sharp(0.3);
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) m(i, j) = std::pow(e(rng), sharp(rng) ? 4.0 : 1.0);
        m.row(i) /= m.row(i).sum();
    }
    return m;
}

}  // namespace

TEST(Fuse, ConcatenatesAndRoundTrips) {
    std::mt19937_64 rng(1);
    Tensor t = random_tensor({13, 128}, rng);
    Tensor s = Tensor::zeros({13, 128});
    Tensor z = fuse(t, s);
    ASSERT_EQ(z.shape(), (Shape{13, 256}));
    Tensor back_t = slice(z, 1, 0, 128);
    Tensor back_s = slice(z, 1, 128, 128);
    for (std::size_t k = 0; k < t.numel(); ++k) {
        EXPECT_EQ(back_t.values()[k], t.values()[k]);
        EXPECT_EQ(back_s.values()[k], 0.0);
    }
}

TEST(Gat, CandidateEdgeCount) {
    EXPECT_EQ(candidate_edge_count(13), 156u);
    EXPECT_EQ(bin_edges(Eigen::MatrixXd::Constant(13, 13, 1.0 / 13.0)).total(), 156u);
}

TEST(Gat, IdenticalEmbeddingsReceiveEqualAttention) {
    ParameterSet p;
    std::mt19937_64 rng(2);
    auto gat = make_gat(p, GatConfig{6, 2, 3, 0.2}, rng);
    Eigen::MatrixXd z = Eigen::MatrixXd::Random(4, 6);
    z.row(2) = z.row(0);
    auto out = gat.forward(from_matrix(z));
    for (const auto& a : out.alpha) {
        Eigen::MatrixXd m = to_matrix(a);
        for (int i = 0; i < 4; ++i) EXPECT_NEAR(m(i, 0), m(i, 2), 1e-15);
    }
}

TEST(Gat, ThreeNodesMatchMatrixOracle) {
    ParameterSet p;
    std::mt19937_64 rng(3);
    GatConfig cfg{4, 2, 2, 0.2};
    auto gat = make_gat(p, cfg, rng);
    Eigen::MatrixXd w(4, 4), a(2, 4), z(3, 4);
    w << 0.5, -0.1, 0.3, 0.8, -0.4, 0.6, 0.2, -0.7, 0.9, 0.05, -0.3, 0.4, 0.1, 0.2, 0.6, -0.5;
    a << 0.7, -0.2, 0.4, 0.9, -0.6, 0.3, 0.8, -0.1;
    z << 1.0, -2.0, 0.5, 0.3, 0.2, 0.4, -1.0, 2.0, -0.7, 1.5, 0.9, -0.4;
    crisp::testing::assign(gat.weight, w);
    crisp::testing::assign(gat.attention, a);
    auto out = gat.forward(from_matrix(z));

    Eigen::MatrixXd wz = z * w;
    Eigen::MatrixXd refined(3, 4);
    for (int k = 0; k < 2; ++k) {
        Eigen::MatrixXd wh = wz.middleCols(2 * k, 2);
        Eigen::MatrixXd alpha(3, 3);
        for (int i = 0; i < 3; ++i) {
            double denom = 0.0;
            for (int j = 0; j < 3; ++j) {
                double e = a(k, 0) * wh(i, 0) + a(k, 1) * wh(i, 1) + a(k, 2) * wh(j, 0) + a(k, 3) * wh(j, 1);
                e = e >= 0.0 ? e : 0.2 * e;
                alpha(i, j) = std::exp(e);
                denom += alpha(i, j);
            }
            alpha.row(i) /= denom;
        }
        EXPECT_LT((to_matrix(out.alpha[static_cast<std::size_t>(k)]) - alpha).cwiseAbs().maxCoeff(), 1e-12);
        refined.middleCols(2 * k, 2) = alpha * wh;
    }
    EXPECT_LT((to_matrix(out.refined) - refined).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gat, RowsStochasticAndAttentionVectorsLive) {
    ParameterSet p;
    std::mt19937_64 rng(4);
    auto gat = make_gat(p, GatConfig{8, 4, 2, 0.2}, rng);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor z = random_tensor({3, 6, 8}, rng, 2.0);
        auto out = gat.forward(z);
        for (const auto& a : out.alpha) {
            auto v = a.values();
            for (std::size_t r = 0; r < v.size() / 6; ++r) {
                double s = 0.0;
                for (std::size_t j = 0; j < 6; ++j) s += v[r * 6 + j];
                EXPECT_NEAR(s, 1.0, 1e-9);
            }
        }
    }
    Tensor z = random_tensor({6, 8}, rng);
    Tensor target = random_tensor({6, 8}, rng);
    gat.attention.zero_grad();
    sum(mul(gat.forward(z).refined, target)).backward();
    auto g = gat.attention.grad();
    for (std::size_t k = 0; k < 4; ++k) {
        double norm = 0.0;
        for (std::size_t j = 0; j < 4; ++j) norm += std::fabs(g[k * 4 + j]);
        EXPECT_GT(norm, 0.0) << "head " << k;
    }
}

TEST(Gat, GradientMatchesFiniteDifferences) {
    ParameterSet p;
    std::mt19937_64 rng(5);
    auto gat = make_gat(p, GatConfig{6, 2, 3, 0.2}, rng);
    Tensor z = random_tensor({2, 4, 6}, rng, 1.0, true);
    Tensor target = random_tensor({2, 4, 6}, rng);
    auto res = crisp::testing::grad_check(
        [&] { return sum(mul(residual_combine(fuse(z, z), gat.forward(z).refined), fuse(target, target))); },
        {gat.weight, gat.attention, z}, {"W", "a", "z"});
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(ResidualCombine, Examples) {
    Tensor z({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor zero = Tensor::zeros({2, 2});
    Tensor same = residual_combine(z, zero);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(same.values()[k], z.values()[k]);
    Tensor r({2, 2}, {2, -4, 10, 0.5});
    Tensor out = residual_combine(z, r);
    std::vector<double> expect{2, 0, 3, 4, 10, 6.25, 7, 8};
    for (std::size_t k = 0; k < 8; ++k) EXPECT_DOUBLE_EQ(out.values()[k], expect[k]);
}

TEST(Sparsity, UniformAttentionIsAllLow) {
    Eigen::MatrixXd u = Eigen::MatrixXd::Constant(13, 13, 1.0 / 13.0);
    auto rec = make_attention_record(Date::parse("2022-03-01"), {u, u, u, u});
    EXPECT_EQ(rec.bins.low, 156u);
    EXPECT_EQ(rec.bins.mid + rec.bins.high, 0u);
    for (auto d : rec.effective_degree) EXPECT_EQ(d, 0u);
    auto rep = sparsity_report({rec}, std::vector<bool>(13, true));
    EXPECT_DOUBLE_EQ(rep.low_fraction, 1.0);
    EXPECT_DOUBLE_EQ(rep.cluster_share, 1.0);
}

TEST(Sparsity, OneDominantEdgePerRow) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Constant(13, 13, 0.1 / 12.0);
    for (int i = 0; i < 13; ++i) a(i, (i + 1) % 13) = 0.9;
    auto b = bin_edges(a);
    EXPECT_EQ(b.high, 13u);
    EXPECT_EQ(b.total(), 156u);
}

TEST(Sparsity, BinsMatchBruteForceAndPartition) {
    std::mt19937_64 rng(6);
    std::vector<bool> cluster{true, true, true, true, false, true, true, false, false, true, true, false, false};
    for (int rep = 0; rep < 100; ++rep) {
        Eigen::MatrixXd a = random_row_stochastic(13, rng);
        auto b = bin_edges(a);
        std::size_t lo = 0, mid = 0, hi = 0;
        double to_cluster = 0.0, total = 0.0;
        for (int i = 0; i < 13; ++i)
            for (int j = 0; j < 13; ++j) {
                if (i == j) continue;
                if (a(i, j) < 0.1) ++lo;
                else if (a(i, j) <= 0.3) ++mid;
                else ++hi;
                total += a(i, j);
                if (cluster[static_cast<std::size_t>(j)]) to_cluster += a(i, j);
            }
        EXPECT_EQ(b.low, lo);
        EXPECT_EQ(b.mid, mid);
        EXPECT_EQ(b.high, hi);
        EXPECT_EQ(b.total(), 156u);
        double share = cluster_share(a, cluster);
        EXPECT_NEAR(share, to_cluster / total, 1e-15);
        EXPECT_GE(share, 0.0);
        EXPECT_LE(share, 1.0);
    }
}

TEST(Sparsity, RegimeSplitShares) {
    std::mt19937_64 rng(7);
    std::vector<bool> cluster{true, false, false};
    Eigen::MatrixXd to_first = Eigen::MatrixXd::Constant(3, 3, 0.05);
    to_first.col(0).setConstant(0.9);
    Eigen::MatrixXd to_last = Eigen::MatrixXd::Constant(3, 3, 0.05);
    to_last.col(2).setConstant(0.9);
    std::vector<AttentionRecord> recs{
        make_attention_record(Date::parse("2020-01-02"), {to_first}, Regime::crisis),
        make_attention_record(Date::parse("2020-01-09"), {to_last}, Regime::calm)};
    auto rep = sparsity_report(recs, cluster);
    ASSERT_TRUE(rep.crisis_cluster_share && rep.calm_cluster_share);
    EXPECT_GT(*rep.crisis_cluster_share, *rep.calm_cluster_share);
    auto j = sparsity_json(rep, {"A", "B", "C"});
    EXPECT_EQ(j["candidate_edges"], 6);
    EXPECT_TRUE(j.contains("effective_degree"));
}
