#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "crisp/ops.hpp"
#include "crisp/tensor.hpp"
#include "../support/gradcheck.hpp"

using namespace crisp;
using crisp::testing::grad_check;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = true) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Fixed random projection so that every output element influences the loss.
Tensor weighted_sum(const Tensor& t, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    auto w = random_tensor(t.shape(), rng, -1.0, 1.0, false);
    return sum(mul(t, w));
}

}  // namespace

TEST(Matmul, IdentityAndDiagonal) {
    Tensor a({2, 2}, {1, 2, 3, 4});
    auto c = matmul(a, Tensor::eye(2));
    EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()),
              (std::vector<double>{1, 2, 3, 4}));

    Tensor d({2, 2}, {2, 0, 0, 3});
    Tensor ones({2, 1}, {1, 1});
    auto e = matmul(d, ones);
    EXPECT_EQ(e.shape(), (Shape{2, 1}));
    EXPECT_DOUBLE_EQ(e.at({0, 0}), 2.0);
    EXPECT_DOUBLE_EQ(e.at({1, 0}), 3.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    try {
        matmul(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        std::string msg = e.what();
        auto first = msg.find("(2, 3)");
        ASSERT_NE(first, std::string::npos);
        EXPECT_NE(msg.find("(2, 3)", first + 1), std::string::npos);
    }
}

TEST(Matmul, FiniteDifferenceRandom3x3) {
    std::mt19937_64 rng(7);
    auto a = random_tensor({3, 3}, rng);
    auto b = random_tensor({3, 3}, rng);
    auto res = grad_check([&] { return sum(matmul(a, b)); }, {a, b}, {"a", "b"});
    EXPECT_LT(res.max_rel_error, 1e-6) << res.worst;
}

TEST(Matmul, BatchedBothWays) {
    std::mt19937_64 rng(8);
    auto a = random_tensor({2, 3, 4}, rng);
    auto shared = random_tensor({4, 5}, rng);
    auto batched = random_tensor({2, 4, 5}, rng);
    auto r1 = grad_check([&] { return weighted_sum(matmul(a, shared)); }, {a, shared});
    auto r2 = grad_check([&] { return weighted_sum(matmul(a, batched)); }, {a, batched});
    EXPECT_LT(r1.max_rel_error, 1e-6) << r1.worst;
    EXPECT_LT(r2.max_rel_error, 1e-6) << r2.worst;
    EXPECT_THROW(matmul(a, random_tensor({3, 4, 5}, rng)), DimensionError);
}

TEST(Softmax, Examples) {
    auto s = softmax(Tensor({2}, {0.0, 0.0}), -1, 1.0);
    EXPECT_DOUBLE_EQ(s.values()[0], 0.5);
    EXPECT_DOUBLE_EQ(s.values()[1], 0.5);

    auto t = softmax(Tensor({2}, {std::log(2.0), 0.0}), -1, 1.0);
    EXPECT_NEAR(t.values()[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(t.values()[1], 1.0 / 3.0, 1e-15);

    auto sharp = softmax(Tensor({2}, {1.0, 0.0}), -1, 0.8);
    auto flat = softmax(Tensor({2}, {1.0, 0.0}), -1, 1.0);
    EXPECT_GT(sharp.values()[0] - sharp.values()[1], flat.values()[0] - flat.values()[1]);

    EXPECT_THROW(softmax(Tensor({2}, {1.0, 0.0}), -1, 0.0), ContractError);
    EXPECT_THROW(softmax(Tensor({2}, {1.0, 0.0}), 3, 1.0), DimensionError);
}

TEST(Softmax, RowsSumToOneForAnyTemperature) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> tau(0.1, 10.0);
    for (int trial = 0; trial < 200; ++trial) {
        auto x = random_tensor({3, 4, 5}, rng, -50.0, 50.0, false);
        int axis = trial % 3;
        auto y = softmax(x, axis, tau(rng));
        auto s = sum(y, axis);
        for (double v : s.values()) ASSERT_NEAR(v, 1.0, 1e-9);
        for (double v : y.values()) ASSERT_GE(v, 0.0);
    }
}

TEST(LeakyRelu, ValuesAndGradient) {
    auto y = leaky_relu(Tensor({2}, {3.0, -1.0}), 0.2);
    EXPECT_DOUBLE_EQ(y.values()[0], 3.0);
    EXPECT_DOUBLE_EQ(y.values()[1], -0.2);

    Tensor x({1}, {-1.0}, true);
    sum(leaky_relu(x, 0.2)).backward();
    EXPECT_NEAR(x.grad()[0], 0.2, 1e-12);
    auto res = grad_check([&] { return sum(leaky_relu(x, 0.2)); }, {x});
    EXPECT_NEAR(res.analytic, res.numeric, 1e-12);
}

TEST(Backward, QuadraticAndDisconnected) {
    Tensor w({2}, {1.0, 2.0}, true);
    Tensor unused({3}, {1.0, 1.0, 1.0}, true);
    auto loss = sum(mul(w, w));
    loss.backward();
    EXPECT_EQ(w.grad(), (std::vector<double>{2.0, 4.0}));
    EXPECT_EQ(unused.grad(), (std::vector<double>{0.0, 0.0, 0.0}));

    // Repeated calls without reset accumulate.
    loss.backward();
    EXPECT_EQ(w.grad(), (std::vector<double>{4.0, 8.0}));
}

TEST(Backward, NonScalarLossIsContractError) {
    Tensor w({2}, {1.0, 2.0}, true);
    EXPECT_THROW(mul(w, w).backward(), ContractError);
}

TEST(Backward, DeterministicBitwise) {
    std::mt19937_64 rng(3);
    auto a = random_tensor({4, 6}, rng);
    auto b = random_tensor({6, 3}, rng);
    auto run = [&] {
        a.zero_grad();
        b.zero_grad();
        auto h = tanh(matmul(a, b));
        sum(softmax(h, -1, 0.8)).backward();
        auto l = weighted_sum(softmax(mul(h, 3.0), 0, 0.8));
        l.backward();
        auto g = a.grad();
        auto gb = b.grad();
        g.insert(g.end(), gb.begin(), gb.end());
        return g;
    };
    auto g1 = run();
    auto g2 = run();
    ASSERT_EQ(g1.size(), g2.size());
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(g1[i], g2[i]);
}

// Every differentiable op against central differences on ten seeds.
TEST(GradCheck, AllDifferentiableOps) {
    using Fn = std::function<Tensor(const Tensor&, const Tensor&)>;
    struct Case {
        const char* name;
        Fn fn;
        bool positive = false;  // keep inputs away from singularities
    };
    std::vector<Case> cases = {
        {"add", [](auto& x, auto& y) { return add(x, y); }},
        {"sub", [](auto& x, auto& y) { return sub(x, y); }},
        {"mul", [](auto& x, auto& y) { return mul(x, y); }},
        {"div", [](auto& x, auto& y) { return div(x, y); }, true},
        {"add_broadcast", [](auto& x, auto& y) { return add(x, slice(y, 0, 0, 1)); }},
        {"mul_broadcast_col",
         [](auto& x, auto& y) { return mul(x, reshape(slice(slice(y, 1, 0, 1), 0, 0, 3), {3, 1})); }},
        {"scalar_ops", [](auto& x, auto&) { return mul(add(x, 0.3), -1.7); }},
        {"exp", [](auto& x, auto&) { return exp(x); }},
        {"log", [](auto& x, auto&) { return log(x); }, true},
        {"sqrt", [](auto& x, auto&) { return sqrt(x); }, true},
        {"square", [](auto& x, auto&) { return square(x); }},
        {"abs", [](auto& x, auto&) { return abs(x); }},
        {"tanh", [](auto& x, auto&) { return tanh(x); }},
        {"sigmoid", [](auto& x, auto&) { return sigmoid(x); }},
        {"relu", [](auto& x, auto&) { return relu(x); }},
        {"leaky_relu", [](auto& x, auto&) { return leaky_relu(x, 0.2); }},
        {"softmax_last", [](auto& x, auto&) { return softmax(x, -1, 0.8); }},
        {"softmax_first", [](auto& x, auto&) { return softmax(x, 0, 2.5); }},
        {"sum_axis", [](auto& x, auto&) { return sum(x, 1); }},
        {"mean_axis", [](auto& x, auto&) { return mean(x, 0, true); }},
        {"mean_all", [](auto& x, auto&) { return mean(x); }},
        {"concat", [](auto& x, auto& y) { return concat({x, y, x}, 1); }},
        {"slice", [](auto& x, auto&) { return slice(x, 1, 1, 2); }},
        {"reshape", [](auto& x, auto&) { return reshape(x, {4, 3}); }},
        {"transpose", [](auto& x, auto& y) { return matmul(transpose(x), y); }},
        {"permute", [](auto& x, auto&) { return permute(reshape(x, {3, 2, 2}), {2, 0, 1}); }},
        {"index_select", [](auto& x, auto&) { return index_select(x, {0, 5, 5, 11}); }},
        {"clip", [](auto& x, auto&) { return clip(x, -0.5, 0.5); }},
    };
    for (const auto& c : cases) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            std::mt19937_64 rng(seed + 100);
            double lo = c.positive ? 0.5 : -1.0;
            auto x = random_tensor({3, 4}, rng, lo, 1.5);
            auto y = random_tensor({3, 4}, rng, lo, 1.5);
            auto res = grad_check([&] { return weighted_sum(c.fn(x, y)); }, {x, y}, {"x", "y"});
            EXPECT_LT(res.max_rel_error, 1e-4)
                << c.name << " seed " << seed << " at " << res.worst << " analytic " << res.analytic
                << " numeric " << res.numeric;
        }
    }
}

TEST(Dropout, EvalIdentityTrainInverted) {
    std::mt19937_64 rng(5);
    auto x = Tensor::full({1000}, 2.0);
    auto eval = dropout(x, 0.3, false, rng);
    EXPECT_EQ(eval.data(), x.data());
    auto train = dropout(x, 0.3, true, rng);
    double kept = 0.0;
    for (double v : train.values()) {
        EXPECT_TRUE(v == 0.0 || std::fabs(v - 2.0 / 0.7) < 1e-12);
        if (v != 0.0) kept += 1.0;
    }
    EXPECT_NEAR(kept / 1000.0, 0.7, 0.05);
}

TEST(Clip, GradientInsideOneOutsideZero) {
    Tensor x({3}, {-2.0, 0.1, 3.0}, true);
    sum(clip(x, -1.0, 1.0)).backward();
    EXPECT_EQ(x.grad(), (std::vector<double>{0.0, 1.0, 0.0}));
}

TEST(Tensor, InvariantsAndParameters) {
    EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
    ParameterSet ps;
    ps.add("w", Tensor::zeros({2, 2}));
    EXPECT_THROW(ps.add("w", Tensor::zeros({1})), ContractError);
    EXPECT_EQ(ps.scalar_count(), 4u);
    EXPECT_TRUE(ps.get("w").tensor.requires_grad());
}

TEST(Tensor, NoGradGuardSkipsGraph) {
    Tensor w({2}, {1.0, 2.0}, true);
    {
        NoGradGuard g;
        auto y = mul(w, w);
        EXPECT_TRUE(y.is_leaf());
        EXPECT_FALSE(y.requires_grad());
    }
    EXPECT_FALSE(mul(w, w).is_leaf());
}
