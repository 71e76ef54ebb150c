#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "crisp/backtest.hpp"
#include "crisp/experiment.hpp"
#include "support/fixture.hpp"

using namespace crisp;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    ExperimentConfig cfg = crisp::testing::small_experiment(520);
    Dataset data = prepare_dataset(cfg);
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

// Replaces everything strictly after `day` with a different price path.
Universe mutate_after(const Universe& u, std::size_t day, std::uint64_t seed) {
    Universe m = u;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 0.05);
    for (Eigen::Index i = 0; i < m.close.rows(); ++i) {
        for (auto d = static_cast<Eigen::Index>(day + 1); d < m.close.cols(); ++d) {
            m.close(i, d) = m.close(i, d - 1) * std::exp(z(rng));
            m.returns(i, d) = m.close(i, d) / m.close(i, d - 1) - 1.0;
            m.volume(i, d) *= std::exp(z(rng));
        }
    }
    return m;
}

double rc_spread(const Eigen::MatrixXd& sigma, const std::vector<double>& w) {
    Eigen::Map<const Eigen::VectorXd> x(w.data(), static_cast<Eigen::Index>(w.size()));
    Eigen::VectorXd rc = x.cwiseProduct(sigma * x);
    return rc.maxCoeff() / rc.minCoeff();
}

class ConstantStrategy : public Strategy {
public:
    explicit ConstantStrategy(std::vector<double> w) : w_(std::move(w)) {}
    std::string name() const override { return "Constant"; }
    Allocation allocate(const RebalanceContext&) override { return {w_, {}, false}; }

private:
    std::vector<double> w_;
};

}  // namespace

TEST(Schedule, TilesTheTestRange) {
    const auto& f = fixture();
    const auto& s = f.data.test_schedule;
    ASSERT_FALSE(s.empty());
    const auto& u = f.data.universe;
    EXPECT_GE(u.calendar[s.front() + 1], f.data.test_start);
    EXPECT_LT(u.calendar[s.front()], f.data.test_start);
    for (std::size_t k = 1; k < s.size(); ++k) EXPECT_EQ(s[k] - s[k - 1], 5u);
    EXPECT_LT(s.back() + 5, u.n_days());
    EXPECT_GE(s.back() + 10, u.n_days());
    // Training targets never reach the test range.
    for (const auto& w : f.data.train) EXPECT_LE(w.target_dates.back(), f.data.train_end);
}

TEST(Backtest, PeriodAndDayAccounting) {
    const auto& f = fixture();
    EqualWeightStrategy ew;
    auto rep = run_backtest(ew, f.data.universe, f.data.test_schedule);
    EXPECT_EQ(rep.rebalance_dates.size(), f.data.test_schedule.size());
    EXPECT_EQ(rep.daily_returns.size(), 5 * rep.rebalance_dates.size());
    EXPECT_EQ(rep.equity.size(), rep.daily_returns.size() + 1);
    EXPECT_EQ(rep.equity.front(), 1.0);
    // 142 periods of 5 days give 710 returns.
    std::vector<std::size_t> sched;
    for (std::size_t k = 0; k < 142; ++k) sched.push_back(80 + 5 * k);
    Universe big = generate_synthetic(RegimeConfig{}, 900, 1);
    auto rep2 = run_backtest(ew, big, sched);
    EXPECT_EQ(rep2.daily_returns.size(), 710u);
}

TEST(Backtest, EqualWeightMatchesSingleLoopOracle) {
    const auto& f = fixture();
    const auto& u = f.data.universe;
    EqualWeightStrategy ew;
    auto rep = run_backtest(ew, u, f.data.test_schedule);
    std::vector<double> daily;
    for (std::size_t e : f.data.test_schedule)
        for (std::size_t d = 1; d <= 5; ++d) {
            double r = 0.0;
            for (std::size_t i = 0; i < 13; ++i) r += u.returns(i, e + d) / 13.0;
            daily.push_back(r);
        }
    ASSERT_EQ(daily.size(), rep.daily_returns.size());
    double sum = 0.0, growth = 1.0, peak = 1.0, mdd = 0.0;
    for (double r : daily) {
        sum += r;
        growth *= 1.0 + r;
        peak = std::max(peak, growth);
        mdd = std::min(mdd, growth / peak - 1.0);
    }
    const double n = static_cast<double>(daily.size());
    const double mean = sum / n;
    double ss = 0.0, dn = 0.0;
    for (double r : daily) {
        ss += (r - mean) * (r - mean);
        if (r < 0.0) dn += r * r;
    }
    const double sd = std::sqrt(ss / n), dd = std::sqrt(dn / n);
    const double ann = std::pow(growth, 252.0 / n) - 1.0;
    for (std::size_t k = 0; k < daily.size(); ++k) EXPECT_NEAR(rep.daily_returns[k], daily[k], 1e-15);
    EXPECT_NEAR(rep.metrics.sharpe, std::sqrt(252.0) * mean / (sd + 1e-8), 1e-12);
    EXPECT_NEAR(rep.metrics.sortino, std::sqrt(252.0) * mean / (dd + 1e-8), 1e-12);
    EXPECT_NEAR(rep.metrics.max_drawdown, mdd, 1e-12);
    EXPECT_NEAR(rep.metrics.ann_return, ann, 1e-12);
    EXPECT_NEAR(rep.metrics.calmar, ann / (std::fabs(mdd) + 1e-8), 1e-12 * std::max(1.0, std::fabs(ann / mdd)));
    EXPECT_NEAR(rep.metrics.cum_return, growth - 1.0, 1e-12);
    EXPECT_NEAR(rep.equity.back(), growth, 1e-12);
    for (double t : rep.turnovers) EXPECT_EQ(t, 0.0);
    for (const auto& w : rep.weights)
        for (double x : w) EXPECT_EQ(x, 1.0 / 13.0);
}

TEST(Backtest, ZeroReturnMarketKeepsEquityFlat) {
    const auto& f = fixture();
    Universe u = f.data.universe;
    for (Eigen::Index d = 1; d < u.close.cols(); ++d) u.close.col(d) = u.close.col(0);
    u.returns.setZero();
    RandomSelectionStrategy rs(3);
    RiskParityStrategy rp;
    for (Strategy* s : std::initializer_list<Strategy*>{&rs, &rp}) {
        auto rep = run_backtest(*s, u, f.data.test_schedule);
        for (double e : rep.equity) EXPECT_EQ(e, 1.0);
    }
}

TEST(Backtest, TurnoverRecomputesFromWeightsLog) {
    const auto& f = fixture();
    RandomSelectionStrategy rs(11);
    MeanVarianceStrategy mv;
    for (Strategy* s : std::initializer_list<Strategy*>{&rs, &mv}) {
        auto rep = run_backtest(*s, f.data.universe, f.data.test_schedule);
        std::vector<double> prev(13, 1.0 / 13.0);
        for (std::size_t k = 0; k < rep.weights.size(); ++k) {
            double t = 0.0;
            for (std::size_t i = 0; i < 13; ++i) t += std::fabs(rep.weights[k][i] - prev[i]);
            EXPECT_NEAR(rep.turnovers[k], t, 1e-15);
            prev = rep.weights[k];
            EXPECT_TRUE(WeightBounds{}.feasible(rep.weights[k]));
        }
    }
}

TEST(Backtest, InfeasibleWeightsFallBackToEqualWeight) {
    const auto& f = fixture();
    std::vector<double> bad(13, 0.0);
    bad[0] = 1.0;
    ConstantStrategy cs(bad);
    auto rep = run_backtest(cs, f.data.universe, f.data.test_schedule);
    EXPECT_EQ(rep.infeasible_fallbacks, f.data.test_schedule.size());
    for (const auto& w : rep.weights) EXPECT_EQ(w, equal_weight(13));
}

TEST(Baselines, EqualWeight) {
    auto w = equal_weight(13);
    for (double x : w) EXPECT_EQ(x, 1.0 / 13.0);
    EXPECT_EQ(project_constraints(w), w);
}

TEST(Baselines, RiskParityClosedForms) {
    Eigen::MatrixXd s(2, 2);
    s << 0.01, 0.0, 0.0, 0.04;
    auto w = risk_parity_weights(s);
    EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-6);
    EXPECT_NEAR(w[1], 1.0 / 3.0, 1e-6);
    Eigen::MatrixXd same = Eigen::MatrixXd::Constant(4, 4, 0.3) + 0.7 * Eigen::MatrixXd::Identity(4, 4);
    for (double x : risk_parity_weights(same)) EXPECT_NEAR(x, 0.25, 1e-9);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z;
    for (int rep = 0; rep < 50; ++rep) {
        Eigen::MatrixXd a(5, 5);
        for (Eigen::Index i = 0; i < 25; ++i) a.data()[i] = z(rng);
        Eigen::MatrixXd sigma = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(5, 5);
        auto x = risk_parity_weights(sigma);
        double sum = 0.0;
        for (double v : x) {
            EXPECT_GT(v, 0.0);
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
        EXPECT_LT(rc_spread(sigma, x), 1.0 + 1e-6);
    }
}

TEST(Baselines, MeanVarianceExamples) {
    Eigen::VectorXd mu = Eigen::VectorXd::Constant(2, 0.1);
    Eigen::MatrixXd s = 0.04 * Eigen::MatrixXd::Identity(2, 2);
    auto w = mean_variance_weights(mu, s, WeightBounds{0.0, 1.0});
    EXPECT_NEAR(w[0], 0.5, 1e-12);
    EXPECT_NEAR(w[1], 0.5, 1e-12);

    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(13);
    e1(0) = 1.0;
    auto w13 = mean_variance_weights(e1, Eigen::MatrixXd::Identity(13, 13));
    EXPECT_NEAR(w13[0], 0.25, 1e-9);
    for (std::size_t i = 1; i < 13; ++i) EXPECT_NEAR(w13[i], 0.75 / 12.0, 1e-9);
    // Fixed point of the projected ascent map.
    std::vector<double> step(w13);
    for (std::size_t i = 0; i < 13; ++i) step[i] += 0.01 * (e1(static_cast<Eigen::Index>(i)) - 2.0 * w13[i]);
    auto again = project_constraints(step);
    for (std::size_t i = 0; i < 13; ++i) EXPECT_NEAR(again[i], w13[i], 1e-9);

    std::mt19937_64 rng(5);
    std::normal_distribution<double> z;
    for (int rep = 0; rep < 50; ++rep) {
        Eigen::MatrixXd a(13, 13);
        for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = z(rng);
        Eigen::VectorXd m(13);
        for (Eigen::Index i = 0; i < 13; ++i) m(i) = z(rng);
        EXPECT_TRUE(WeightBounds{}.feasible(mean_variance_weights(m, a * a.transpose())));
    }
}

TEST(Baselines, ShortHistoryFallsBack) {
    Universe u = generate_synthetic(RegimeConfig{}, 300, 2);
    MeanVarianceStrategy mv;
    RiskParityStrategy rp;
    std::vector<std::size_t> sched{100, 105, 260};
    for (Strategy* s : std::initializer_list<Strategy*>{&mv, &rp}) {
        auto rep = run_backtest(*s, u, sched);
        EXPECT_EQ(rep.flagged_periods, 2u);
        EXPECT_EQ(rep.weights[0], equal_weight(13));
    }
}

TEST(Baselines, RandomSelectionIsFeasibleAndReplayable) {
    const auto& f = fixture();
    RandomSelectionStrategy rs(21);
    auto a = run_backtest(rs, f.data.universe, f.data.test_schedule);
    auto b = run_backtest(rs, f.data.universe, f.data.test_schedule);
    EXPECT_EQ(a.weights, b.weights);
    EXPECT_NE(a.weights[0], a.weights[1]);
    for (const auto& w : a.weights) EXPECT_TRUE(WeightBounds{}.feasible(w));
}

TEST(Causality, FutureMutationNeverChangesPastWeights) {
    const auto& f = fixture();
    auto cfg = f.cfg;
    cfg.train.max_epochs = 1;
    auto full = train_variant(f.data, cfg, Variant::full);
    auto stat = train_variant(f.data, cfg, Variant::static_graph);
    auto crisp = model_strategy(full, cfg);
    auto crisp_static = model_strategy(stat, cfg);
    EqualWeightStrategy ew;
    MeanVarianceStrategy mv;
    RiskParityStrategy rp;
    RandomSelectionStrategy rs(8);
    const auto& sched = f.data.test_schedule;
    for (Strategy* s : std::initializer_list<Strategy*>{&ew, &mv, &rp, &rs, crisp.get(), crisp_static.get()}) {
        auto base = run_backtest(*s, f.data.universe, sched);
        for (std::size_t cut : {std::size_t{0}, sched.size() / 2, sched.size() - 1}) {
            Universe m = mutate_after(f.data.universe, sched[cut], 100 + cut);
            auto mut = run_backtest(*s, m, sched);
            for (std::size_t k = 0; k <= cut; ++k)
                EXPECT_EQ(mut.weights[k], base.weights[k]) << s->name() << " period " << k << " cut " << cut;
            if (cut + 1 < sched.size() && s != &ew && s != &rs) {
                bool changed = false;
                for (std::size_t k = cut + 1; k < sched.size(); ++k) changed |= mut.weights[k] != base.weights[k];
                EXPECT_TRUE(changed) << s->name() << " ignores its inputs";
            }
        }
    }
}

TEST(Backtest, StreamingMatchesAllAtOnce) {
    const auto& f = fixture();
    auto cfg = f.cfg;
    cfg.train.max_epochs = 1;
    auto tm = train_variant(f.data, cfg, Variant::full);
    auto crisp = model_strategy(tm, cfg);
    RiskParityStrategy rp;
    const auto& sched = f.data.test_schedule;
    const std::size_t half = sched.size() / 2;
    std::vector<std::size_t> a(sched.begin(), sched.begin() + static_cast<std::ptrdiff_t>(half));
    std::vector<std::size_t> b(sched.begin() + static_cast<std::ptrdiff_t>(half), sched.end());
    for (Strategy* s : std::initializer_list<Strategy*>{&rp, crisp.get()}) {
        auto all = run_backtest(*s, f.data.universe, sched);
        auto ra = run_backtest(*s, f.data.universe, a);
        auto rb = run_backtest(*s, f.data.universe, b);
        std::vector<double> joined = ra.daily_returns;
        joined.insert(joined.end(), rb.daily_returns.begin(), rb.daily_returns.end());
        EXPECT_EQ(joined, all.daily_returns);
        for (std::size_t k = 0; k < half; ++k) EXPECT_EQ(ra.weights[k], all.weights[k]);
        for (std::size_t k = half; k < sched.size(); ++k) EXPECT_EQ(rb.weights[k - half], all.weights[k]);
    }
    auto rep = run_backtest(*crisp, f.data.universe, sched);
    EXPECT_EQ(rep.attention.size(), sched.size());
    EXPECT_EQ(rep.attention[0].bins.total(), 156u);
}

TEST(Reports, FilesHaveExpectedShape) {
    const auto& f = fixture();
    EqualWeightStrategy ew;
    RiskParityStrategy rp;
    std::vector<BacktestReport> reps{run_backtest(ew, f.data.universe, f.data.test_schedule),
                                     run_backtest(rp, f.data.universe, f.data.test_schedule)};
    auto j = report_json(reps);
    for (const char* k : {"sharpe", "sortino", "ann_return", "ann_vol", "max_drawdown", "calmar", "avg_turnover",
                          "cum_return"})
        EXPECT_TRUE(j["strategies"]["Equal Weight"].contains(k)) << k;
    EXPECT_TRUE(j.contains("assumptions"));
    auto dir = fs::temp_directory_path() / "crisp_reports";
    fs::create_directories(dir);
    write_equity_csv(reps, (dir / "equity.csv").string());
    write_weights_csv(reps, f.data.universe.tickers, (dir / "weights.csv").string());
    std::ifstream eq(dir / "equity.csv");
    std::string line;
    std::getline(eq, line);
    EXPECT_EQ(line, "date,strategy,equity");
    std::size_t rows = 0;
    while (std::getline(eq, line)) ++rows;
    EXPECT_EQ(rows, 2 * (reps[0].daily_returns.size() + 1));
    std::ifstream wt(dir / "weights.csv");
    std::getline(wt, line);
    EXPECT_EQ(line.substr(0, 18), "date,strategy,WMT,");
}

TEST(Variants, NamesAndShapes) {
    const std::vector<std::string> names{"Full CRISP",          "w/o Learnable Graph", "w/o Multi-Head Attn",
                                         "w/o LSTM",            "w/o Crisis Features", "Random Selection"};
    ASSERT_EQ(all_variants().size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(variant_name(all_variants()[i]), names[i]);
        EXPECT_EQ(parse_variant(names[i]), all_variants()[i]);
    }
    EXPECT_EQ(parse_variant("static"), Variant::static_graph);
    EXPECT_FALSE(parse_variant("bogus").has_value());
    auto base = ModelConfig::full();
    auto single = apply_variant(base, Variant::single_head);
    EXPECT_EQ(single.attention_heads, 1u);
    EXPECT_EQ(single.attention_head_dim, 128u);
    EXPECT_EQ(apply_variant(base, Variant::no_crisis_features).features, 27u);
    EXPECT_EQ(variant_features(Variant::no_crisis_features).size(), 27u);
    EXPECT_FALSE(apply_variant(base, Variant::no_lstm).use_head_lstm);
    EXPECT_EQ(apply_variant(base, Variant::static_graph).graph, GraphMode::static_correlation);
}

TEST(Ablation, SixRowsInTableOrder) {
    const auto& f = fixture();
    auto cfg = f.cfg;
    cfg.train.max_epochs = 1;
    auto rows = ablation_suite(f.data, cfg);
    ASSERT_EQ(rows.size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(rows[i].configuration, variant_name(all_variants()[i]));
        EXPECT_TRUE(std::isfinite(rows[i].metrics.sharpe));
        EXPECT_EQ(rows[i].report.infeasible_fallbacks, 0u);
    }
    for (const auto& w : rows[5].report.weights) EXPECT_TRUE(WeightBounds{}.feasible(w));
    auto dir = fs::temp_directory_path() / "crisp_ablation";
    fs::create_directories(dir);
    write_ablation_csv(rows, (dir / "ablation.csv").string());
    std::ifstream in(dir / "ablation.csv");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) ++n;
    EXPECT_EQ(n, 7u);
    auto only = ablation_suite(f.data, cfg, {Variant::no_lstm});
    ASSERT_EQ(only.size(), 1u);
    EXPECT_EQ(only[0].configuration, "w/o LSTM");
}
