#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "crisp/features.hpp"
#include "crisp/graph.hpp"
#include "crisp/market_data.hpp"
#include "crisp/model.hpp"
#include "crisp/objectives.hpp"

namespace crisp {

/// What a strategy may look at when rebalancing: the market truncated at the
/// rebalance day, and its own previous weights.
struct RebalanceContext {
    const Universe& history;  // calendar ends at the rebalance day
    std::size_t day = 0;      // index of the rebalance day (history.n_days() - 1)
    const std::vector<double>& previous;
};

/// Weights plus optional attention telemetry for the period.
struct Allocation {
    std::vector<double> weights;
    std::vector<Eigen::MatrixXd> attention;  // per-head N x N, CRISP only
    bool flagged = false;                    // strategy fell back internally
};

class Strategy {
public:
    virtual ~Strategy() = default;
    virtual std::string name() const = 0;
    virtual Allocation allocate(const RebalanceContext& ctx) = 0;
    /// Restore any internal state (RNG streams) to its initial value.
    virtual void reset() {}
};

/// Rebalance days [first, first + stride, ...] whose full holding period
/// lies inside the data and on or after `test_start`.
std::vector<std::size_t> rebalance_schedule(const Universe& u, const Date& test_start, std::size_t horizon,
                                            std::size_t min_history);

struct BacktestReport {
    std::string strategy;
    std::vector<Date> rebalance_dates;
    std::vector<std::vector<double>> weights;  // per period
    std::vector<double> turnovers;             // per period, vs previous weights (uniform before the first)
    std::vector<Date> days;                    // held days
    std::vector<double> daily_returns;
    std::vector<double> equity;                // days + 1 values, starting at 1
    MetricSet metrics;
    std::size_t infeasible_fallbacks = 0;
    std::size_t flagged_periods = 0;
    std::vector<AttentionRecord> attention;
};

struct BacktestOptions {
    std::size_t horizon = 5;
    WeightBounds bounds;
    double feasibility_tol = 1e-9;
    double risk_free = 0.0;
};

/// Holds each strategy's weights fixed for `horizon` days after every
/// rebalance day in `schedule`. Strategies only ever see Universe::prefix.
/// Infeasible weights are replaced by equal weight and counted.
BacktestReport run_backtest(Strategy& strategy, const Universe& u, const std::vector<std::size_t>& schedule,
                            const BacktestOptions& opts = {});

// ---------------------------------------------------------------------------
// Baselines

std::vector<double> equal_weight(std::size_t n);

/// Sample covariance (1/(L-1)) and mean of the last `lookback` daily returns
/// ending at `day`.
struct MomentEstimate {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};
MomentEstimate trailing_moments(const Universe& u, std::size_t day, std::size_t lookback);

struct MeanVarianceOptions {
    double risk_aversion = 1.0;
    double ridge = 1e-6;
    std::size_t iterations = 500;
    double step = 0.01;
};

/// Projected gradient ascent on mu'w - lambda w' Sigma w from uniform.
std::vector<double> mean_variance_weights(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma,
                                          const WeightBounds& bounds = {}, const MeanVarianceOptions& opts = {});

/// Equal risk contributions w_i (Sigma w)_i by cyclical coordinate descent
/// on the budget-scaled problem; returns the unprojected solution
/// normalised to sum 1.
std::vector<double> risk_parity_weights(const Eigen::MatrixXd& sigma, double tol = 1e-8,
                                        std::size_t max_sweeps = 10000);

class EqualWeightStrategy : public Strategy {
public:
    std::string name() const override { return "Equal Weight"; }
    Allocation allocate(const RebalanceContext& ctx) override;
};

class MeanVarianceStrategy : public Strategy {
public:
    explicit MeanVarianceStrategy(WeightBounds bounds = {}, std::size_t lookback = 252, MeanVarianceOptions opts = {})
        : bounds_(bounds), lookback_(lookback), opts_(opts) {}
    std::string name() const override { return "Mean-Variance"; }
    Allocation allocate(const RebalanceContext& ctx) override;

private:
    WeightBounds bounds_;
    std::size_t lookback_;
    MeanVarianceOptions opts_;
};

class RiskParityStrategy : public Strategy {
public:
    explicit RiskParityStrategy(WeightBounds bounds = {}, std::size_t lookback = 252)
        : bounds_(bounds), lookback_(lookback) {}
    std::string name() const override { return "Risk Parity"; }
    Allocation allocate(const RebalanceContext& ctx) override;

private:
    WeightBounds bounds_;
    std::size_t lookback_;
};

class RandomSelectionStrategy : public Strategy {
public:
    explicit RandomSelectionStrategy(std::uint64_t seed, WeightBounds bounds = {})
        : seed_(seed), bounds_(bounds), rng_(seed) {}
    std::string name() const override { return "Random Selection"; }
    Allocation allocate(const RebalanceContext& ctx) override;
    void reset() override { rng_.seed(seed_); }

private:
    std::uint64_t seed_;
    WeightBounds bounds_;
    std::mt19937_64 rng_;
};

/// Runs a trained model on the window ending at the rebalance day, built
/// from the truncated history and normalised with training statistics.
class ModelStrategy : public Strategy {
public:
    ModelStrategy(std::string name, const CrispModel& model, FeatureNormalizer normalizer,
                  std::vector<std::size_t> feature_subset, WindowOptions window);
    std::string name() const override { return name_; }
    Allocation allocate(const RebalanceContext& ctx) override;

private:
    std::string name_;
    const CrispModel& model_;
    FeatureNormalizer normalizer_;
    std::vector<std::size_t> subset_;
    WindowOptions window_;
};

// ---------------------------------------------------------------------------
// Reports

nlohmann::json report_json(const std::vector<BacktestReport>& reports);
/// `date,strategy,equity`; the first row per strategy is the day before the
/// first holding day at equity 1.
void write_equity_csv(const std::vector<BacktestReport>& reports, const std::string& path);
/// `date,strategy,<ticker>...,turnover` per rebalance.
void write_weights_csv(const std::vector<BacktestReport>& reports, const std::vector<std::string>& tickers,
                       const std::string& path);

}  // namespace crisp
