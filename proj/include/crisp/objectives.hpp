#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "crisp/tensor.hpp"

namespace crisp {

inline constexpr double kRatioEpsilon = 1e-8;
inline constexpr double kTradingDays = 252.0;

struct LossWeights {
    double sharpe = 0.4;
    double sortino = 0.2;
    double risk = 0.3;
    double diversification = 0.05;
    double turnover = 0.05;
    double risk_free = 0.0;  // daily
    double cvar_alpha = 0.05;
    double drawdown_weight = 0.5;
    double turnover_target = 0.02;
    double turnover_width = 0.01;
    /// true: L_div = +sum w ln w, so minimising favours spread-out weights.
    /// false: the literal -sum w ln w.
    bool diversify = true;

    void validate() const;
};

// Differentiable terms. Return series are flattened and pooled unless noted.

/// B x N weights and B x N x H asset returns -> B x H portfolio returns.
Tensor portfolio_returns(const Tensor& weights, const Tensor& asset_returns);
/// -(mean - rf) / (std + eps), population std.
Tensor l_sharpe(const Tensor& returns, double risk_free = 0.0);
/// -(mean - rf) / (downside deviation + eps).
Tensor l_sortino(const Tensor& returns, double risk_free = 0.0);
/// -(mean of the worst ceil(alpha n) returns); ties broken by position.
Tensor cvar_loss(const Tensor& returns, double alpha = 0.05);
/// Per-row maximum drawdown of the equity curve that starts at 1, as a
/// positive fraction, averaged over rows of a B x H tensor.
Tensor mean_max_drawdown(const Tensor& returns);
/// CVaR term + drawdown_weight * mean_max_drawdown.
Tensor l_risk(const Tensor& returns_by_sample, double alpha = 0.05, double drawdown_weight = 0.5);
/// Batch mean of sum_i w_i ln w_i (sign flipped when `diversify` is false).
Tensor l_div(const Tensor& weights, bool diversify = true);
/// Batch mean of -exp(-(sum_i |w_new - w_old| - target)^2 / width).
Tensor l_turn(const Tensor& w_new, const Tensor& w_old, double target = 0.02, double width = 0.01);

struct LossBreakdown {
    Tensor total;
    Tensor sharpe, sortino, risk, diversification, turnover;
};

/// Weighted objective over a batch of holding periods.
/// weights, previous: B x N; asset_returns: B x N x H.
LossBreakdown portfolio_loss(const Tensor& weights, const Tensor& previous, const Tensor& asset_returns,
                             const LossWeights& lw = {});

// Evaluation metrics on plain series.

double mean_return(std::span<const double> r);
/// Population standard deviation.
double std_return(std::span<const double> r);
double downside_dev(std::span<const double> r, double target = 0.0);
/// Annualised: sqrt(252) (mean - rf) / (std + eps).
double sharpe_ratio(std::span<const double> r, double risk_free = 0.0);
double sortino_ratio(std::span<const double> r, double risk_free = 0.0);
/// (prod(1 + r))^(252 / D) - 1.
double annualized_return(std::span<const double> r);
double annualized_vol(std::span<const double> r);
/// Largest decline of the equity curve starting at 1, reported <= 0.
double max_drawdown_of_returns(std::span<const double> r);
/// Annualised return / (|max drawdown| + eps).
double calmar_ratio(std::span<const double> r);
double turnover(std::span<const double> w_new, std::span<const double> w_old);

struct MetricSet {
    double sharpe = 0.0;
    double sortino = 0.0;
    double ann_return = 0.0;
    double ann_vol = 0.0;
    double max_drawdown = 0.0;  // <= 0
    double calmar = 0.0;
    double avg_turnover = 0.0;
    double cum_return = 0.0;
    double cvar_5 = 0.0;
    std::size_t days = 0;

    nlohmann::json to_json() const;
};

MetricSet compute_metrics(std::span<const double> daily_returns, std::span<const double> turnovers,
                          double risk_free = 0.0);

}  // namespace crisp
