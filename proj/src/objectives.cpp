#include "crisp/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crisp/allocation.hpp"
#include "crisp/features.hpp"
#include "crisp/ops.hpp"

namespace crisp {

void LossWeights::validate() const {
    for (double w : {sharpe, sortino, risk, diversification, turnover, drawdown_weight}) {
        if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
    }
    if (!(cvar_alpha > 0.0 && cvar_alpha <= 1.0)) throw ConfigError("cvar_alpha must lie in (0, 1]");
    if (!(turnover_width > 0.0)) throw ConfigError("turnover_width must be positive");
}

Tensor portfolio_returns(const Tensor& weights, const Tensor& asset_returns) {
    if (weights.dim() != 2 || asset_returns.dim() != 3 || weights.shape()[0] != asset_returns.shape()[0] ||
        weights.shape()[1] != asset_returns.shape()[1]) {
        throw DimensionError("portfolio_returns: weights " + shape_str(weights.shape()) + " vs returns " +
                             shape_str(asset_returns.shape()));
    }
    const std::size_t b = weights.shape()[0], n = weights.shape()[1], h = asset_returns.shape()[2];
    return reshape(matmul(reshape(weights, {b, 1, n}), asset_returns), {b, h});
}

namespace {

Tensor flat(const Tensor& x) { return reshape(x, {x.numel()}); }

Tensor population_std(const Tensor& r) {
    Tensor centered = sub(r, mean(r));
    return sqrt(mean(square(centered)));
}

}  // namespace

Tensor l_sharpe(const Tensor& returns, double risk_free) {
    Tensor r = flat(returns);
    Tensor excess = add(mean(r), -risk_free);
    return neg(div(excess, add(population_std(r), kRatioEpsilon)));
}

Tensor l_sortino(const Tensor& returns, double risk_free) {
    Tensor r = flat(returns);
    Tensor excess = add(mean(r), -risk_free);
    // min(r - rf, 0) = -relu(rf - r)
    Tensor below = relu(neg(add(r, -risk_free)));
    Tensor dd = sqrt(mean(square(below)));
    return neg(div(excess, add(dd, kRatioEpsilon)));
}

Tensor cvar_loss(const Tensor& returns, double alpha) {
    if (returns.numel() == 0) throw ContractError("cvar_loss needs at least one return");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ContractError("cvar alpha must lie in (0, 1]");
    auto v = returns.values();
    const std::size_t n = v.size();
    std::size_t k = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n) - 1e-9));
    k = std::clamp<std::size_t>(k, 1, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    order.resize(k);
    double acc = 0.0;
    for (auto i : order) acc += v[i];
    auto px = returns.data();
    return make_op("cvar_loss", {}, {-acc / static_cast<double>(k)}, {returns},
                   [px, order, k](detail::TensorData& o) {
                       if (!px->requires_grad) return;
                       const double g = -o.grad[0] / static_cast<double>(k);
                       for (auto i : order) px->grad[i] += g;
                   });
}

Tensor mean_max_drawdown(const Tensor& returns) {
    if (returns.dim() != 2) throw DimensionError("mean_max_drawdown expects B x H returns");
    const std::size_t b = returns.shape()[0], h = returns.shape()[1];
    auto v = returns.values();
    struct Span {
        std::size_t peak, trough;  // equity indices, 0 = starting value
        double ratio;              // E_trough / E_peak
    };
    std::vector<Span> spans(b);
    double total = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
        double equity = 1.0, peak = 1.0;
        std::size_t peak_at = 0;
        Span best{0, 0, 1.0};
        for (std::size_t t = 1; t <= h; ++t) {
            equity *= 1.0 + v[r * h + t - 1];
            if (equity > peak) {
                peak = equity;
                peak_at = t;
            }
            const double ratio = equity / peak;
            if (ratio < best.ratio) best = {peak_at, t, ratio};
        }
        spans[r] = best;
        total += 1.0 - best.ratio;
    }
    auto px = returns.data();
    return make_op("mean_max_drawdown", {}, {total / static_cast<double>(b)}, {returns},
                   [px, spans, b, h](detail::TensorData& o) {
                       if (!px->requires_grad) return;
                       const double g = o.grad[0] / static_cast<double>(b);
                       for (std::size_t r = 0; r < b; ++r) {
                           const auto& s = spans[r];
                           // dd = 1 - prod_{k in (peak, trough]} (1 + r_k)
                           for (std::size_t t = s.peak + 1; t <= s.trough; ++t) {
                               const double x = px->values[r * h + t - 1];
                               px->grad[r * h + t - 1] -= g * s.ratio / (1.0 + x);
                           }
                       }
                   });
}

Tensor l_risk(const Tensor& returns_by_sample, double alpha, double drawdown_weight) {
    return add(cvar_loss(flat(returns_by_sample), alpha), mul(mean_max_drawdown(returns_by_sample), drawdown_weight));
}

Tensor l_div(const Tensor& weights, bool diversify) {
    const std::size_t b = weights.dim() == 2 ? weights.shape()[0] : 1;
    Tensor nlogn = sum(mul(weights, log(weights)));
    Tensor per_sample = mul(nlogn, 1.0 / static_cast<double>(b));
    return diversify ? per_sample : neg(per_sample);
}

Tensor l_turn(const Tensor& w_new, const Tensor& w_old, double target, double width) {
    if (w_new.shape() != w_old.shape()) {
        throw DimensionError("l_turn: " + shape_str(w_new.shape()) + " vs " + shape_str(w_old.shape()));
    }
    const bool batched = w_new.dim() == 2;
    Tensor to = batched ? sum(abs(sub(w_new, w_old)), 1) : sum(abs(sub(w_new, w_old)));
    Tensor k = neg(exp(mul(square(add(to, -target)), -1.0 / width)));
    return mean(k);
}

LossBreakdown portfolio_loss(const Tensor& weights, const Tensor& previous, const Tensor& asset_returns,
                             const LossWeights& lw) {
    Tensor rp = portfolio_returns(weights, asset_returns);
    LossBreakdown out;
    out.sharpe = l_sharpe(rp, lw.risk_free);
    out.sortino = l_sortino(rp, lw.risk_free);
    out.risk = l_risk(rp, lw.cvar_alpha, lw.drawdown_weight);
    out.diversification = l_div(weights, lw.diversify);
    out.turnover = l_turn(weights, previous, lw.turnover_target, lw.turnover_width);
    out.total = add(add(add(add(mul(out.sharpe, lw.sharpe), mul(out.sortino, lw.sortino)), mul(out.risk, lw.risk)),
                        mul(out.diversification, lw.diversification)),
                    mul(out.turnover, lw.turnover));
    return out;
}

double mean_return(std::span<const double> r) {
    if (r.empty()) return 0.0;
    return std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
}

double std_return(std::span<const double> r) {
    if (r.empty()) return 0.0;
    const double m = mean_return(r);
    double ss = 0.0;
    for (double x : r) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(r.size()));
}

double downside_dev(std::span<const double> r, double target) {
    if (r.empty()) return 0.0;
    double ss = 0.0;
    for (double x : r) {
        const double d = std::min(x - target, 0.0);
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(r.size()));
}

double sharpe_ratio(std::span<const double> r, double risk_free) {
    return std::sqrt(kTradingDays) * (mean_return(r) - risk_free) / (std_return(r) + kRatioEpsilon);
}

double sortino_ratio(std::span<const double> r, double risk_free) {
    return std::sqrt(kTradingDays) * (mean_return(r) - risk_free) / (downside_dev(r, risk_free) + kRatioEpsilon);
}

double annualized_return(std::span<const double> r) {
    if (r.empty()) return 0.0;
    double growth = 1.0;
    for (double x : r) growth *= 1.0 + x;
    return std::pow(growth, kTradingDays / static_cast<double>(r.size())) - 1.0;
}

double annualized_vol(std::span<const double> r) { return std::sqrt(kTradingDays) * std_return(r); }

double max_drawdown_of_returns(std::span<const double> r) {
    double equity = 1.0, peak = 1.0, worst = 0.0;
    for (double x : r) {
        equity *= 1.0 + x;
        peak = std::max(peak, equity);
        worst = std::min(worst, equity / peak - 1.0);
    }
    return worst;
}

double calmar_ratio(std::span<const double> r) {
    return annualized_return(r) / (std::fabs(max_drawdown_of_returns(r)) + kRatioEpsilon);
}

double turnover(std::span<const double> w_new, std::span<const double> w_old) {
    if (w_new.size() != w_old.size()) throw DimensionError("turnover: weight vectors differ in length");
    double t = 0.0;
    for (std::size_t i = 0; i < w_new.size(); ++i) t += std::fabs(w_new[i] - w_old[i]);
    return t;
}

nlohmann::json MetricSet::to_json() const {
    return nlohmann::json{{"sharpe", sharpe},
                          {"sortino", sortino},
                          {"ann_return", ann_return},
                          {"ann_vol", ann_vol},
                          {"max_drawdown", max_drawdown},
                          {"calmar", calmar},
                          {"avg_turnover", avg_turnover},
                          {"cum_return", cum_return},
                          {"cvar_5", cvar_5},
                          {"days", days}};
}

MetricSet compute_metrics(std::span<const double> daily_returns, std::span<const double> turnovers,
                          double risk_free) {
    MetricSet m;
    m.days = daily_returns.size();
    if (daily_returns.empty()) return m;
    m.sharpe = sharpe_ratio(daily_returns, risk_free);
    m.sortino = sortino_ratio(daily_returns, risk_free);
    m.ann_return = annualized_return(daily_returns);
    m.ann_vol = annualized_vol(daily_returns);
    m.max_drawdown = max_drawdown_of_returns(daily_returns);
    m.calmar = calmar_ratio(daily_returns);
    m.avg_turnover = mean_return(turnovers);
    m.cum_return = cumulative_return(daily_returns);
    m.cvar_5 = cvar(daily_returns, 0.05);
    return m;
}

}  // namespace crisp
