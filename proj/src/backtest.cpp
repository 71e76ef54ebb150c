#include "crisp/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <spdlog/spdlog.h>

#include "crisp/allocation.hpp"
#include "crisp/ops.hpp"

namespace crisp {

std::vector<std::size_t> rebalance_schedule(const Universe& u, const Date& test_start, std::size_t horizon,
                                            std::size_t min_history) {
    std::vector<std::size_t> out;
    if (horizon == 0) throw ContractError("rebalance horizon must be positive");
    const std::size_t d = u.n_days();
    std::size_t e = min_history;
    while (e + 1 < d && u.calendar[e + 1] < test_start) ++e;
    for (; e + horizon < d; e += horizon) out.push_back(e);
    return out;
}

BacktestReport run_backtest(Strategy& strategy, const Universe& u, const std::vector<std::size_t>& schedule,
                            const BacktestOptions& opts) {
    const std::size_t n = u.n_assets();
    opts.bounds.validate(n);
    strategy.reset();
    BacktestReport rep;
    rep.strategy = strategy.name();
    std::vector<double> prev = equal_weight(n);
    for (std::size_t k = 0; k < schedule.size(); ++k) {
        const std::size_t e = schedule[k];
        if (e + opts.horizon >= u.n_days()) throw ContractError("holding period runs past the data");
        if (k > 0 && e < schedule[k - 1] + opts.horizon) {
            throw ContractError("rebalance days must be increasing and at least one horizon apart");
        }
        const Universe history = u.prefix(e + 1);
        Allocation a = strategy.allocate(RebalanceContext{history, e, prev});
        if (a.flagged) ++rep.flagged_periods;
        if (a.weights.size() != n || !opts.bounds.feasible(a.weights, opts.feasibility_tol)) {
            spdlog::warn("{}: infeasible weights on {}, using equal weight", rep.strategy,
                         u.calendar[e].to_string());
            ++rep.infeasible_fallbacks;
            a.weights = equal_weight(n);
        }
        rep.rebalance_dates.push_back(u.calendar[e]);
        rep.turnovers.push_back(turnover(a.weights, prev));
        for (std::size_t d = 1; d <= opts.horizon; ++d) {
            double r = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                r += a.weights[i] * u.returns(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(e + d));
            rep.daily_returns.push_back(r);
            rep.days.push_back(u.calendar[e + d]);
        }
        if (!a.attention.empty()) {
            std::optional<Regime> regime;
            if (!u.regimes.empty()) regime = u.regimes[e];
            rep.attention.push_back(make_attention_record(u.calendar[e], std::move(a.attention), regime));
        }
        prev = a.weights;
        rep.weights.push_back(std::move(a.weights));
    }
    rep.equity.reserve(rep.daily_returns.size() + 1);
    rep.equity.push_back(1.0);
    for (double r : rep.daily_returns) rep.equity.push_back(rep.equity.back() * (1.0 + r));
    rep.metrics = compute_metrics(rep.daily_returns, rep.turnovers, opts.risk_free);
    return rep;
}

// ---------------------------------------------------------------------------

std::vector<double> equal_weight(std::size_t n) {
    if (n == 0) throw ContractError("equal_weight needs at least one asset");
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

MomentEstimate trailing_moments(const Universe& u, std::size_t day, std::size_t lookback) {
    if (day >= u.n_days() || day < lookback || lookback < 2) {
        throw ContractError("trailing_moments needs " + std::to_string(lookback) + " returns before day " +
                            std::to_string(day));
    }
    const auto n = static_cast<Eigen::Index>(u.n_assets());
    // Returns on days day-lookback+1 .. day; day 0 carries no return.
    Eigen::MatrixXd r = u.returns.block(0, static_cast<Eigen::Index>(day + 1 - lookback), n,
                                        static_cast<Eigen::Index>(lookback));
    MomentEstimate m;
    m.mean = r.rowwise().mean();
    Eigen::MatrixXd c = r.colwise() - m.mean;
    m.cov = c * c.transpose() / static_cast<double>(lookback - 1);
    return m;
}

std::vector<double> mean_variance_weights(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma,
                                          const WeightBounds& bounds, const MeanVarianceOptions& opts) {
    const auto n = mu.size();
    Eigen::MatrixXd s = sigma + opts.ridge * Eigen::MatrixXd::Identity(n, n);
    std::vector<double> w = project_constraints(equal_weight(static_cast<std::size_t>(n)), bounds);
    for (std::size_t it = 0; it < opts.iterations; ++it) {
        Eigen::Map<const Eigen::VectorXd> wv(w.data(), n);
        Eigen::VectorXd grad = mu - 2.0 * opts.risk_aversion * (s * wv);
        std::vector<double> next(w);
        for (Eigen::Index i = 0; i < n; ++i) next[static_cast<std::size_t>(i)] += opts.step * grad(i);
        w = project_constraints(next, bounds);
    }
    return w;
}

std::vector<double> risk_parity_weights(const Eigen::MatrixXd& sigma, double tol, std::size_t max_sweeps) {
    const auto n = sigma.rows();
    if (n == 0 || sigma.cols() != n) throw DimensionError("risk parity needs a square covariance");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(sigma(i, i) > 0.0)) throw ContractError("risk parity needs positive variances");
    }
    const double b = 1.0 / static_cast<double>(n);
    // Minimiser of x'Sx/2 - b sum ln x has x_i (Sx)_i = b for all i.
    Eigen::VectorXd x = (1.0 / sigma.diagonal().array().sqrt()).matrix();
    x /= x.sum();
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double change = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double c = sigma.row(i).dot(x) - sigma(i, i) * x(i);
            const double xi = (-c + std::sqrt(c * c + 4.0 * sigma(i, i) * b)) / (2.0 * sigma(i, i));
            change = std::max(change, std::fabs(xi - x(i)) / std::max(std::fabs(xi), 1e-300));
            x(i) = xi;
        }
        if (change < tol) break;
    }
    x /= x.sum();
    return {x.data(), x.data() + n};
}

Allocation EqualWeightStrategy::allocate(const RebalanceContext& ctx) {
    return {equal_weight(ctx.history.n_assets()), {}, false};
}

Allocation MeanVarianceStrategy::allocate(const RebalanceContext& ctx) {
    const std::size_t n = ctx.history.n_assets();
    if (ctx.day < lookback_) return {project_constraints(equal_weight(n), bounds_), {}, true};
    auto m = trailing_moments(ctx.history, ctx.day, lookback_);
    // Annualised moments so the fixed step size moves the portfolio.
    return {mean_variance_weights(m.mean * 252.0, m.cov * 252.0, bounds_, opts_), {}, false};
}

Allocation RiskParityStrategy::allocate(const RebalanceContext& ctx) {
    const std::size_t n = ctx.history.n_assets();
    if (ctx.day < lookback_) return {project_constraints(equal_weight(n), bounds_), {}, true};
    auto m = trailing_moments(ctx.history, ctx.day, lookback_);
    // A flat asset has no risk to balance.
    if (!(m.cov.diagonal().minCoeff() > 0.0)) return {project_constraints(equal_weight(n), bounds_), {}, true};
    return {project_constraints(risk_parity_weights(m.cov), bounds_), {}, false};
}

Allocation RandomSelectionStrategy::allocate(const RebalanceContext& ctx) {
    return {random_feasible_weights(ctx.history.n_assets(), rng_, bounds_), {}, false};
}

ModelStrategy::ModelStrategy(std::string name, const CrispModel& model, FeatureNormalizer normalizer,
                             std::vector<std::size_t> feature_subset, WindowOptions window)
    : name_(std::move(name)),
      model_(model),
      normalizer_(std::move(normalizer)),
      subset_(std::move(feature_subset)),
      window_(window) {}

Allocation ModelStrategy::allocate(const RebalanceContext& ctx) {
    FeatureWindow w = make_window_at(ctx.history, ctx.day, window_);
    Tensor f = subset_.empty() ? w.features : select_features(w.features, subset_);
    f = normalizer_.apply(f);
    const Shape s = f.shape();
    NoGradGuard guard;
    std::mt19937_64 unused(0);
    auto out = model_.forward(reshape(f, {1, s[0], s[1], s[2]}), {w.correlation}, false, unused);
    Allocation a;
    auto v = out.weights.values();
    a.weights.assign(v.begin(), v.end());
    if (!out.graph_attention.empty()) a.attention = std::move(out.graph_attention[0]);
    a.flagged = out.empty_graph_fallbacks > 0;
    return a;
}

// ---------------------------------------------------------------------------

nlohmann::json report_json(const std::vector<BacktestReport>& reports) {
    nlohmann::json j;
    j["assumptions"] = {
        {"intra_period_drift", "ignored; weights held at target every day of the holding period"},
        {"transaction_costs", "none; turnover reported separately"},
        {"ann_return", "geometric annualisation over 252 trading days"},
        {"cum_return", "compounded over the whole test period"},
    };
    for (const auto& r : reports) {
        nlohmann::json s = r.metrics.to_json();
        s["periods"] = r.rebalance_dates.size();
        s["days"] = r.daily_returns.size();
        s["infeasible_fallbacks"] = r.infeasible_fallbacks;
        s["flagged_periods"] = r.flagged_periods;
        j["strategies"][r.strategy] = s;
    }
    return j;
}

void write_equity_csv(const std::vector<BacktestReport>& reports, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(17);
    out << "date,strategy,equity\n";
    for (const auto& r : reports) {
        if (r.rebalance_dates.empty()) continue;
        out << r.rebalance_dates.front().to_string() << ',' << r.strategy << ',' << r.equity[0] << '\n';
        for (std::size_t d = 0; d < r.days.size(); ++d)
            out << r.days[d].to_string() << ',' << r.strategy << ',' << r.equity[d + 1] << '\n';
    }
}

void write_weights_csv(const std::vector<BacktestReport>& reports, const std::vector<std::string>& tickers,
                       const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(17);
    out << "date,strategy";
    for (const auto& t : tickers) out << ',' << t;
    out << ",turnover\n";
    for (const auto& r : reports) {
        for (std::size_t k = 0; k < r.weights.size(); ++k) {
            out << r.rebalance_dates[k].to_string() << ',' << r.strategy;
            for (double w : r.weights[k]) out << ',' << w;
            out << ',' << r.turnovers[k] << '\n';
        }
    }
}

}  // namespace crisp
