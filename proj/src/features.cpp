#include "crisp/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

namespace crisp {

const std::array<FeatureDef, kFeatureCount>& feature_roster() {
    static const std::array<FeatureDef, kFeatureCount> roster = {{
        {"ret_mean", "returns", "mean(r[t-19..t])"},
        {"ret_std", "returns", "std(r[t-19..t])"},
        {"ret_skew", "returns", "skew(r[t-19..t])"},
        {"ret_kurt", "returns", "excess_kurtosis(r[t-19..t])"},
        {"var_5", "risk", "quantile(r[t-19..t], 0.05)"},
        {"cvar_5", "risk", "mean(worst ceil(0.05n) of r[t-19..t])"},
        {"downside_dev", "risk", "sqrt(mean(min(r,0)^2))"},
        {"max_drawdown", "risk", "maxdd(p[t-20..t]) <= 0"},
        {"cum_return", "risk", "prod(1+r[t-19..t]) - 1"},
        {"momentum_20", "momentum", "ln(p[t]/p[t-20])"},
        {"momentum_accel", "momentum", "mom10(t) - mom10(t-10)"},
        {"rsi_14", "momentum", "wilder_rsi(p[t-20..t], 14)"},
        {"volume_rank", "liquidity", "mean cross-sectional volume rank / (N-1)"},
        {"volume_std", "liquidity", "std(log(1+v[t-19..t]))"},
        {"amihud", "liquidity", "mean(|r| / (p*v))"},
        {"volume_stability", "liquidity", "mean(v) / (mean(v) + std(v))"},
        {"ma5_ma20", "technical", "ma5(p) / ma20(p)"},
        {"price_ma20", "technical", "p[t] / ma20(p)"},
        {"vol_percentile", "technical", "rank of vol20(t) among vol20(t-40..t)"},
        {"vol_ratio_5_20", "technical", "std(r[t-4..t]) / std(r[t-19..t])"},
        {"defensive", "crisis", "static defensive-sector flag"},
        {"market_corr", "crisis", "corr(r, m) over 20d"},
        {"market_breadth", "crisis", "fraction of universe with r[t] > 0"},
        {"market_beta", "crisis", "cov(r, m) / var(m) over 20d"},
        {"max_return", "extremes", "max(r[t-19..t])"},
        {"min_return", "extremes", "min(r[t-19..t])"},
        {"autocorr_1", "extremes", "lag-1 autocorrelation of r[t-19..t]"},
        {"up_ratio", "extremes", "fraction of r[t-19..t] > 0"},
        {"price_zscore", "extremes", "(p[t] - ma20) / std(p[t-19..t])"},
        {"mom_x_vol", "interaction", "momentum_20 * ret_std"},
        {"rsi_x_dd", "interaction", "(rsi_14 / 100) * max_drawdown"},
    }};
    return roster;
}

std::vector<std::size_t> crisis_feature_indices() {
    std::vector<std::size_t> idx;
    const auto& roster = feature_roster();
    for (std::size_t f = 0; f < roster.size(); ++f) {
        if (roster[f].category == "crisis") idx.push_back(f);
    }
    return idx;
}

std::vector<std::size_t> non_crisis_feature_indices() {
    std::vector<std::size_t> idx;
    const auto& roster = feature_roster();
    for (std::size_t f = 0; f < roster.size(); ++f) {
        if (roster[f].category != "crisis") idx.push_back(f);
    }
    return idx;
}

double mean_of(std::span<const double> x) {
    if (x.empty()) throw ContractError("mean of empty series");
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double stdev_of(std::span<const double> x) {
    const double m = mean_of(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(x.size()));
}

namespace {

double central_moment(std::span<const double> x, double m, int order) {
    double acc = 0.0;
    for (double v : x) acc += std::pow(v - m, order);
    return acc / static_cast<double>(x.size());
}

}  // namespace

double skewness_of(std::span<const double> x) {
    const double m = mean_of(x);
    const double m2 = central_moment(x, m, 2);
    if (m2 <= 1e-300) return 0.0;
    return central_moment(x, m, 3) / std::pow(m2, 1.5);
}

double excess_kurtosis_of(std::span<const double> x) {
    const double m = mean_of(x);
    const double m2 = central_moment(x, m, 2);
    if (m2 <= 1e-300) return 0.0;
    return central_moment(x, m, 4) / (m2 * m2) - 3.0;
}

double quantile_of(std::span<const double> x, double q) {
    if (x.empty()) throw ContractError("quantile of empty series");
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    const double h = (static_cast<double>(s.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

double cvar(std::span<const double> returns, double alpha) {
    if (returns.empty()) throw ContractError("cvar requires at least one return");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ContractError("cvar alpha must lie in (0, 1]");
    const double n = static_cast<double>(returns.size());
    auto k = static_cast<std::size_t>(std::ceil(alpha * n - 1e-9));
    k = std::clamp<std::size_t>(k, 1, returns.size());
    std::vector<double> s(returns.begin(), returns.end());
    std::partial_sort(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(k), s.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) acc += s[i];
    return acc / static_cast<double>(k);
}

double downside_deviation(std::span<const double> returns, double target) {
    if (returns.empty()) throw ContractError("downside deviation of empty series");
    double ss = 0.0;
    for (double r : returns) {
        double d = std::min(r - target, 0.0);
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(returns.size()));
}

double max_drawdown(std::span<const double> prices) {
    if (prices.empty()) throw ContractError("max drawdown of empty path");
    double peak = prices[0];
    double worst = 0.0;
    for (double p : prices) {
        peak = std::max(peak, p);
        worst = std::min(worst, p / peak - 1.0);
    }
    return worst;
}

double cumulative_return(std::span<const double> returns) {
    double g = 1.0;
    for (double r : returns) g *= 1.0 + r;
    return g - 1.0;
}

double rsi(std::span<const double> prices, std::size_t period) {
    if (period == 0 || prices.size() < period + 1) {
        throw ContractError("rsi needs at least " + std::to_string(period + 1) + " prices, got " +
                            std::to_string(prices.size()));
    }
    double gain = 0.0, loss = 0.0;
    for (std::size_t k = 1; k <= period; ++k) {
        double d = prices[k] - prices[k - 1];
        gain += std::max(d, 0.0);
        loss += std::max(-d, 0.0);
    }
    const double p = static_cast<double>(period);
    gain /= p;
    loss /= p;
    for (std::size_t k = period + 1; k < prices.size(); ++k) {
        double d = prices[k] - prices[k - 1];
        gain = (gain * (p - 1.0) + std::max(d, 0.0)) / p;
        loss = (loss * (p - 1.0) + std::max(-d, 0.0)) / p;
    }
    if (gain == 0.0 && loss == 0.0) return 50.0;
    if (loss == 0.0) return 100.0;
    return 100.0 - 100.0 / (1.0 + gain / loss);
}

double amihud(std::span<const double> returns, std::span<const double> dollar_volumes) {
    if (returns.size() != dollar_volumes.size()) {
        throw ContractError("amihud: returns and dollar volumes differ in length");
    }
    double acc = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < returns.size(); ++k) {
        if (!(dollar_volumes[k] > 0.0)) continue;
        acc += std::fabs(returns[k]) / dollar_volumes[k];
        ++used;
    }
    if (used == 0) throw ContractError("amihud: every day has zero volume");
    return acc / static_cast<double>(used);
}

double correlation_of(std::span<const double> x, std::span<const double> y) {
    const double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sxy += (x[k] - mx) * (y[k] - my);
        sxx += (x[k] - mx) * (x[k] - mx);
        syy += (y[k] - my) * (y[k] - my);
    }
    if (sxx <= 1e-300 || syy <= 1e-300) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

double beta_of(std::span<const double> asset, std::span<const double> market) {
    const double ma = mean_of(asset), mm = mean_of(market);
    double cov = 0.0, var = 0.0;
    for (std::size_t k = 0; k < asset.size(); ++k) {
        cov += (asset[k] - ma) * (market[k] - mm);
        var += (market[k] - mm) * (market[k] - mm);
    }
    if (var <= 1e-300) return 0.0;
    return cov / var;
}

double lag1_autocorrelation(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean_of(x);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        den += (x[k] - m) * (x[k] - m);
        if (k > 0) num += (x[k] - m) * (x[k - 1] - m);
    }
    if (den <= 1e-300) return 0.0;
    return num / den;
}

Tensor compute_features(const PriceBlock& block, std::size_t window, std::size_t pad) {
    const auto n_assets = static_cast<std::size_t>(block.close.rows());
    const auto length = static_cast<std::size_t>(block.close.cols());
    if (pad < kLookbackPad) {
        throw ContractError("compute_features: rolling features need a lookback pad of " +
                            std::to_string(kLookbackPad) + " days, got " + std::to_string(pad));
    }
    if (length < window + pad) {
        throw ContractError("compute_features: block of " + std::to_string(length) +
                            " days is too short for a " + std::to_string(window) +
                            "-day window plus the required " + std::to_string(pad) +
                            "-day lookback pad");
    }
    if (block.volume.rows() != block.close.rows() || block.volume.cols() != block.close.cols() ||
        static_cast<std::size_t>(block.market_returns.size()) != length ||
        block.defensive.size() != n_assets) {
        throw DimensionError("compute_features: price, volume, market and defensive inputs disagree");
    }

    // r(i, k) is the return into day k; column 0 has none.
    Eigen::MatrixXd ret = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_assets),
                                                static_cast<Eigen::Index>(length));
    for (std::size_t i = 0; i < n_assets; ++i) {
        for (std::size_t k = 1; k < length; ++k) {
            ret(i, k) = block.close(i, k) / block.close(i, k - 1) - 1.0;
        }
    }
    // Cross-sectional volume ranks, ties averaged, scaled to [0, 1].
    Eigen::MatrixXd vrank(static_cast<Eigen::Index>(n_assets), static_cast<Eigen::Index>(length));
    for (std::size_t k = 0; k < length; ++k) {
        for (std::size_t i = 0; i < n_assets; ++i) {
            double below = 0.0, equal = 0.0;
            for (std::size_t j = 0; j < n_assets; ++j) {
                if (block.volume(j, k) < block.volume(i, k)) below += 1.0;
                else if (block.volume(j, k) == block.volume(i, k)) equal += 1.0;
            }
            double rank = below + (equal - 1.0) / 2.0;
            vrank(i, k) = n_assets > 1 ? rank / static_cast<double>(n_assets - 1) : 0.5;
        }
    }

    const std::size_t first = length - window;
    const std::size_t roll = kRollingDays;
    const std::size_t vol_hist = pad - roll;  // vol20 lags compared against
    std::vector<double> out(n_assets * window * kFeatureCount);
    std::vector<double> r(roll), m(roll), p(roll + 1), v(roll), logv(roll), dv(roll), vols;

    // Rolling 20-day volatility for every day with a full trailing window.
    Eigen::MatrixXd vol20 = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_assets),
                                                  static_cast<Eigen::Index>(length));
    {
        std::vector<double> w(roll);
        for (std::size_t i = 0; i < n_assets; ++i) {
            for (std::size_t k = roll; k < length; ++k) {
                for (std::size_t j = 0; j < roll; ++j) w[j] = ret(i, k + 1 - roll + j);
                vol20(i, k) = stdev_of(w);
            }
        }
    }

    for (std::size_t i = 0; i < n_assets; ++i) {
        for (std::size_t t = first; t < length; ++t) {
            for (std::size_t j = 0; j < roll; ++j) {
                std::size_t k = t + 1 - roll + j;
                r[j] = ret(i, k);
                m[j] = block.market_returns[static_cast<Eigen::Index>(k)];
                v[j] = block.volume(i, k);
                logv[j] = std::log1p(std::max(v[j], 0.0));
                dv[j] = block.close(i, k) * v[j];
            }
            for (std::size_t j = 0; j <= roll; ++j) p[j] = block.close(i, t - roll + j);

            const double price = block.close(i, t);
            const double ma20 = std::accumulate(p.begin() + 1, p.end(), 0.0) / static_cast<double>(roll);
            const double ma5 = std::accumulate(p.end() - 5, p.end(), 0.0) / 5.0;
            const double std20 = stdev_of(r);
            const double std5 = stdev_of(std::span<const double>(r).last(5));
            const double mom20 = std::log(price / block.close(i, t - roll));
            const double mom10_now = price / block.close(i, t - 10) - 1.0;
            const double mom10_prev = block.close(i, t - 10) / block.close(i, t - 20) - 1.0;
            const double rsi14 = rsi(p, 14);
            const double dd = max_drawdown(p);

            vols.clear();
            for (std::size_t lag = 0; lag <= vol_hist; ++lag) vols.push_back(vol20(i, t - lag));
            const double vol_pct =
                static_cast<double>(std::count_if(vols.begin(), vols.end(),
                                                  [&](double x) { return x <= vols.front(); })) /
                static_cast<double>(vols.size());

            double illiq = 0.0;
            if (std::any_of(dv.begin(), dv.end(), [](double x) { return x > 0.0; })) {
                illiq = amihud(r, dv);
            }
            const double vmean = mean_of(v);
            const double vstd = stdev_of(v);
            double breadth = 0.0;
            for (std::size_t j = 0; j < n_assets; ++j) breadth += ret(j, t) > 0.0 ? 1.0 : 0.0;
            breadth /= static_cast<double>(n_assets);
            double vr = 0.0;
            for (std::size_t j = 0; j < roll; ++j) vr += vrank(i, t + 1 - roll + j);
            vr /= static_cast<double>(roll);
            const double pstd = stdev_of(std::span<const double>(p).last(roll));

            std::array<double, kFeatureCount> f{};
            f[0] = mean_of(r);
            f[1] = std20;
            f[2] = skewness_of(r);
            f[3] = excess_kurtosis_of(r);
            f[4] = quantile_of(r, 0.05);
            f[5] = cvar(r, 0.05);
            f[6] = downside_deviation(r);
            f[7] = dd;
            f[8] = cumulative_return(r);
            f[9] = mom20;
            f[10] = mom10_now - mom10_prev;
            f[11] = rsi14;
            f[12] = vr;
            f[13] = stdev_of(logv);
            f[14] = illiq;
            f[15] = vmean > 0.0 ? vmean / (vmean + vstd) : 0.0;
            f[16] = ma5 / ma20;
            f[17] = price / ma20;
            f[18] = vol_pct;
            f[19] = std20 > 0.0 ? std5 / std20 : 1.0;
            f[20] = block.defensive[i] ? 1.0 : 0.0;
            f[21] = correlation_of(r, m);
            f[22] = breadth;
            f[23] = beta_of(r, m);
            f[24] = *std::max_element(r.begin(), r.end());
            f[25] = *std::min_element(r.begin(), r.end());
            f[26] = lag1_autocorrelation(r);
            f[27] = static_cast<double>(std::count_if(r.begin(), r.end(), [](double x) { return x > 0.0; })) /
                    static_cast<double>(roll);
            f[28] = pstd > 0.0 ? (price - ma20) / pstd : 0.0;
            f[29] = mom20 * std20;
            f[30] = rsi14 / 100.0 * dd;

            double* dst = out.data() + (i * window + (t - first)) * kFeatureCount;
            std::copy(f.begin(), f.end(), dst);
        }
    }
    return Tensor({n_assets, window, kFeatureCount}, std::move(out));
}

Tensor select_features(const Tensor& features, const std::vector<std::size_t>& keep) {
    if (features.dim() != 3) throw DimensionError("select_features expects N x T x F");
    const std::size_t f_in = features.shape()[2];
    const std::size_t rows = features.numel() / f_in;
    std::vector<double> out(rows * keep.size());
    auto v = features.values();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < keep.size(); ++c) {
            if (keep[c] >= f_in) throw DimensionError("select_features: column out of range");
            out[r * keep.size() + c] = v[r * f_in + keep[c]];
        }
    }
    return Tensor({features.shape()[0], features.shape()[1], keep.size()}, std::move(out));
}

FeatureNormalizer FeatureNormalizer::fit(std::span<const Tensor> features) {
    if (features.empty()) throw ContractError("FeatureNormalizer::fit on empty training set");
    const std::size_t f_dim = features.front().shape().back();
    std::vector<double> sum(f_dim, 0.0);
    std::size_t count = 0;
    for (const auto& t : features) {
        auto v = t.values();
        for (std::size_t k = 0; k < v.size(); ++k) sum[k % f_dim] += v[k];
        count += v.size() / f_dim;
    }
    FeatureNormalizer norm;
    norm.mean.resize(f_dim);
    norm.scale.assign(f_dim, 0.0);
    for (std::size_t f = 0; f < f_dim; ++f) norm.mean[f] = sum[f] / static_cast<double>(count);
    for (const auto& t : features) {
        auto v = t.values();
        for (std::size_t k = 0; k < v.size(); ++k) {
            double d = v[k] - norm.mean[k % f_dim];
            norm.scale[k % f_dim] += d * d;
        }
    }
    for (std::size_t f = 0; f < f_dim; ++f) {
        double sd = std::sqrt(norm.scale[f] / static_cast<double>(count));
        if (sd < 1e-12) {
            spdlog::warn("feature {} has zero variance on the training set; using unit scale", f);
            sd = 1.0;
        }
        norm.scale[f] = sd;
    }
    return norm;
}

Tensor FeatureNormalizer::apply(const Tensor& features) const {
    const std::size_t f_dim = features.shape().back();
    if (f_dim != mean.size()) {
        throw DimensionError("FeatureNormalizer: fitted on " + std::to_string(mean.size()) +
                             " features, got shape " + shape_str(features.shape()));
    }
    auto v = features.values();
    std::vector<double> out(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
        out[k] = (v[k] - mean[k % f_dim]) / scale[k % f_dim];
    }
    return Tensor(features.shape(), std::move(out));
}

}  // namespace crisp
