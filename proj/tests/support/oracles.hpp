#pragma once

// Brute-force references for the metrics and loss terms, deliberately
// written without the library helpers.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "crisp/tensor.hpp"

namespace crisp::testing {

struct Oracle {
    static double mean(const std::vector<double>& r) {
        long double s = 0.0L;
        for (double x : r) s += x;
        return static_cast<double>(s / r.size());
    }
    static double pstd(const std::vector<double>& r) {
        const double m = mean(r);
        long double s = 0.0L;
        for (double x : r) s += (x - m) * (x - m);
        return std::sqrt(static_cast<double>(s / r.size()));
    }
    static double downside(const std::vector<double>& r, double rf) {
        long double s = 0.0L;
        for (double x : r)
            if (x < rf) s += (x - rf) * (x - rf);
        return std::sqrt(static_cast<double>(s / r.size()));
    }
    // All (i <= j) pairs of the equity curve including the starting value 1.
    static double max_dd(const std::vector<double>& r) {
        std::vector<double> e{1.0};
        for (double x : r) e.push_back(e.back() * (1.0 + x));
        double worst = 0.0;
        for (std::size_t i = 0; i < e.size(); ++i)
            for (std::size_t j = i; j < e.size(); ++j) worst = std::min(worst, e[j] / e[i] - 1.0);
        return worst;
    }
    static double cvar(std::vector<double> r, double alpha) {
        std::sort(r.begin(), r.end());
        const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(alpha * r.size() - 1e-9)));
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i) s += r[i];
        return s / static_cast<double>(k);
    }
    static double ann_return(const std::vector<double>& r) {
        double g = 1.0;
        for (double x : r) g *= 1.0 + x;
        return std::pow(g, 252.0 / r.size()) - 1.0;
    }
    static double sharpe(const std::vector<double>& r, double rf = 0.0) {
        return std::sqrt(252.0) * (mean(r) - rf) / (pstd(r) + 1e-8);
    }
    static double sortino(const std::vector<double>& r, double rf = 0.0) {
        return std::sqrt(252.0) * (mean(r) - rf) / (downside(r, rf) + 1e-8);
    }
    static double calmar(const std::vector<double>& r) { return ann_return(r) / (std::fabs(max_dd(r)) + 1e-8); }
    static double turnover(const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
        return s;
    }
};

inline std::vector<double> random_series(std::mt19937_64& rng, std::size_t n, double mu = 0.0005, double sd = 0.01) {
    std::normal_distribution<double> z(mu, sd);
    std::vector<double> r(n);
    for (auto& x : r) x = z(rng);
    return r;
}

/// B x N rows on the simplex, bounded away from zero.
inline Tensor random_simplex(std::size_t b, std::size_t n, std::mt19937_64& rng, bool requires_grad = false) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> v(b * n);
    for (std::size_t r = 0; r < b; ++r) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += (v[r * n + i] = e(rng) + 0.05);
        for (std::size_t i = 0; i < n; ++i) v[r * n + i] /= s;
    }
    return Tensor({b, n}, std::move(v), requires_grad);
}

}  // namespace crisp::testing
