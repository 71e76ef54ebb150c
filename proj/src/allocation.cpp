#include "crisp/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crisp/ops.hpp"

namespace crisp {

void WeightBounds::validate(std::size_t n) const {
    if (!(lo >= 0.0 && lo <= hi)) throw ConfigError("weight bounds need 0 <= lo <= hi");
    const double nd = static_cast<double>(n);
    if (n == 0 || nd * lo > 1.0 + 1e-12 || nd * hi < 1.0 - 1e-12) {
        throw ConfigError("weight bounds [" + std::to_string(lo) + ", " + std::to_string(hi) +
                          "] admit no fully invested portfolio of " + std::to_string(n) + " assets");
    }
}

bool WeightBounds::feasible(const std::vector<double>& w, double tol) const {
    double s = 0.0;
    for (double x : w) {
        if (!(x >= lo - tol && x <= hi + tol)) return false;
        s += x;
    }
    return std::fabs(s - 1.0) <= tol;
}

namespace {

void project_row(const double* in, double* out, std::size_t n, const WeightBounds& b) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(in[i])) throw ContractError("project_constraints: non-finite weight");
        out[i] = std::clamp(in[i], b.lo, b.hi);
    }
    // Each pass either restores the sum or pins at least one more coordinate
    // to a bound, so n + 1 passes always suffice.
    for (std::size_t pass = 0; pass <= n + 1; ++pass) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += out[i];
        const double r = 1.0 - s;
        if (std::fabs(r) <= 1e-15) break;
        std::size_t movable = 0;
        for (std::size_t i = 0; i < n; ++i) movable += r > 0.0 ? out[i] < b.hi : out[i] > b.lo;
        if (movable == 0) break;
        const double delta = r / static_cast<double>(movable);
        for (std::size_t i = 0; i < n; ++i) {
            if (r > 0.0 ? out[i] < b.hi : out[i] > b.lo) out[i] = std::clamp(out[i] + delta, b.lo, b.hi);
        }
    }
}

}  // namespace

std::vector<double> project_constraints(const std::vector<double>& w, const WeightBounds& bounds) {
    bounds.validate(w.size());
    std::vector<double> out(w.size());
    project_row(w.data(), out.data(), w.size(), bounds);
    return out;
}

Tensor project_constraints(const Tensor& w, const WeightBounds& bounds) {
    const std::size_t n = w.shape().back();
    bounds.validate(n);
    const std::size_t rows = w.numel() / n;
    std::vector<double> out(w.numel());
    auto in = w.values();
    for (std::size_t r = 0; r < rows; ++r) project_row(in.data() + r * n, out.data() + r * n, n, bounds);

    // Jacobian: for rows i, j both strictly inside the bounds after the
    // projection and j strictly inside before it, dw_i/dv_j = [i=j] - 1/|I|.
    // Coordinates pinned at a bound have zero derivative.
    auto pw = w.data();
    return make_op("project_constraints", w.shape(), std::move(out), {w},
                   [n, rows, bounds, pw](detail::TensorData& o) {
                       if (!pw->requires_grad) return;
                       double* gin = pw->grad.data();
                       for (std::size_t r = 0; r < rows; ++r) {
                           const double* y = o.values.data() + r * n;
                           const double* g = o.grad.data() + r * n;
                           const double* v = pw->values.data() + r * n;
                           double gsum = 0.0;
                           std::size_t free = 0;
                           for (std::size_t i = 0; i < n; ++i) {
                               if (y[i] > bounds.lo && y[i] < bounds.hi) gsum += g[i], ++free;
                           }
                           if (free == 0) continue;
                           const double gmean = gsum / static_cast<double>(free);
                           for (std::size_t j = 0; j < n; ++j) {
                               const bool inside_after = y[j] > bounds.lo && y[j] < bounds.hi;
                               const bool inside_before = v[j] > bounds.lo && v[j] < bounds.hi;
                               if (inside_after && inside_before) gin[r * n + j] += g[j] - gmean;
                           }
                       }
                   });
}

std::vector<double> score_to_weights(const std::vector<double>& scores, double tau,
                                     const WeightBounds& bounds) {
    Tensor s({scores.size()}, scores);
    Tensor w = score_to_weights(s, tau, bounds);
    return {w.values().begin(), w.values().end()};
}

Tensor score_to_weights(const Tensor& scores, double tau, const WeightBounds& bounds) {
    return project_constraints(softmax(scores, -1, tau), bounds);
}

std::vector<double> random_feasible_weights(std::size_t n, std::mt19937_64& rng,
                                            const WeightBounds& bounds) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> w(n);
    for (auto& x : w) x = e(rng);
    const double s = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& x : w) x /= s;
    return project_constraints(w, bounds);
}

Tensor AllocationHead::aggregate(const Tensor& z_seq) const {
    if (config.use_lstm) return lstm.run(z_seq).last;
    return tanh(mean_projection.forward(mean(z_seq, 1)));
}

Tensor AllocationHead::scores(const Tensor& aggregated, bool training, std::mt19937_64& rng) const {
    Tensor h = dropout(relu(hidden.forward(aggregated)), config.dropout, training, rng);
    Tensor s = score.forward(h);
    return reshape(s, {aggregated.shape()[0]});
}

AllocationHead make_allocation_head(ParameterSet& params, const HeadConfig& config,
                                    std::mt19937_64& rng, const std::string& prefix) {
    if (!(config.temperature > 0.0)) throw ConfigError("softmax temperature must be positive");
    if (!(config.dropout >= 0.0 && config.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    AllocationHead h;
    h.config = config;
    if (config.use_lstm) {
        h.lstm = make_lstm(params, prefix + ".lstm", config.input, config.lstm_hidden, rng);
    } else {
        h.mean_projection = make_linear(params, prefix + ".mean_proj", config.input, config.lstm_hidden, rng);
    }
    h.hidden = make_linear(params, prefix + ".mlp1", config.lstm_hidden, config.mlp_hidden, rng);
    h.score = make_linear(params, prefix + ".mlp2", config.mlp_hidden, 1, rng);
    return h;
}

}  // namespace crisp
