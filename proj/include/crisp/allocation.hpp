#pragma once

#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "crisp/nn.hpp"
#include "crisp/tensor.hpp"

namespace crisp {

/// Invalid or inconsistent configuration detected at startup.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct WeightBounds {
    double lo = 0.02;
    double hi = 0.25;

    /// Throws ConfigError unless n * lo <= 1 <= n * hi and 0 <= lo <= hi.
    void validate(std::size_t n) const;
    bool feasible(const std::vector<double>& w, double tol = 1e-9) const;
};

/// Projects onto {sum w = 1, lo <= w <= hi}: clip, then spread the missing or
/// excess mass equally over coordinates that can still move, repeating until
/// the sum is restored. The result is clamp(clip(w) + lambda) for the unique
/// lambda that makes it sum to one.
std::vector<double> project_constraints(const std::vector<double>& w, const WeightBounds& bounds = {});

/// Row-wise differentiable version over the last axis of `w`.
Tensor project_constraints(const Tensor& w, const WeightBounds& bounds = {});

/// softmax(scores / tau) followed by the constraint projection.
std::vector<double> score_to_weights(const std::vector<double>& scores, double tau = 0.8,
                                     const WeightBounds& bounds = {});
Tensor score_to_weights(const Tensor& scores, double tau = 0.8, const WeightBounds& bounds = {});

/// A random feasible allocation: projected flat Dirichlet draw.
std::vector<double> random_feasible_weights(std::size_t n, std::mt19937_64& rng,
                                            const WeightBounds& bounds = {});

struct HeadConfig {
    std::size_t input = 256;
    std::size_t lstm_hidden = 32;
    std::size_t mlp_hidden = 64;
    double dropout = 0.3;
    double temperature = 0.8;
    bool use_lstm = true;  // false: mean over steps then linear + tanh
};

/// Per-asset sequence aggregation, scoring MLP and constrained softmax.
struct AllocationHead {
    HeadConfig config;
    Lstm lstm;
    Linear mean_projection;  // used when use_lstm is false
    Linear hidden;
    Linear score;

    /// z_seq: R x T x input -> R x lstm_hidden.
    Tensor aggregate(const Tensor& z_seq) const;
    /// R x lstm_hidden -> R scores.
    Tensor scores(const Tensor& aggregated, bool training, std::mt19937_64& rng) const;
};

AllocationHead make_allocation_head(ParameterSet& params, const HeadConfig& config,
                                    std::mt19937_64& rng, const std::string& prefix = "head");

}  // namespace crisp
