#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crisp/tensor.hpp"

namespace crisp {

inline constexpr std::size_t kFeatureCount = 31;
/// Days of history required before the first feature day of a window.
inline constexpr std::size_t kLookbackPad = 60;
/// Trailing span of the per-day rolling statistics.
inline constexpr std::size_t kRollingDays = 20;

struct FeatureDef {
    std::string name;
    std::string category;
    std::string formula_id;
};

/// The fixed, ordered 31-feature roster (version 1).
const std::array<FeatureDef, kFeatureCount>& feature_roster();
inline constexpr int kFeatureRosterVersion = 1;

/// Roster positions of the crisis-sensitive block.
std::vector<std::size_t> crisis_feature_indices();
/// All roster positions except the crisis block (the 27-feature ablation).
std::vector<std::size_t> non_crisis_feature_indices();

/// Price/volume history for the N assets of one window, oldest column first.
/// The last `window` columns are the feature days; everything before them is
/// lookback.
struct PriceBlock {
    Eigen::MatrixXd close;           // N x L
    Eigen::MatrixXd volume;          // N x L
    Eigen::VectorXd market_returns;  // L, entry 0 unused
    std::vector<bool> defensive;     // N
};

/// Raw (un-normalised) N x T x 31 feature tensor. Each day's vector depends
/// only on data up to and including that day.
Tensor compute_features(const PriceBlock& block, std::size_t window,
                        std::size_t pad = kLookbackPad);

/// Keep the listed feature columns of an N x T x F tensor.
Tensor select_features(const Tensor& features, const std::vector<std::size_t>& keep);

// Window statistics. Population moments throughout.
double mean_of(std::span<const double> x);
double stdev_of(std::span<const double> x);
double skewness_of(std::span<const double> x);
double excess_kurtosis_of(std::span<const double> x);
/// Linear-interpolated empirical quantile of order `q`.
double quantile_of(std::span<const double> x, double q);
/// Mean of the worst ceil(alpha * n) returns (negative for losses).
double cvar(std::span<const double> returns, double alpha = 0.05);
double downside_deviation(std::span<const double> returns, double target = 0.0);
/// Largest peak-to-trough decline of a price path, reported <= 0.
double max_drawdown(std::span<const double> prices);
double cumulative_return(std::span<const double> returns);
/// Wilder RSI in [0, 100]; 50 when the path never moves.
double rsi(std::span<const double> prices, std::size_t period = 14);
/// Mean of |r| / dollar volume over days with positive dollar volume.
double amihud(std::span<const double> returns, std::span<const double> dollar_volumes);
double correlation_of(std::span<const double> x, std::span<const double> y);
double beta_of(std::span<const double> asset, std::span<const double> market);
double lag1_autocorrelation(std::span<const double> x);

/// Per-feature z-score statistics fitted on a training set.
struct FeatureNormalizer {
    std::vector<double> mean;
    std::vector<double> scale;

    /// Fits over every (asset, day) entry of the given N x T x F tensors.
    /// Zero-variance features fall back to unit scale with a warning.
    static FeatureNormalizer fit(std::span<const Tensor> features);
    Tensor apply(const Tensor& features) const;
};

}  // namespace crisp
