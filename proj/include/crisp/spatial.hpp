#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crisp/nn.hpp"
#include "crisp/tensor.hpp"

namespace crisp {

struct PriorGraph {
    std::vector<std::string> tickers;
    std::map<std::string, std::string> sector;
    std::map<std::string, std::string> region;
    Eigen::MatrixXd adjacency;   // binary, symmetric, zero diagonal
    Eigen::MatrixXd normalized;  // D^-1/2 (A + I) D^-1/2
};

/// Symmetric normalisation with self-loops added first.
Eigen::MatrixXd normalize_adjacency(const Eigen::MatrixXd& adjacency);

/// Edge (i, j) iff the two tickers share a sector or a region.
PriorGraph build_prior(const std::vector<std::string>& tickers,
                       const std::map<std::string, std::string>& sector,
                       const std::map<std::string, std::string>& region);

/// Reads `ticker,sector,region[,...]` rows; extra columns are ignored.
PriorGraph load_prior_csv(const std::string& path, const std::vector<std::string>& tickers);

/// Copies an N x N matrix into a constant tensor, repeated `batch` times
/// along a new leading axis when batch > 0.
Tensor adjacency_tensor(const Eigen::MatrixXd& m, std::size_t batch = 0);

struct SpatialConfig {
    std::size_t input = 31;
    std::size_t embed = 128;
};

/// Input projection followed by two ReLU GCN layers and a 0.5 residual to
/// the projected input.
struct SpatialEncoder {
    SpatialConfig config;
    Linear input;
    Tensor w1;  // embed x embed
    Tensor w2;

    /// x: [B x] N x F per-asset features (window means), adj: matching
    /// [B x] N x N normalised adjacency. Returns [B x] N x embed.
    Tensor forward(const Tensor& x, const Tensor& adj) const;
};

SpatialEncoder make_spatial_encoder(ParameterSet& params, const SpatialConfig& config,
                                    std::mt19937_64& rng, const std::string& prefix = "spatial");

}  // namespace crisp
