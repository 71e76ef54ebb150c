#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crisp/allocation.hpp"
#include "crisp/graph.hpp"
#include "crisp/nn.hpp"
#include "crisp/spatial.hpp"
#include "crisp/temporal.hpp"
#include "crisp/tensor.hpp"

namespace crisp {

enum class GraphMode { learnable, static_correlation };

struct ModelConfig {
    std::size_t features = 31;
    std::size_t lstm_hidden = 128;
    std::size_t attention_heads = 4;
    std::size_t attention_head_dim = 64;
    std::size_t embed = 128;
    std::size_t gat_heads = 4;
    std::size_t gat_head_dim = 32;
    std::size_t head_lstm = 32;
    std::size_t mlp_hidden = 64;
    double dropout = 0.3;
    double temperature = 0.8;
    double leaky_slope = 0.2;
    bool use_head_lstm = true;
    bool per_step = true;  // false: the GAT sees only the pooled embedding (a T = 1 sequence)
    GraphMode graph = GraphMode::learnable;
    double correlation_threshold = 0.5;
    WeightBounds bounds;

    /// Full widths.
    static ModelConfig full();
    /// Same architecture with narrower encoders, for single-core experiments.
    static ModelConfig desk();
    void validate(std::size_t assets) const;
    /// Stable text form used for the checkpoint config hash.
    std::string fingerprint() const;
};

struct ForwardResult {
    Tensor scores;   // B x N
    Tensor weights;  // B x N, feasible rows
    /// Per window, per head N x N GAT attention at the final step (empty in
    /// the static variant).
    std::vector<std::vector<Eigen::MatrixXd>> graph_attention;
    /// Per head (B N) x T x T temporal attention.
    std::vector<Tensor> temporal_attention;
    std::size_t empty_graph_fallbacks = 0;
};

/// Binary adjacency with edges where the off-diagonal correlation exceeds
/// `threshold`.
Eigen::MatrixXd correlation_graph(const Eigen::MatrixXd& correlation, double threshold);

class CrispModel {
public:
    /// `prior` is the normalised N x N prior graph.
    CrispModel(const ModelConfig& config, const Eigen::MatrixXd& prior, std::uint64_t seed);

    /// features: B x N x T x F (normalised). `correlations` holds one
    /// trailing correlation matrix per window and is required in static mode.
    ForwardResult forward(const Tensor& features, const std::vector<Eigen::MatrixXd>& correlations,
                          bool training, std::mt19937_64& rng) const;

    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }
    const ModelConfig& config() const { return config_; }
    std::size_t assets() const { return static_cast<std::size_t>(prior_.rows()); }

private:
    ModelConfig config_;
    Eigen::MatrixXd prior_;
    ParameterSet params_;
    TemporalEncoder temporal_;
    SpatialEncoder spatial_;
    GatLayer gat_;
    Linear static_gcn_;
    AllocationHead head_;
};

}  // namespace crisp
