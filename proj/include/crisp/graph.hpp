#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "crisp/date.hpp"
#include "crisp/market_data.hpp"
#include "crisp/tensor.hpp"

namespace crisp {

struct GatConfig {
    std::size_t input = 256;
    std::size_t heads = 4;
    std::size_t head_dim = 32;
    double slope = 0.2;
};

struct GatOutput {
    Tensor refined;             // [R x] N x heads * head_dim
    std::vector<Tensor> alpha;  // per head, [R x] N x N, rows sum to one
};

/// Multi-head graph attention over the fully connected graph, self-edge
/// included in every softmax.
struct GatLayer {
    GatConfig config;
    Tensor weight;     // input x heads * head_dim
    Tensor attention;  // heads x 2 * head_dim, [source half | target half]

    GatOutput forward(const Tensor& z) const;
};

GatLayer make_gat(ParameterSet& params, const GatConfig& config, std::mt19937_64& rng,
                  const std::string& prefix = "gat");

/// [h_temp ; h_spat] along the last axis.
Tensor fuse(const Tensor& h_temp, const Tensor& h_spat);
/// z_init + 0.5 [refined ; 0].
Tensor residual_combine(const Tensor& z_init, const Tensor& refined);

/// Off-diagonal directed edges of the candidate graph, N (N - 1).
std::size_t candidate_edge_count(std::size_t n);

inline constexpr double kLowAttention = 0.1;
inline constexpr double kHighAttention = 0.3;

struct BinCounts {
    std::size_t low = 0;   // alpha < 0.1
    std::size_t mid = 0;   // 0.1 <= alpha <= 0.3
    std::size_t high = 0;  // alpha > 0.3
    std::size_t total() const { return low + mid + high; }
};

/// Bins the off-diagonal entries of an attention matrix.
BinCounts bin_edges(const Eigen::MatrixXd& alpha);
/// Per-row count of off-diagonal entries with alpha >= 0.1.
std::vector<std::size_t> effective_degrees(const Eigen::MatrixXd& alpha);
/// Off-diagonal attention mass pointing at cluster members divided by all
/// off-diagonal mass; in [0, 1].
double cluster_share(const Eigen::MatrixXd& alpha, const std::vector<bool>& cluster);

struct AttentionRecord {
    Date window_end_date;
    std::optional<Regime> regime;
    std::vector<Eigen::MatrixXd> heads;
    Eigen::MatrixXd mean;
    BinCounts bins;  // on the head mean
    std::vector<std::size_t> effective_degree;
};

AttentionRecord make_attention_record(const Date& date, std::vector<Eigen::MatrixXd> heads,
                                      std::optional<Regime> regime = std::nullopt);

struct SparsityReport {
    std::size_t records = 0;
    std::size_t nodes = 0;
    double low_fraction = 0.0;
    double mid_fraction = 0.0;
    double high_fraction = 0.0;
    std::vector<double> per_head_low_fraction;
    std::vector<double> mean_effective_degree;  // per node, averaged over records
    double average_effective_degree = 0.0;
    double cluster_share = 0.0;
    std::optional<double> crisis_cluster_share;  // records labelled crisis
    std::optional<double> calm_cluster_share;
};

SparsityReport sparsity_report(const std::vector<AttentionRecord>& records,
                               const std::vector<bool>& cluster);

/// `date,head,i,j,alpha` rows for every head and the head mean (head = mean).
void write_attention_csv(const std::vector<AttentionRecord>& records,
                         const std::vector<std::string>& tickers, const std::string& path);
nlohmann::json sparsity_json(const SparsityReport& report, const std::vector<std::string>& tickers);

}  // namespace crisp
