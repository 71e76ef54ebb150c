#include "crisp/model.hpp"

#include <sstream>

#include "crisp/ops.hpp"

namespace crisp {

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.lstm_hidden = 16;
    c.attention_heads = 4;
    c.attention_head_dim = 8;
    c.embed = 32;
    c.gat_heads = 4;
    c.gat_head_dim = 8;
    c.head_lstm = 16;
    c.mlp_hidden = 32;
    return c;
}

void ModelConfig::validate(std::size_t assets) const {
    if (features == 0 || lstm_hidden == 0 || attention_heads == 0 || attention_head_dim == 0 ||
        embed == 0 || gat_heads == 0 || gat_head_dim == 0 || head_lstm == 0 || mlp_hidden == 0) {
        throw ConfigError("model widths must be positive");
    }
    if (gat_heads * gat_head_dim != embed) {
        throw ConfigError("gat_heads * gat_head_dim must equal embed (" + std::to_string(embed) +
                          ") for the zero-padded residual");
    }
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (assets < 2) throw ConfigError("the model needs at least two assets");
    bounds.validate(assets);
}

std::string ModelConfig::fingerprint() const {
    std::ostringstream s;
    s.precision(17);
    s << "features=" << features << ";lstm_hidden=" << lstm_hidden << ";attention_heads=" << attention_heads
      << ";attention_head_dim=" << attention_head_dim << ";embed=" << embed << ";gat_heads=" << gat_heads
      << ";gat_head_dim=" << gat_head_dim << ";head_lstm=" << head_lstm << ";mlp_hidden=" << mlp_hidden
      << ";dropout=" << dropout << ";temperature=" << temperature << ";slope=" << leaky_slope
      << ";use_head_lstm=" << use_head_lstm << ";per_step=" << per_step
      << ";graph=" << (graph == GraphMode::learnable ? "learnable" : "static")
      << ";threshold=" << correlation_threshold << ";lo=" << bounds.lo << ";hi=" << bounds.hi;
    return s.str();
}

Eigen::MatrixXd correlation_graph(const Eigen::MatrixXd& correlation, double threshold) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(correlation.rows(), correlation.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            if (i != j && correlation(i, j) > threshold) a(i, j) = 1.0;
        }
    }
    return a;
}

CrispModel::CrispModel(const ModelConfig& config, const Eigen::MatrixXd& prior, std::uint64_t seed)
    : config_(config), prior_(prior) {
    config_.validate(static_cast<std::size_t>(prior.rows()));
    std::mt19937_64 rng(seed);
    TemporalConfig tc;
    tc.input = config_.features;
    tc.lstm_hidden = config_.lstm_hidden;
    tc.heads = config_.attention_heads;
    tc.head_dim = config_.attention_head_dim;
    tc.embed = config_.embed;
    temporal_ = make_temporal_encoder(params_, tc, rng);
    spatial_ = make_spatial_encoder(params_, SpatialConfig{config_.features, config_.embed}, rng);
    if (config_.graph == GraphMode::learnable) {
        gat_ = make_gat(params_, GatConfig{2 * config_.embed, config_.gat_heads, config_.gat_head_dim,
                                           config_.leaky_slope},
                        rng);
    } else {
        static_gcn_ = make_linear(params_, "static_gcn", 2 * config_.embed, config_.embed, rng);
    }
    HeadConfig hc;
    hc.input = 2 * config_.embed;
    hc.lstm_hidden = config_.head_lstm;
    hc.mlp_hidden = config_.mlp_hidden;
    hc.dropout = config_.dropout;
    hc.temperature = config_.temperature;
    hc.use_lstm = config_.use_head_lstm;
    head_ = make_allocation_head(params_, hc, rng);
}

ForwardResult CrispModel::forward(const Tensor& features, const std::vector<Eigen::MatrixXd>& correlations,
                                  bool training, std::mt19937_64& rng) const {
    const std::size_t n = assets();
    if (features.dim() != 4 || features.shape()[1] != n || features.shape()[3] != config_.features) {
        throw DimensionError("model input must be B x " + std::to_string(n) + " x T x " +
                             std::to_string(config_.features) + ", got " + shape_str(features.shape()));
    }
    const std::size_t b = features.shape()[0];
    const std::size_t t = features.shape()[2];
    const std::size_t e = config_.embed;
    ForwardResult res;

    // Temporal encoder over B*N independent sequences.
    Tensor x = reshape(features, {b * n, t, config_.features});
    TemporalAttention att = temporal_.self_attention(temporal_.bilstm(x));
    res.temporal_attention = att.weights;
    Tensor temporal = config_.per_step ? temporal_.step_embeddings(att.output)
                                       : reshape(temporal_.pool(att.output), {b * n, 1, e});
    const std::size_t steps = config_.per_step ? t : 1;

    // Spatial encoder on window-mean features and the prior graph.
    Tensor h_spat = spatial_.forward(mean(features, 2), adjacency_tensor(prior_, b));

    // Arrange both as (B*S) x N x E, the spatial part repeated over steps.
    Tensor temp_steps = reshape(permute(reshape(temporal, {b, n, steps, e}), {0, 2, 1, 3}), {b * steps, n, e});
    std::vector<std::size_t> idx;
    idx.reserve(b * steps * n * e);
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t s = 0; s < steps; ++s)
            for (std::size_t k = 0; k < n * e; ++k) idx.push_back(bi * n * e + k);
    Tensor spat_steps = reshape(index_select(h_spat, idx), {b * steps, n, e});
    Tensor z_init = fuse(temp_steps, spat_steps);

    Tensor refined;
    if (config_.graph == GraphMode::learnable) {
        GatOutput g = gat_.forward(z_init);
        refined = g.refined;
        res.graph_attention.resize(b);
        for (std::size_t bi = 0; bi < b; ++bi) {
            const std::size_t offset = (bi * steps + steps - 1) * n * n;
            for (const auto& alpha : g.alpha) {
                Eigen::MatrixXd m(n, n);
                auto v = alpha.values();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[offset + i * n + j];
                res.graph_attention[bi].push_back(std::move(m));
            }
        }
    } else {
        if (correlations.size() != b) {
            throw ContractError("static graph mode needs one correlation matrix per window");
        }
        std::vector<double> adj;
        adj.reserve(b * steps * n * n);
        for (std::size_t bi = 0; bi < b; ++bi) {
            Eigen::MatrixXd a = correlation_graph(correlations[bi], config_.correlation_threshold);
            if (a.sum() == 0.0) ++res.empty_graph_fallbacks;  // normalises to the identity
            Eigen::MatrixXd norm = normalize_adjacency(a);
            for (std::size_t s = 0; s < steps; ++s)
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        adj.push_back(norm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        }
        Tensor adj_t({b * steps, n, n}, std::move(adj));
        refined = matmul(adj_t, static_gcn_.forward(z_init));
    }
    Tensor z_final = residual_combine(z_init, refined);

    // Allocation head over each asset's sequence of refined embeddings.
    Tensor seq = reshape(permute(reshape(z_final, {b, steps, n, 2 * e}), {0, 2, 1, 3}), {b * n, steps, 2 * e});
    Tensor scores = head_.scores(head_.aggregate(seq), training, rng);
    res.scores = reshape(scores, {b, n});
    res.weights = score_to_weights(res.scores, config_.temperature, config_.bounds);
    return res;
}

}  // namespace crisp
