#include "crisp/graph.hpp"

#include <fstream>
#include <iomanip>

#include "crisp/ops.hpp"

namespace crisp {

GatOutput GatLayer::forward(const Tensor& z) const {
    const std::size_t d = config.head_dim;
    Tensor wz = matmul(z, weight);
    GatOutput out;
    std::vector<Tensor> heads;
    for (std::size_t k = 0; k < config.heads; ++k) {
        Tensor wh = slice(wz, -1, k * d, d);
        Tensor a = slice(attention, 0, k, 1);
        Tensor a_src = reshape(slice(a, 1, 0, d), {d, 1});
        Tensor a_dst = reshape(slice(a, 1, d, d), {d, 1});
        // e_ij = a_src . Wz_i + a_dst . Wz_j
        Tensor e = add(matmul(wh, a_src), transpose(matmul(wh, a_dst)));
        Tensor alpha = softmax(leaky_relu(e, config.slope), -1);
        out.alpha.push_back(alpha);
        heads.push_back(matmul(alpha, wh));
    }
    out.refined = heads.size() == 1 ? heads.front() : concat(heads, -1);
    return out;
}

GatLayer make_gat(ParameterSet& params, const GatConfig& config, std::mt19937_64& rng,
                  const std::string& prefix) {
    if (config.heads == 0 || config.head_dim == 0) throw ContractError("GAT widths must be positive");
    GatLayer g;
    g.config = config;
    g.weight = params.add(prefix + ".weight", glorot(config.input, config.heads * config.head_dim, rng));
    g.attention = params.add(prefix + ".attention", glorot(config.heads, 2 * config.head_dim, rng));
    return g;
}

Tensor fuse(const Tensor& h_temp, const Tensor& h_spat) {
    if (h_temp.dim() != h_spat.dim()) {
        throw DimensionError("fuse: " + shape_str(h_temp.shape()) + " vs " + shape_str(h_spat.shape()));
    }
    return concat({h_temp, h_spat}, -1);
}

Tensor residual_combine(const Tensor& z_init, const Tensor& refined) {
    const std::size_t width = z_init.shape().back();
    const std::size_t r = refined.shape().back();
    if (r > width) {
        throw DimensionError("residual_combine: refined " + shape_str(refined.shape()) +
                             " is wider than z_init " + shape_str(z_init.shape()));
    }
    Tensor head = add(slice(z_init, -1, 0, r), mul(refined, 0.5));
    if (r == width) return head;
    return concat({head, slice(z_init, -1, r, width - r)}, -1);
}

std::size_t candidate_edge_count(std::size_t n) { return n * (n > 0 ? n - 1 : 0); }

BinCounts bin_edges(const Eigen::MatrixXd& alpha) {
    BinCounts b;
    for (Eigen::Index i = 0; i < alpha.rows(); ++i) {
        for (Eigen::Index j = 0; j < alpha.cols(); ++j) {
            if (i == j) continue;
            const double a = alpha(i, j);
            if (a < kLowAttention) ++b.low;
            else if (a > kHighAttention) ++b.high;
            else ++b.mid;
        }
    }
    return b;
}

std::vector<std::size_t> effective_degrees(const Eigen::MatrixXd& alpha) {
    std::vector<std::size_t> deg(static_cast<std::size_t>(alpha.rows()), 0);
    for (Eigen::Index i = 0; i < alpha.rows(); ++i) {
        for (Eigen::Index j = 0; j < alpha.cols(); ++j) {
            if (i != j && alpha(i, j) >= kLowAttention) ++deg[static_cast<std::size_t>(i)];
        }
    }
    return deg;
}

double cluster_share(const Eigen::MatrixXd& alpha, const std::vector<bool>& cluster) {
    if (static_cast<std::size_t>(alpha.cols()) != cluster.size()) {
        throw DimensionError("cluster_share: cluster mask does not match attention width");
    }
    double to_cluster = 0.0, total = 0.0;
    for (Eigen::Index i = 0; i < alpha.rows(); ++i) {
        for (Eigen::Index j = 0; j < alpha.cols(); ++j) {
            if (i == j) continue;
            total += alpha(i, j);
            if (cluster[static_cast<std::size_t>(j)]) to_cluster += alpha(i, j);
        }
    }
    return total > 0.0 ? to_cluster / total : 0.0;
}

AttentionRecord make_attention_record(const Date& date, std::vector<Eigen::MatrixXd> heads,
                                      std::optional<Regime> regime) {
    if (heads.empty()) throw ContractError("attention record needs at least one head");
    AttentionRecord rec;
    rec.window_end_date = date;
    rec.regime = regime;
    rec.mean = Eigen::MatrixXd::Zero(heads.front().rows(), heads.front().cols());
    for (const auto& h : heads) rec.mean += h;
    rec.mean /= static_cast<double>(heads.size());
    rec.heads = std::move(heads);
    rec.bins = bin_edges(rec.mean);
    rec.effective_degree = effective_degrees(rec.mean);
    return rec;
}

SparsityReport sparsity_report(const std::vector<AttentionRecord>& records,
                               const std::vector<bool>& cluster) {
    if (records.empty()) throw ContractError("sparsity_report needs at least one record");
    SparsityReport rep;
    rep.records = records.size();
    rep.nodes = static_cast<std::size_t>(records.front().mean.rows());
    const double edges = static_cast<double>(candidate_edge_count(rep.nodes)) * static_cast<double>(records.size());
    const std::size_t n_heads = records.front().heads.size();
    rep.per_head_low_fraction.assign(n_heads, 0.0);
    rep.mean_effective_degree.assign(rep.nodes, 0.0);
    double crisis_sum = 0.0, calm_sum = 0.0, share_sum = 0.0;
    std::size_t crisis_n = 0, calm_n = 0;
    for (const auto& r : records) {
        rep.low_fraction += static_cast<double>(r.bins.low);
        rep.mid_fraction += static_cast<double>(r.bins.mid);
        rep.high_fraction += static_cast<double>(r.bins.high);
        for (std::size_t h = 0; h < n_heads && h < r.heads.size(); ++h) {
            rep.per_head_low_fraction[h] += static_cast<double>(bin_edges(r.heads[h]).low);
        }
        for (std::size_t i = 0; i < rep.nodes; ++i) {
            rep.mean_effective_degree[i] += static_cast<double>(r.effective_degree[i]);
        }
        const double s = cluster_share(r.mean, cluster);
        share_sum += s;
        if (r.regime == Regime::crisis) crisis_sum += s, ++crisis_n;
        else if (r.regime == Regime::calm) calm_sum += s, ++calm_n;
    }
    rep.low_fraction /= edges;
    rep.mid_fraction /= edges;
    rep.high_fraction /= edges;
    for (auto& f : rep.per_head_low_fraction) f /= edges;
    for (auto& d : rep.mean_effective_degree) {
        d /= static_cast<double>(records.size());
        rep.average_effective_degree += d;
    }
    rep.average_effective_degree /= static_cast<double>(std::max<std::size_t>(rep.nodes, 1));
    rep.cluster_share = share_sum / static_cast<double>(records.size());
    if (crisis_n > 0) rep.crisis_cluster_share = crisis_sum / static_cast<double>(crisis_n);
    if (calm_n > 0) rep.calm_cluster_share = calm_sum / static_cast<double>(calm_n);
    return rep;
}

void write_attention_csv(const std::vector<AttentionRecord>& records,
                         const std::vector<std::string>& tickers, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "date,head,i,j,alpha\n" << std::setprecision(17);
    auto emit = [&](const std::string& date, const std::string& head, const Eigen::MatrixXd& a) {
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            for (Eigen::Index j = 0; j < a.cols(); ++j) {
                out << date << ',' << head << ',' << tickers.at(static_cast<std::size_t>(i)) << ','
                    << tickers.at(static_cast<std::size_t>(j)) << ',' << a(i, j) << '\n';
            }
        }
    };
    for (const auto& r : records) {
        const std::string date = r.window_end_date.to_string();
        for (std::size_t h = 0; h < r.heads.size(); ++h) emit(date, std::to_string(h), r.heads[h]);
        emit(date, "mean", r.mean);
    }
}

nlohmann::json sparsity_json(const SparsityReport& report, const std::vector<std::string>& tickers) {
    nlohmann::json j;
    j["binning"] = "head mean, off-diagonal directed edges; low < 0.1 <= mid <= 0.3 < high";
    j["records"] = report.records;
    j["candidate_edges"] = candidate_edge_count(report.nodes);
    j["low_fraction"] = report.low_fraction;
    j["mid_fraction"] = report.mid_fraction;
    j["high_fraction"] = report.high_fraction;
    j["per_head_low_fraction"] = report.per_head_low_fraction;
    j["average_effective_degree"] = report.average_effective_degree;
    nlohmann::json deg = nlohmann::json::object();
    for (std::size_t i = 0; i < report.mean_effective_degree.size() && i < tickers.size(); ++i) {
        deg[tickers[i]] = report.mean_effective_degree[i];
    }
    j["effective_degree"] = deg;
    j["defensive_share"] = report.cluster_share;
    j["defensive_share_crisis"] = report.crisis_cluster_share ? nlohmann::json(*report.crisis_cluster_share)
                                                              : nlohmann::json(nullptr);
    j["defensive_share_calm"] = report.calm_cluster_share ? nlohmann::json(*report.calm_cluster_share)
                                                          : nlohmann::json(nullptr);
    return j;
}

}  // namespace crisp
