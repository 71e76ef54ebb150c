#include "crisp/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "crisp/ops.hpp"

namespace crisp {

Eigen::MatrixXd normalize_adjacency(const Eigen::MatrixXd& adjacency) {
    if (adjacency.rows() != adjacency.cols()) throw DimensionError("adjacency must be square");
    const Eigen::Index n = adjacency.rows();
    Eigen::MatrixXd a = adjacency + Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd inv_sqrt = a.rowwise().sum().array().rsqrt();
    return inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
}

PriorGraph build_prior(const std::vector<std::string>& tickers,
                       const std::map<std::string, std::string>& sector,
                       const std::map<std::string, std::string>& region) {
    std::string missing;
    for (const auto& t : tickers) {
        if (!sector.count(t) || !region.count(t)) missing += (missing.empty() ? "" : ", ") + t;
    }
    if (!missing.empty()) throw ContractError("prior graph has no sector/region for: " + missing);
    PriorGraph g;
    g.tickers = tickers;
    const auto n = static_cast<Eigen::Index>(tickers.size());
    g.adjacency = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& ti = tickers[static_cast<std::size_t>(i)];
        g.sector[ti] = sector.at(ti);
        g.region[ti] = region.at(ti);
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const auto& tj = tickers[static_cast<std::size_t>(j)];
            if (sector.at(ti) == sector.at(tj) || region.at(ti) == region.at(tj)) g.adjacency(i, j) = 1.0;
        }
    }
    g.normalized = normalize_adjacency(g.adjacency);
    return g;
}

PriorGraph load_prior_csv(const std::string& path, const std::vector<std::string>& tickers) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open prior graph file '" + path + "'");
    std::string line;
    std::getline(in, line);
    if (line.rfind("ticker,sector,region", 0) != 0) {
        throw std::runtime_error("prior graph file '" + path + "' must start with ticker,sector,region");
    }
    std::map<std::string, std::string> sector, region;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string t, s, r;
        std::getline(ss, t, ',');
        std::getline(ss, s, ',');
        std::getline(ss, r, ',');
        if (t.empty() || s.empty() || r.empty()) {
            throw std::runtime_error("malformed prior graph row '" + line + "' in " + path);
        }
        sector[t] = s;
        region[t] = r;
    }
    return build_prior(tickers, sector, region);
}

Tensor adjacency_tensor(const Eigen::MatrixXd& m, std::size_t batch) {
    const auto n = static_cast<std::size_t>(m.rows());
    const auto c = static_cast<std::size_t>(m.cols());
    std::vector<double> v;
    v.reserve(std::max<std::size_t>(batch, 1) * n * c);
    for (std::size_t b = 0; b < std::max<std::size_t>(batch, 1); ++b) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                v.push_back(m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
            }
        }
    }
    if (batch == 0) return Tensor({n, c}, std::move(v));
    return Tensor({batch, n, c}, std::move(v));
}

Tensor SpatialEncoder::forward(const Tensor& x, const Tensor& adj) const {
    Tensor h0 = input.forward(x);
    Tensor h1 = relu(matmul(matmul(adj, h0), w1));
    Tensor h2 = relu(matmul(matmul(adj, h1), w2));
    return add(h2, mul(h0, 0.5));
}

SpatialEncoder make_spatial_encoder(ParameterSet& params, const SpatialConfig& config,
                                    std::mt19937_64& rng, const std::string& prefix) {
    SpatialEncoder enc;
    enc.config = config;
    enc.input = make_linear(params, prefix + ".w_in", config.input, config.embed, rng);
    enc.w1 = params.add(prefix + ".w_gcn1", glorot(config.embed, config.embed, rng));
    enc.w2 = params.add(prefix + ".w_gcn2", glorot(config.embed, config.embed, rng));
    return enc;
}

}  // namespace crisp
