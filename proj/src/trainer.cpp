#include "crisp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "crisp/ops.hpp"

namespace crisp {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(lr_min >= 0.0 && lr_min <= learning_rate)) throw ConfigError("lr_min must lie in [0, learning_rate]");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (patience < 1) throw ConfigError("patience must be at least 1");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw ConfigError("validation_fraction must lie in [0, 1)");
    }
    if (!std::isfinite(clip_norm)) throw ConfigError("clip_norm must be finite");
}

double cosine_lr(std::size_t epoch, std::size_t max_epochs, double lr0, double lr_min) {
    if (max_epochs == 0) return lr0;
    const double progress = static_cast<double>(std::min(epoch, max_epochs)) / static_cast<double>(max_epochs);
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

void adam_step(ParameterSet& params, AdamState& state, double lr) {
    auto& items = params.items();
    for (const auto& p : items) {
        if (!p.trainable || !p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter " + p.name);
        }
    }
    if (state.m.size() != items.size()) {
        state.m.assign(items.size(), {});
        state.v.assign(items.size(), {});
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < items.size(); ++k) {
        auto& p = items[k];
        if (!p.trainable) continue;
        const std::size_t n = p.tensor.numel();
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != n) {
            m.assign(n, 0.0);
            v.assign(n, 0.0);
        }
        const std::vector<double> g = p.tensor.has_grad() ? p.tensor.grad() : std::vector<double>(n, 0.0);
        auto w = p.tensor.mutable_values();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
        }
    }
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params.items()) {
        if (!p.trainable || !p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& p : params.items()) {
            if (!p.trainable || !p.tensor.has_grad()) continue;
            for (double& g : p.tensor.data()->grad) g *= scale;
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Checkpoint serialisation. Raw native-endian doubles keep the round trip
// bit-exact; files are not meant to move between architectures.

namespace {

constexpr char kMagic[8] = {'C', 'R', 'S', 'P', 'C', 'K', 'P', 'T'};

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}
    template <typename T>
    void pod(const T& v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void size(std::size_t n) { pod(static_cast<std::uint64_t>(n)); }
    void str(const std::string& s) {
        size(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void vec(const std::vector<double>& v) {
        size(v.size());
        out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    void vecs(const std::vector<std::vector<double>>& vs) {
        size(vs.size());
        for (const auto& v : vs) vec(v);
    }

private:
    std::ostream& out_;
};

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}
    template <typename T>
    T pod() {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in_) throw CheckpointError("truncated checkpoint");
        return v;
    }
    std::size_t size() {
        const auto n = pod<std::uint64_t>();
        if (n > (std::uint64_t{1} << 34)) throw CheckpointError("corrupt checkpoint length");
        return static_cast<std::size_t>(n);
    }
    std::string str() {
        std::string s(size(), '\0');
        in_.read(s.data(), static_cast<std::streamsize>(s.size()));
        if (!in_) throw CheckpointError("truncated checkpoint");
        return s;
    }
    std::vector<double> vec() {
        std::vector<double> v(size());
        in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!in_) throw CheckpointError("truncated checkpoint");
        return v;
    }
    std::vector<std::vector<double>> vecs() {
        std::vector<std::vector<double>> vs(size());
        for (auto& v : vs) v = vec();
        return vs;
    }

private:
    std::istream& in_;
};

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path);
    Writer w(out);
    out.write(kMagic, sizeof(kMagic));
    w.pod(kVersion);
    w.pod(config_hash);
    w.size(epoch);
    w.pod(best_val_loss);
    w.size(best_epoch);
    w.size(epochs_without_improvement);
    w.size(names.size());
    for (const auto& n : names) w.str(n);
    w.vecs(values);
    w.vecs(best_values);
    w.pod(adam.beta1);
    w.pod(adam.beta2);
    w.pod(adam.eps);
    w.pod(adam.step);
    w.vecs(adam.m);
    w.vecs(adam.v);
    w.str(rng_state);
    w.vecs(turnover_cache);
    if (!out) throw CheckpointError("failed writing checkpoint " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path);
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || !std::equal(magic, magic + sizeof(magic), kMagic)) {
        throw CheckpointError(path + " is not a checkpoint");
    }
    Reader r(in);
    const auto version = r.pod<std::uint32_t>();
    if (version != kVersion) {
        throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                              std::to_string(kVersion) + ")");
    }
    Checkpoint c;
    c.config_hash = r.pod<std::uint64_t>();
    c.epoch = r.size();
    c.best_val_loss = r.pod<double>();
    c.best_epoch = r.size();
    c.epochs_without_improvement = r.size();
    c.names.resize(r.size());
    for (auto& n : c.names) n = r.str();
    c.values = r.vecs();
    c.best_values = r.vecs();
    c.adam.beta1 = r.pod<double>();
    c.adam.beta2 = r.pod<double>();
    c.adam.eps = r.pod<double>();
    c.adam.step = r.pod<std::uint64_t>();
    c.adam.m = r.vecs();
    c.adam.v = r.vecs();
    c.rng_state = r.str();
    c.turnover_cache = r.vecs();
    if (c.values.size() != c.names.size() || c.best_values.size() != c.names.size()) {
        throw CheckpointError("checkpoint parameter tables disagree in length");
    }
    return c;
}

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

bool same_bits(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!same_bits(a[i], b[i])) return false;
    return true;
}

}  // namespace

bool Checkpoint::operator==(const Checkpoint& o) const {
    return config_hash == o.config_hash && epoch == o.epoch && same_bits(best_val_loss, o.best_val_loss) &&
           best_epoch == o.best_epoch && epochs_without_improvement == o.epochs_without_improvement &&
           names == o.names && same_bits(values, o.values) && same_bits(best_values, o.best_values) &&
           adam.step == o.adam.step && same_bits(adam.m, o.adam.m) && same_bits(adam.v, o.adam.v) &&
           rng_state == o.rng_state && same_bits(turnover_cache, o.turnover_cache);
}

std::uint64_t config_hash(const ModelConfig& config, std::size_t assets) {
    return fnv1a(config.fingerprint() + ";assets=" + std::to_string(assets));
}

void load_parameters(CrispModel& model, const Checkpoint& ckpt, bool best) {
    if (ckpt.config_hash != config_hash(model.config(), model.assets())) {
        throw CheckpointError("checkpoint was written for a different model configuration");
    }
    auto& items = model.parameters().items();
    const auto& source = best ? ckpt.best_values : ckpt.values;
    if (items.size() != ckpt.names.size() || source.size() != items.size()) {
        throw CheckpointError("checkpoint holds " + std::to_string(ckpt.names.size()) + " parameters, model has " +
                              std::to_string(items.size()));
    }
    for (std::size_t k = 0; k < items.size(); ++k) {
        if (items[k].name != ckpt.names[k] || items[k].tensor.numel() != source[k].size()) {
            throw CheckpointError("checkpoint parameter " + ckpt.names[k] + " does not match model parameter " +
                                  items[k].name);
        }
    }
    for (std::size_t k = 0; k < items.size(); ++k) {
        auto dst = items[k].tensor.mutable_values();
        std::copy(source[k].begin(), source[k].end(), dst.begin());
    }
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
    if (batch_size == 0) throw ContractError("batch_ranges: batch_size must be positive");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        out.emplace_back(start, std::min(n, start + batch_size));
    }
    if (out.size() > 1 && out.back().second - out.back().first < batch_size) {
        out[out.size() - 2].second = n;
        out.pop_back();
    }
    return out;
}

Batch collate(const std::vector<FeatureWindow>& windows, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ContractError("cannot collate an empty batch");
    const auto& first = windows.at(indices[0]);
    const Shape fs = first.features.shape();
    const auto n = static_cast<std::size_t>(first.target_returns.rows());
    const auto h = static_cast<std::size_t>(first.target_returns.cols());
    if (n == 0 || h == 0) throw ContractError("window ending " + first.window_end_date.to_string() + " has no targets");
    std::vector<double> feats;
    std::vector<double> targets;
    feats.reserve(indices.size() * first.features.numel());
    targets.reserve(indices.size() * n * h);
    Batch b;
    for (std::size_t idx : indices) {
        const auto& w = windows.at(idx);
        if (w.features.shape() != fs || static_cast<std::size_t>(w.target_returns.rows()) != n ||
            static_cast<std::size_t>(w.target_returns.cols()) != h) {
            throw DimensionError("windows in a batch must share shapes");
        }
        auto v = w.features.values();
        feats.insert(feats.end(), v.begin(), v.end());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < h; ++d)
                targets.push_back(w.target_returns(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)));
        b.correlations.push_back(w.correlation);
    }
    const std::size_t bs = indices.size();
    b.features = Tensor({bs, fs[0], fs[1], fs[2]}, std::move(feats));
    b.targets = Tensor({bs, n, h}, std::move(targets));
    return b;
}

void write_training_log(const std::vector<EpochLog>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(17);
    out << "epoch,train_loss,val_loss,lr\n";
    for (const auto& e : log) out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr << '\n';
}

// ---------------------------------------------------------------------------

namespace {

Tensor previous_weights(const std::vector<std::size_t>& indices, const std::vector<std::vector<double>>& cache,
                        std::size_t n) {
    std::vector<double> v;
    v.reserve(indices.size() * n);
    for (std::size_t idx : indices) {
        if (idx > 0 && cache[idx - 1].size() == n) {
            v.insert(v.end(), cache[idx - 1].begin(), cache[idx - 1].end());
        } else {
            v.insert(v.end(), n, 1.0 / static_cast<double>(n));
        }
    }
    return Tensor({indices.size(), n}, std::move(v));
}

void store_weights(const Tensor& w, const std::vector<std::size_t>& indices, std::vector<std::vector<double>>& cache) {
    const std::size_t n = w.shape()[1];
    auto v = w.values();
    for (std::size_t r = 0; r < indices.size(); ++r) {
        cache[indices[r]].assign(v.begin() + static_cast<std::ptrdiff_t>(r * n),
                                 v.begin() + static_cast<std::ptrdiff_t>((r + 1) * n));
    }
}

std::vector<std::vector<double>> parameter_values(const ParameterSet& params) {
    std::vector<std::vector<double>> out;
    for (const auto& p : params.items()) {
        auto v = p.tensor.values();
        out.emplace_back(v.begin(), v.end());
    }
    return out;
}

}  // namespace

Trainer::Trainer(CrispModel& model, TrainConfig config, LossWeights loss)
    : model_(model), config_(config), loss_(loss) {
    config_.validate();
    loss_.validate();
}

std::size_t Trainer::train_count(std::size_t windows, double validation_fraction) {
    if (validation_fraction <= 0.0 || windows < 2) return windows;
    const auto val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(windows))));
    return windows - std::min(val, windows - 1);
}

double Trainer::evaluate(const std::vector<FeatureWindow>& windows, const std::vector<std::size_t>& indices,
                         std::vector<std::vector<double>>& cache) const {
    if (indices.empty()) return 0.0;
    NoGradGuard guard;
    std::mt19937_64 unused(0);
    const std::size_t n = model_.assets();
    double total = 0.0;
    for (auto [start, stop] : batch_ranges(indices.size(), config_.batch_size)) {
        std::vector<std::size_t> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                     indices.begin() + static_cast<std::ptrdiff_t>(stop));
        Batch b = collate(windows, idx);
        auto out = model_.forward(b.features, b.correlations, false, unused);
        // Chain through this batch's own predictions before scoring turnover.
        store_weights(out.weights, idx, cache);
        Tensor prev = previous_weights(idx, cache, n);
        total += portfolio_loss(out.weights, prev, b.targets, loss_).total.item() * static_cast<double>(idx.size());
    }
    return total / static_cast<double>(indices.size());
}

Checkpoint Trainer::snapshot(std::size_t epoch, const AdamState& adam, const std::mt19937_64& rng,
                             const std::vector<std::vector<double>>& cache) const {
    Checkpoint c;
    c.config_hash = config_hash(model_.config(), model_.assets());
    c.epoch = epoch;
    c.best_val_loss = best_val_;
    c.best_epoch = best_epoch_;
    c.epochs_without_improvement = stale_;
    for (const auto& p : model_.parameters().items()) c.names.push_back(p.name);
    c.values = parameter_values(model_.parameters());
    c.best_values = best_values_.empty() ? c.values : best_values_;
    c.adam = adam;
    std::ostringstream s;
    s << rng;
    c.rng_state = s.str();
    c.turnover_cache = cache;
    return c;
}

TrainResult Trainer::fit(const std::vector<FeatureWindow>& windows, const std::optional<Checkpoint>& resume) {
    const std::size_t total = windows.size();
    const std::size_t n_train = train_count(total, config_.validation_fraction);
    if (n_train < config_.batch_size) {
        throw ContractError("training needs at least batch_size (" + std::to_string(config_.batch_size) +
                            ") training windows, got " + std::to_string(n_train));
    }
    for (std::size_t i = 1; i < total; ++i) {
        if (!(windows[i - 1].window_end_date < windows[i].window_end_date)) {
            throw ContractError("training windows must be in chronological order");
        }
    }
    std::vector<std::size_t> val_idx(total - n_train);
    std::iota(val_idx.begin(), val_idx.end(), n_train);
    const std::size_t n = model_.assets();

    AdamState adam;
    std::mt19937_64 rng(config_.seed);
    std::vector<std::vector<double>> cache(total);
    std::size_t start_epoch = 0;
    best_val_ = std::numeric_limits<double>::infinity();
    best_epoch_ = 0;
    stale_ = 0;
    best_values_.clear();
    if (resume) {
        load_parameters(model_, *resume, false);
        if (resume->turnover_cache.size() != total) {
            throw CheckpointError("checkpoint turnover cache covers " + std::to_string(resume->turnover_cache.size()) +
                                  " windows, data has " + std::to_string(total));
        }
        adam = resume->adam;
        std::istringstream s(resume->rng_state);
        s >> rng;
        cache = resume->turnover_cache;
        start_epoch = resume->epoch;
        best_val_ = resume->best_val_loss;
        best_epoch_ = resume->best_epoch;
        stale_ = resume->epochs_without_improvement;
        best_values_ = resume->best_values;
    }

    TrainResult result;
    result.last = snapshot(start_epoch, adam, rng, cache);
    std::vector<std::size_t> order(n_train);
    for (std::size_t epoch = start_epoch; epoch < config_.max_epochs; ++epoch) {
        if (stale_ >= config_.patience) break;
        const double lr = cosine_lr(epoch, config_.max_epochs, config_.learning_rate, config_.lr_min);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        EpochLog entry;
        entry.epoch = epoch + 1;
        entry.lr = lr;
        double loss_sum = 0.0;
        try {
            for (auto [start, stop] : batch_ranges(n_train, config_.batch_size)) {
                std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(stop));
                Batch b = collate(windows, idx);
                model_.parameters().zero_grad();
                auto out = model_.forward(b.features, b.correlations, true, rng);
                Tensor prev = previous_weights(idx, cache, n);
                Tensor loss = portfolio_loss(out.weights, prev, b.targets, loss_).total;
                const double lv = loss.item();
                if (!std::isfinite(lv)) {
                    throw TrainingError("non-finite training loss in epoch " + std::to_string(epoch + 1));
                }
                loss.backward();
                const double norm = clip_grad_norm(model_.parameters(), config_.clip_norm);
                if (config_.clip_norm > 0.0 && norm > config_.clip_norm) {
                    ++entry.clipped_batches;
                    spdlog::debug("epoch {}: gradient norm {:.3g} clipped to {}", epoch + 1, norm, config_.clip_norm);
                }
                adam_step(model_.parameters(), adam, lr);
                store_weights(out.weights.detach(), idx, cache);
                loss_sum += lv * static_cast<double>(idx.size());
            }
        } catch (const TrainingError& e) {
            spdlog::error("{}; stopping with the last good checkpoint", e.what());
            result.diverged = true;
            result.stop_reason = e.what();
            load_parameters(model_, result.last, false);
            break;
        }
        entry.train_loss = loss_sum / static_cast<double>(n_train);
        entry.val_loss = val_idx.empty() ? entry.train_loss : evaluate(windows, val_idx, cache);
        if (entry.clipped_batches > 0) {
            spdlog::info("epoch {}: clipped gradients in {} batches", entry.epoch, entry.clipped_batches);
        }
        if (entry.val_loss < best_val_) {
            best_val_ = entry.val_loss;
            best_epoch_ = entry.epoch;
            best_values_ = parameter_values(model_.parameters());
            stale_ = 0;
        } else {
            ++stale_;
        }
        spdlog::info("epoch {:>3}  train {:+.6f}  val {:+.6f}  lr {:.2e}", entry.epoch, entry.train_loss,
                     entry.val_loss, lr);
        result.log.push_back(entry);
        result.last = snapshot(epoch + 1, adam, rng, cache);
        if (on_epoch_) on_epoch_(result.last);
    }
    if (result.stop_reason.empty()) {
        result.stop_reason = stale_ >= config_.patience
                                 ? "no validation improvement for " + std::to_string(config_.patience) + " epochs"
                                 : "reached max_epochs";
    }
    result.best = result.last;
    result.best.values = result.last.best_values;
    load_parameters(model_, result.best, false);
    return result;
}

}  // namespace crisp
