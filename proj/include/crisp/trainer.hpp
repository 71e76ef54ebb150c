#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "crisp/market_data.hpp"
#include "crisp/model.hpp"
#include "crisp/objectives.hpp"

namespace crisp {

/// Non-finite loss or gradient during training.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unreadable checkpoint, or one written for a different model.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    double lr_min = 1e-5;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 200;
    std::size_t patience = 15;
    double validation_fraction = 0.1;
    double clip_norm = 5.0;  // <= 0 disables clipping
    std::uint64_t seed = 42;

    void validate() const;
};

/// lr_min + (lr0 - lr_min)(1 + cos(pi epoch / max_epochs)) / 2
double cosine_lr(std::size_t epoch, std::size_t max_epochs, double lr0, double lr_min);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update of every trainable parameter from its
/// accumulated gradient. Throws TrainingError naming the first parameter
/// with a non-finite gradient, before anything is modified.
void adam_step(ParameterSet& params, AdamState& state, double lr);

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(ParameterSet& params, double max_norm);

/// Full training state. Serialises bit-exactly.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::uint64_t config_hash = 0;
    std::size_t epoch = 0;  // completed epochs
    double best_val_loss = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_without_improvement = 0;
    std::vector<std::string> names;
    std::vector<std::vector<double>> values;
    std::vector<std::vector<double>> best_values;
    AdamState adam;
    std::string rng_state;
    std::vector<std::vector<double>> turnover_cache;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
    bool operator==(const Checkpoint& other) const;
};

/// FNV-1a over the model fingerprint and asset count.
std::uint64_t config_hash(const ModelConfig& config, std::size_t assets);

/// Copies parameters (current or best) into the model after checking the
/// config hash and every name and size.
void load_parameters(CrispModel& model, const Checkpoint& ckpt, bool best = true);

/// Stacked inputs for a set of windows.
struct Batch {
    Tensor features;  // B x N x T x F
    Tensor targets;   // B x N x H
    std::vector<Eigen::MatrixXd> correlations;
};

Batch collate(const std::vector<FeatureWindow>& windows, const std::vector<std::size_t>& indices);

/// [start, stop) ranges of consecutive batches over n items. A trailing
/// remainder shorter than batch_size joins the batch before it: the ratio
/// terms of the loss degenerate on a handful of returns (a two-window batch
/// with no losing day sends the Sortino term towards -mean / eps).
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size);

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
    std::size_t clipped_batches = 0;
};

struct TrainResult {
    Checkpoint best;
    Checkpoint last;
    std::vector<EpochLog> log;
    bool diverged = false;
    std::string stop_reason;
};

void write_training_log(const std::vector<EpochLog>& log, const std::string& path);

/// Mini-batch trainer. Windows must be chronological; the trailing
/// validation_fraction of them is held out for early stopping. The previous
/// weights fed to the turnover term are the detached prediction most recently
/// made for the preceding window (uniform for the first).
class Trainer {
public:
    Trainer(CrispModel& model, TrainConfig config, LossWeights loss = {});

    /// Trains from scratch, or continues from `resume` when given. On return
    /// the model holds the best parameters.
    TrainResult fit(const std::vector<FeatureWindow>& windows,
                    const std::optional<Checkpoint>& resume = std::nullopt);

    /// Mean loss over `indices` in eval mode, chaining previous weights
    /// through the given cache.
    double evaluate(const std::vector<FeatureWindow>& windows, const std::vector<std::size_t>& indices,
                    std::vector<std::vector<double>>& cache) const;

    /// Called with the full training state after every completed epoch.
    void on_epoch(std::function<void(const Checkpoint&)> callback) { on_epoch_ = std::move(callback); }

    /// Split point: windows [0, n_train) train, [n_train, size) validate.
    static std::size_t train_count(std::size_t windows, double validation_fraction);

private:
    Checkpoint snapshot(std::size_t epoch, const AdamState& adam, const std::mt19937_64& rng,
                        const std::vector<std::vector<double>>& cache) const;

    CrispModel& model_;
    TrainConfig config_;
    LossWeights loss_;
    double best_val_ = 0.0;
    std::size_t best_epoch_ = 0;
    std::size_t stale_ = 0;
    std::vector<std::vector<double>> best_values_;
    std::function<void(const Checkpoint&)> on_epoch_;
};

}  // namespace crisp
