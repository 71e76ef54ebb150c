#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "crisp/backtest.hpp"
#include "crisp/features.hpp"
#include "crisp/market_data.hpp"
#include "crisp/model.hpp"
#include "crisp/objectives.hpp"
#include "crisp/spatial.hpp"
#include "crisp/trainer.hpp"

namespace crisp {

/// The six component-contribution configurations.
enum class Variant { full, static_graph, single_head, no_lstm, no_crisis_features, random_selection };

const std::vector<Variant>& all_variants();
/// Table label, e.g. "w/o Learnable Graph".
std::string variant_name(Variant v);
/// Accepts the table label or a short key: full, static, single-head,
/// no-lstm, no-crisis, random.
std::optional<Variant> parse_variant(const std::string& text);
bool variant_trains(Variant v);
ModelConfig apply_variant(ModelConfig base, Variant v);
/// Roster columns fed to the model; empty means all 31.
std::vector<std::size_t> variant_features(Variant v);

struct ExperimentConfig {
    // Data: a CSV path, or the synthetic generator when empty.
    std::string csv_path;
    std::string universe_path = "data/universe.csv";
    RegimeConfig synthetic;
    std::size_t synthetic_days = 1500;
    std::uint64_t data_seed = 7;

    // Split. Explicit dates win over the fraction.
    std::optional<Date> train_end;
    std::optional<Date> test_start;
    double train_fraction = 0.7;
    WindowOptions window;       // stride here is the training stride
    std::size_t test_stride = 5;  // must equal the horizon

    ModelConfig model = ModelConfig::full();
    LossWeights loss;
    TrainConfig train;
    std::uint64_t model_seed = 1;
    std::uint64_t random_seed = 99;  // Random Selection stream

    void validate() const;
};

/// Tickers (first column) and defensive flags (optional `defensive`
/// column) of a universe file.
UniverseSpec load_universe_spec(const std::string& path);

struct Dataset {
    Universe universe;
    PriorGraph prior;
    Date train_end;
    Date test_start;
    std::vector<FeatureWindow> train;  // raw features, chronological
    std::size_t dropped_windows = 0;
    std::vector<std::size_t> test_schedule;
};

Universe load_universe(const ExperimentConfig& cfg);
Dataset prepare_dataset(const ExperimentConfig& cfg);
Dataset prepare_dataset(const ExperimentConfig& cfg, Universe universe);

/// Training windows restricted to a feature subset and z-scored with
/// statistics fitted on them.
struct PreparedWindows {
    std::vector<FeatureWindow> windows;
    FeatureNormalizer normalizer;
};
PreparedWindows prepare_windows(const std::vector<FeatureWindow>& raw, const std::vector<std::size_t>& subset);

struct TrainedModel {
    Variant variant = Variant::full;
    std::unique_ptr<CrispModel> model;
    FeatureNormalizer normalizer;
    std::vector<std::size_t> features;
    TrainResult result;
};

/// Builds and trains the model for a (trainable) variant.
TrainedModel train_variant(const Dataset& data, const ExperimentConfig& cfg, Variant v,
                           const std::optional<Checkpoint>& resume = std::nullopt);
/// Rebuilds a trained variant from a checkpoint without training.
TrainedModel restore_variant(const Dataset& data, const ExperimentConfig& cfg, Variant v, const Checkpoint& ckpt);

std::unique_ptr<Strategy> model_strategy(const TrainedModel& tm, const ExperimentConfig& cfg);
BacktestOptions backtest_options(const ExperimentConfig& cfg);

struct AblationRow {
    std::string configuration;
    MetricSet metrics;
    std::size_t epochs = 0;
    std::size_t best_epoch = 0;
    BacktestReport report;
};

/// Trains and backtests every selected variant on the same dataset.
std::vector<AblationRow> ablation_suite(const Dataset& data, const ExperimentConfig& cfg,
                                        const std::vector<Variant>& variants = all_variants());
void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path);

}  // namespace crisp
