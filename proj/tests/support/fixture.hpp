#pragma once

// Small synthetic experiment shared by trainer, backtest and CLI tests.

#include <string>

#include "crisp/experiment.hpp"

namespace crisp::testing {

inline std::string source_path(const std::string& rel) { return std::string(CRISP_SOURCE_DIR) + "/" + rel; }

inline ExperimentConfig small_experiment(std::size_t days = 420) {
    ExperimentConfig cfg;
    cfg.universe_path = source_path("data/universe.csv");
    cfg.synthetic_days = days;
    cfg.data_seed = 5;
    cfg.train_fraction = 0.65;
    cfg.window.stride = 5;
    cfg.model = ModelConfig::desk();
    cfg.model.lstm_hidden = 8;
    cfg.model.attention_head_dim = 4;
    cfg.model.embed = 16;
    cfg.model.gat_head_dim = 4;
    cfg.model.head_lstm = 8;
    cfg.model.mlp_hidden = 16;
    cfg.train.batch_size = 8;
    cfg.train.max_epochs = 3;
    cfg.train.seed = 3;
    return cfg;
}

}  // namespace crisp::testing
