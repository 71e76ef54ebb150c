#pragma once

#include <string>
#include <vector>

#include "crisp/experiment.hpp"

namespace crisp::cli {

/// Everything a command needs: the experiment plus output and strategy
/// selection.
struct RunConfig {
    ExperimentConfig experiment;
    std::string out_dir = "out";
    std::vector<std::string> strategies{"equal_weight", "mean_variance", "risk_parity", "crisp"};

    /// Exhaustive startup validation. Throws ConfigError.
    void validate() const;
};

/// Strategy keys accepted in [backtest] strategies.
const std::vector<std::string>& known_strategies();

/// Reads a sectioned key = value file over the defaults. Unknown sections
/// or keys, and unparsable values, throw ConfigError naming the key.
/// [model] preset = full|desk is applied before the other model keys.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& text);

/// Every resolved key, in a form parse_run_config reads back exactly.
std::string render_run_config(const RunConfig& cfg);

}  // namespace crisp::cli
