#include "run_config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <CLI11.hpp>

namespace crisp::cli {

namespace {

struct Key {
    std::string section;
    std::string name;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round-trip form
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("'" + s + "' is not a number");
    return v;
}

std::uint64_t parse_uint(const std::string& s) {
    std::uint64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ConfigError("'" + s + "' is not a non-negative integer");
    }
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("'" + s + "' is not a boolean");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto a = item.find_first_not_of(" \t");
        const auto b = item.find_last_not_of(" \t");
        if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
    }
    return out;
}

template <typename T>
Key num(std::string section, std::string name, T ExperimentConfig::*field) {
    return {std::move(section), std::move(name),
            [field](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>) return fmt(c.experiment.*field);
                else return std::to_string(c.experiment.*field);
            },
            [field](RunConfig& c, const std::string& v) {
                if constexpr (std::is_floating_point_v<T>) c.experiment.*field = parse_double(v);
                else c.experiment.*field = static_cast<T>(parse_uint(v));
            }};
}

// Field inside a nested struct of ExperimentConfig.
template <typename S, typename T>
Key nested(std::string section, std::string name, S ExperimentConfig::*outer, T S::*field) {
    return {std::move(section), std::move(name),
            [outer, field](const RunConfig& c) {
                const T& v = c.experiment.*outer.*field;
                if constexpr (std::is_same_v<T, bool>) return std::string(v ? "true" : "false");
                else if constexpr (std::is_floating_point_v<T>) return fmt(v);
                else return std::to_string(v);
            },
            [outer, field](RunConfig& c, const std::string& s) {
                T& v = c.experiment.*outer.*field;
                if constexpr (std::is_same_v<T, bool>) v = parse_bool(s);
                else if constexpr (std::is_floating_point_v<T>) v = parse_double(s);
                else v = static_cast<T>(parse_uint(s));
            }};
}

Key optional_date(std::string name, std::optional<Date> ExperimentConfig::*field) {
    return {"split", std::move(name),
            [field](const RunConfig& c) {
                const auto& d = c.experiment.*field;
                return d ? d->to_string() : std::string("none");
            },
            [field](RunConfig& c, const std::string& s) {
                if (s == "none" || s.empty()) {
                    c.experiment.*field = std::nullopt;
                } else {
                    try {
                        c.experiment.*field = Date::parse(s);
                    } catch (const std::exception& e) {
                        throw ConfigError("'" + s + "' is not a YYYY-MM-DD date");
                    }
                }
            }};
}

const std::vector<Key>& keys() {
    using E = ExperimentConfig;
    static const std::vector<Key> k = [] {
        std::vector<Key> v;
        v.push_back({"data", "csv", [](const RunConfig& c) { return c.experiment.csv_path; },
                     [](RunConfig& c, const std::string& s) { c.experiment.csv_path = s; }});
        v.push_back({"data", "universe", [](const RunConfig& c) { return c.experiment.universe_path; },
                     [](RunConfig& c, const std::string& s) { c.experiment.universe_path = s; }});
        v.push_back(num("data", "days", &E::synthetic_days));
        v.push_back(num("data", "seed", &E::data_seed));

        v.push_back({"synthetic", "p_calm_to_crisis",
                     [](const RunConfig& c) { return fmt(c.experiment.synthetic.transition[0][1]); },
                     [](RunConfig& c, const std::string& s) {
                         const double p = parse_double(s);
                         c.experiment.synthetic.transition[0] = {1.0 - p, p};
                     }});
        v.push_back({"synthetic", "p_crisis_to_calm",
                     [](const RunConfig& c) { return fmt(c.experiment.synthetic.transition[1][0]); },
                     [](RunConfig& c, const std::string& s) {
                         const double p = parse_double(s);
                         c.experiment.synthetic.transition[1] = {p, 1.0 - p};
                     }});
        v.push_back(nested("synthetic", "calm_mean", &E::synthetic, &RegimeConfig::calm_mean));
        v.push_back(nested("synthetic", "crisis_mean", &E::synthetic, &RegimeConfig::crisis_mean));
        v.push_back(nested("synthetic", "defensive_crisis_mean", &E::synthetic, &RegimeConfig::defensive_crisis_mean));
        v.push_back(nested("synthetic", "calm_vol", &E::synthetic, &RegimeConfig::calm_vol));
        v.push_back(nested("synthetic", "crisis_vol", &E::synthetic, &RegimeConfig::crisis_vol));
        v.push_back(nested("synthetic", "calm_corr", &E::synthetic, &RegimeConfig::calm_corr));
        v.push_back(nested("synthetic", "crisis_corr", &E::synthetic, &RegimeConfig::crisis_corr));
        v.push_back(nested("synthetic", "defensive_damping", &E::synthetic, &RegimeConfig::defensive_damping));

        v.push_back(optional_date("train_end", &E::train_end));
        v.push_back(optional_date("test_start", &E::test_start));
        v.push_back(num("split", "train_fraction", &E::train_fraction));
        v.push_back(nested("split", "window", &E::window, &WindowOptions::window));
        v.push_back(nested("split", "horizon", &E::window, &WindowOptions::horizon));
        v.push_back(nested("split", "train_stride", &E::window, &WindowOptions::stride));
        v.push_back(num("split", "test_stride", &E::test_stride));
        v.push_back(nested("split", "correlation_lookback", &E::window, &WindowOptions::correlation_lookback));

        v.push_back(nested("model", "lstm_hidden", &E::model, &ModelConfig::lstm_hidden));
        v.push_back(nested("model", "attention_heads", &E::model, &ModelConfig::attention_heads));
        v.push_back(nested("model", "attention_head_dim", &E::model, &ModelConfig::attention_head_dim));
        v.push_back(nested("model", "embed", &E::model, &ModelConfig::embed));
        v.push_back(nested("model", "gat_heads", &E::model, &ModelConfig::gat_heads));
        v.push_back(nested("model", "gat_head_dim", &E::model, &ModelConfig::gat_head_dim));
        v.push_back(nested("model", "head_lstm", &E::model, &ModelConfig::head_lstm));
        v.push_back(nested("model", "mlp_hidden", &E::model, &ModelConfig::mlp_hidden));
        v.push_back(nested("model", "dropout", &E::model, &ModelConfig::dropout));
        v.push_back(nested("model", "temperature", &E::model, &ModelConfig::temperature));
        v.push_back(nested("model", "leaky_slope", &E::model, &ModelConfig::leaky_slope));
        v.push_back(nested("model", "use_head_lstm", &E::model, &ModelConfig::use_head_lstm));
        v.push_back(nested("model", "per_step", &E::model, &ModelConfig::per_step));
        v.push_back({"model", "graph",
                     [](const RunConfig& c) {
                         return std::string(c.experiment.model.graph == GraphMode::learnable ? "learnable" : "static");
                     },
                     [](RunConfig& c, const std::string& s) {
                         if (s == "learnable") c.experiment.model.graph = GraphMode::learnable;
                         else if (s == "static") c.experiment.model.graph = GraphMode::static_correlation;
                         else throw ConfigError("'" + s + "' is not learnable or static");
                     }});
        v.push_back(nested("model", "correlation_threshold", &E::model, &ModelConfig::correlation_threshold));
        v.push_back({"model", "w_min", [](const RunConfig& c) { return fmt(c.experiment.model.bounds.lo); },
                     [](RunConfig& c, const std::string& s) { c.experiment.model.bounds.lo = parse_double(s); }});
        v.push_back({"model", "w_max", [](const RunConfig& c) { return fmt(c.experiment.model.bounds.hi); },
                     [](RunConfig& c, const std::string& s) { c.experiment.model.bounds.hi = parse_double(s); }});
        v.push_back(num("model", "seed", &E::model_seed));

        v.push_back(nested("loss", "sharpe", &E::loss, &LossWeights::sharpe));
        v.push_back(nested("loss", "sortino", &E::loss, &LossWeights::sortino));
        v.push_back(nested("loss", "risk", &E::loss, &LossWeights::risk));
        v.push_back(nested("loss", "diversification", &E::loss, &LossWeights::diversification));
        v.push_back(nested("loss", "turnover", &E::loss, &LossWeights::turnover));
        v.push_back(nested("loss", "risk_free", &E::loss, &LossWeights::risk_free));
        v.push_back(nested("loss", "cvar_alpha", &E::loss, &LossWeights::cvar_alpha));
        v.push_back(nested("loss", "drawdown_weight", &E::loss, &LossWeights::drawdown_weight));
        v.push_back(nested("loss", "turnover_target", &E::loss, &LossWeights::turnover_target));
        v.push_back(nested("loss", "turnover_width", &E::loss, &LossWeights::turnover_width));
        v.push_back(nested("loss", "diversify", &E::loss, &LossWeights::diversify));

        v.push_back(nested("train", "learning_rate", &E::train, &TrainConfig::learning_rate));
        v.push_back(nested("train", "lr_min", &E::train, &TrainConfig::lr_min));
        v.push_back(nested("train", "batch_size", &E::train, &TrainConfig::batch_size));
        v.push_back(nested("train", "max_epochs", &E::train, &TrainConfig::max_epochs));
        v.push_back(nested("train", "patience", &E::train, &TrainConfig::patience));
        v.push_back(nested("train", "validation_fraction", &E::train, &TrainConfig::validation_fraction));
        v.push_back(nested("train", "clip_norm", &E::train, &TrainConfig::clip_norm));
        v.push_back(nested("train", "seed", &E::train, &TrainConfig::seed));

        v.push_back({"backtest", "strategies",
                     [](const RunConfig& c) {
                         std::string s;
                         for (const auto& x : c.strategies) s += (s.empty() ? "" : ",") + x;
                         return s;
                     },
                     [](RunConfig& c, const std::string& s) { c.strategies = split_list(s); }});
        v.push_back(num("backtest", "random_seed", &E::random_seed));
        v.push_back({"output", "dir", [](const RunConfig& c) { return c.out_dir; },
                     [](RunConfig& c, const std::string& s) { c.out_dir = s; }});
        return v;
    }();
    return k;
}

const Key* find_key(const std::string& section, const std::string& name) {
    for (const auto& k : keys())
        if (k.section == section && k.name == name) return &k;
    return nullptr;
}

}  // namespace

const std::vector<std::string>& known_strategies() {
    static const std::vector<std::string> s{"equal_weight", "mean_variance", "risk_parity", "random", "crisp"};
    return s;
}

void RunConfig::validate() const {
    experiment.validate();
    if (experiment.model.bounds.lo < 0.0 || experiment.model.bounds.hi > 1.0 ||
        !(experiment.model.bounds.lo < experiment.model.bounds.hi)) {
        throw ConfigError("model.w_min and model.w_max must satisfy 0 <= w_min < w_max <= 1");
    }
    if (strategies.empty()) throw ConfigError("backtest.strategies is empty");
    for (const auto& s : strategies) {
        if (std::find(known_strategies().begin(), known_strategies().end(), s) == known_strategies().end()) {
            throw ConfigError("backtest.strategies: unknown strategy '" + s + "'");
        }
    }
    if (!std::filesystem::exists(experiment.universe_path)) {
        throw ConfigError("data.universe: file not found: " + experiment.universe_path);
    }
    if (!experiment.csv_path.empty() && !std::filesystem::exists(experiment.csv_path)) {
        throw ConfigError("data.csv: file not found: " + experiment.csv_path);
    }
    if (out_dir.empty()) throw ConfigError("output.dir is empty");
}

RunConfig parse_run_config(const std::string& text) {
    std::istringstream in(text);
    CLI::ConfigINI reader;
    reader.comment('#');
    std::vector<CLI::ConfigItem> items;
    try {
        items = reader.from_config(in);
    } catch (const CLI::Error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }
    std::vector<std::pair<const Key*, std::string>> assignments;
    std::optional<std::string> preset;
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;
        std::string value;
        for (const auto& part : item.inputs) value += (value.empty() ? "" : ",") + part;
        const std::string section = item.parents.empty() ? "" : item.parents.front();
        const std::string full = section.empty() ? item.name : section + "." + item.name;
        if (item.parents.size() > 1) throw ConfigError("unknown config key '" + item.fullname() + "'");
        if (section == "model" && item.name == "preset") {
            preset = value;
            continue;
        }
        const Key* k = find_key(section, item.name);
        if (k == nullptr) throw ConfigError("unknown config key '" + full + "'");
        assignments.emplace_back(k, value);
    }
    RunConfig cfg;
    if (preset) {
        if (*preset == "full") cfg.experiment.model = ModelConfig::full();
        else if (*preset == "desk") cfg.experiment.model = ModelConfig::desk();
        else throw ConfigError("model.preset: '" + *preset + "' is not full or desk");
    }
    for (const auto& [k, value] : assignments) {
        try {
            k->set(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(k->section + "." + k->name + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string render_run_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "# resolved configuration\n";
    std::string section;
    for (const auto& k : keys()) {
        if (k.section != section) {
            section = k.section;
            out << "\n[" << section << "]\n";
        }
        out << k.name << " = \"" << k.get(cfg) << "\"\n";
    }
    return out.str();
}

}  // namespace crisp::cli
