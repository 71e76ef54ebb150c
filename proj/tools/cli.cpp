#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "crisp/backtest.hpp"
#include "crisp/experiment.hpp"
#include "crisp/graph.hpp"
#include "run_config.hpp"

namespace crisp::cli {

namespace {

namespace fs = std::filesystem;

struct CommonOptions {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config, "Sectioned key = value config file");
    cmd->add_option("--out", o.out, "Output directory (overrides [output] dir)");
    cmd->add_option("--seed", o.seed, "Seed override");
}

RunConfig resolve(const CommonOptions& o) {
    RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
    if (!o.out.empty()) cfg.out_dir = o.out;
    return cfg;
}

void apply_model_seed(RunConfig& cfg, const CommonOptions& o) {
    if (o.seed) {
        cfg.experiment.model_seed = *o.seed;
        cfg.experiment.train.seed = *o.seed;
    }
}

fs::path prepare_out(const RunConfig& cfg) {
    fs::path out(cfg.out_dir);
    fs::create_directories(out);
    std::ofstream echo(out / "config.ini");
    echo << render_run_config(cfg);
    if (!echo) throw std::runtime_error("cannot write " + (out / "config.ini").string());
    return out;
}

Variant resolve_variant(const std::string& text) {
    auto v = parse_variant(text);
    if (!v) throw ConfigError("unknown --variant '" + text + "'");
    return *v;
}

void write_json(const nlohmann::json& j, const fs::path& path) {
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

int cmd_synth(RunConfig cfg, const CommonOptions& o) {
    if (o.seed) cfg.experiment.data_seed = *o.seed;
    if (!cfg.experiment.csv_path.empty()) throw ConfigError("synth needs data.csv unset (synthetic source)");
    cfg.validate();
    const fs::path out = prepare_out(cfg);
    Universe u = load_universe(cfg.experiment);
    write_universe_csv(u, (out / "universe.csv").string());
    write_regimes_csv(u, (out / "regimes.csv").string());
    std::size_t crisis = 0;
    for (Regime r : u.regimes) crisis += r == Regime::crisis;
    spdlog::info("wrote {} days x {} tickers to {} ({} crisis days)", u.n_days(), u.n_assets(), out.string(), crisis);
    return kExitOk;
}

int cmd_train(RunConfig cfg, const CommonOptions& o, const std::string& variant_text) {
    apply_model_seed(cfg, o);
    const Variant v = resolve_variant(variant_text);
    if (!variant_trains(v)) throw ConfigError(variant_name(v) + " has nothing to train");
    cfg.validate();
    const fs::path out = prepare_out(cfg);
    Dataset data = prepare_dataset(cfg.experiment);
    TrainedModel tm = train_variant(data, cfg.experiment, v);
    tm.result.best.save((out / "model.ckpt").string());
    write_training_log(tm.result.log, (out / "train_log.csv").string());
    nlohmann::json summary{{"variant", variant_name(v)},
                           {"epochs", tm.result.log.size()},
                           {"best_epoch", tm.result.best.best_epoch},
                           {"best_val_loss", tm.result.best.best_val_loss},
                           {"stop_reason", tm.result.stop_reason},
                           {"diverged", tm.result.diverged},
                           {"parameters", tm.model->parameters().scalar_count()}};
    write_json(summary, out / "train_summary.json");
    spdlog::info("best epoch {} (val {:.6f}); checkpoint {}", tm.result.best.best_epoch,
                 tm.result.best.best_val_loss, (out / "model.ckpt").string());
    return tm.result.diverged ? kExitRuntime : kExitOk;
}

int cmd_backtest(RunConfig cfg, const CommonOptions& o, const std::string& checkpoint,
                 const std::string& variant_text) {
    apply_model_seed(cfg, o);
    const Variant v = resolve_variant(variant_text);
    cfg.validate();
    if (!checkpoint.empty() && !fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint);
    const fs::path out = prepare_out(cfg);
    Dataset data = prepare_dataset(cfg.experiment);
    const BacktestOptions opts = backtest_options(cfg.experiment);

    std::optional<TrainedModel> tm;
    std::vector<BacktestReport> reports;
    for (const auto& key : cfg.strategies) {
        std::unique_ptr<Strategy> s;
        if (key == "equal_weight") s = std::make_unique<EqualWeightStrategy>();
        else if (key == "mean_variance") s = std::make_unique<MeanVarianceStrategy>(opts.bounds);
        else if (key == "risk_parity") s = std::make_unique<RiskParityStrategy>(opts.bounds);
        else if (key == "random") s = std::make_unique<RandomSelectionStrategy>(cfg.experiment.random_seed, opts.bounds);
        else if (key == "crisp") {
            if (checkpoint.empty()) {
                spdlog::info("no --checkpoint given; running baselines only");
                continue;
            }
            if (!variant_trains(v)) throw ConfigError(variant_name(v) + " has no checkpoint to load");
            tm = restore_variant(data, cfg.experiment, v, Checkpoint::load(checkpoint));
            s = model_strategy(*tm, cfg.experiment);
        }
        reports.push_back(run_backtest(*s, data.universe, data.test_schedule, opts));
        const auto& m = reports.back().metrics;
        spdlog::info("{:<20} sharpe {:+.3f}  ann_return {:+.4f}  max_dd {:+.4f}  turnover {:.4f}",
                     reports.back().strategy, m.sharpe, m.ann_return, m.max_drawdown, m.avg_turnover);
    }
    nlohmann::json j = report_json(reports);
    j["test_start"] = data.test_start.to_string();
    j["test_days"] = data.test_schedule.size() * cfg.experiment.window.horizon;
    for (const auto& r : reports) {
        if (r.attention.empty()) continue;
        auto sparsity = sparsity_report(r.attention, data.universe.defensive);
        j["attention"] = sparsity_json(sparsity, data.universe.tickers);
        write_attention_csv(r.attention, data.universe.tickers, (out / "attention.csv").string());
    }
    write_json(j, out / "metrics.json");
    write_equity_csv(reports, (out / "equity.csv").string());
    write_weights_csv(reports, data.universe.tickers, (out / "weights.csv").string());
    return kExitOk;
}

int cmd_ablate(RunConfig cfg, const CommonOptions& o, const std::vector<std::string>& only) {
    apply_model_seed(cfg, o);
    std::vector<Variant> variants;
    for (const auto& name : only) variants.push_back(resolve_variant(name));
    if (variants.empty()) variants = all_variants();
    cfg.validate();
    const fs::path out = prepare_out(cfg);
    Dataset data = prepare_dataset(cfg.experiment);
    auto rows = ablation_suite(data, cfg.experiment, variants);
    write_ablation_csv(rows, (out / "ablation.csv").string());
    std::printf("%-22s %8s %8s %10s %10s %8s\n", "configuration", "sharpe", "sortino", "ann_ret", "max_dd",
                "calmar");
    for (const auto& r : rows) {
        std::printf("%-22s %8.3f %8.3f %10.4f %10.4f %8.3f\n", r.configuration.c_str(), r.metrics.sharpe,
                    r.metrics.sortino, r.metrics.ann_return, r.metrics.max_drawdown, r.metrics.calmar);
    }
    return kExitOk;
}

int cmd_features(const CommonOptions& o) {
    std::ostringstream s;
    s << "index,name,category,formula\n";
    const auto& roster = feature_roster();
    for (std::size_t i = 0; i < roster.size(); ++i)
        s << i << ',' << roster[i].name << ',' << roster[i].category << ',' << roster[i].formula_id << '\n';
    std::cout << s.str();
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        std::ofstream f(fs::path(o.out) / "features.csv");
        f << s.str();
    }
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"Crisis-resilient portfolio allocation: data, training, backtests and ablations", "crisp"};
    app.require_subcommand(1);
    CommonOptions common;
    std::string checkpoint;
    std::string variant = "full";
    std::vector<std::string> only;

    auto* synth = app.add_subcommand("synth", "Write a synthetic regime-switching universe and regime labels");
    auto* train = app.add_subcommand("train", "Train CRISP or an ablation variant");
    auto* backtest = app.add_subcommand("backtest", "Evaluate strategies on the test split");
    auto* ablate = app.add_subcommand("ablate", "Run the component-contribution table");
    auto* features = app.add_subcommand("features", "Print the 31-feature roster");
    for (auto* cmd : {synth, train, backtest, ablate, features}) add_common(cmd, common);
    train->add_option("--variant", variant, "full, static, single-head, no-lstm, no-crisis");
    backtest->add_option("--variant", variant, "Variant the checkpoint was trained as");
    backtest->add_option("--checkpoint", checkpoint, "Trained model; omit for baselines only");
    ablate->add_option("--only", only, "Run only the named configuration(s)");

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (features->parsed()) return cmd_features(common);
        RunConfig cfg = resolve(common);
        if (synth->parsed()) return cmd_synth(std::move(cfg), common);
        if (train->parsed()) return cmd_train(std::move(cfg), common, variant);
        if (backtest->parsed()) return cmd_backtest(std::move(cfg), common, checkpoint, variant);
        if (ablate->parsed()) return cmd_ablate(std::move(cfg), common, only);
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const CheckpointError& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace crisp::cli
