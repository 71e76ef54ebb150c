#include "crisp/experiment.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

namespace crisp {

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v{Variant::full,    Variant::static_graph,       Variant::single_head,
                                        Variant::no_lstm, Variant::no_crisis_features, Variant::random_selection};
    return v;
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "Full CRISP";
        case Variant::static_graph: return "w/o Learnable Graph";
        case Variant::single_head: return "w/o Multi-Head Attn";
        case Variant::no_lstm: return "w/o LSTM";
        case Variant::no_crisis_features: return "w/o Crisis Features";
        case Variant::random_selection: return "Random Selection";
    }
    return "unknown";
}

std::optional<Variant> parse_variant(const std::string& text) {
    static const std::vector<std::pair<std::string, Variant>> keys{
        {"full", Variant::full},       {"static", Variant::static_graph},
        {"single-head", Variant::single_head}, {"no-lstm", Variant::no_lstm},
        {"no-crisis", Variant::no_crisis_features}, {"random", Variant::random_selection}};
    for (const auto& [k, v] : keys)
        if (text == k) return v;
    for (Variant v : all_variants())
        if (text == variant_name(v)) return v;
    return std::nullopt;
}

bool variant_trains(Variant v) { return v != Variant::random_selection; }

ModelConfig apply_variant(ModelConfig base, Variant v) {
    switch (v) {
        case Variant::static_graph: base.graph = GraphMode::static_correlation; break;
        case Variant::single_head:
            base.attention_heads = 1;
            base.attention_head_dim = base.embed;
            break;
        case Variant::no_lstm: base.use_head_lstm = false; break;
        case Variant::no_crisis_features: base.features = non_crisis_feature_indices().size(); break;
        case Variant::full:
        case Variant::random_selection: break;
    }
    return base;
}

std::vector<std::size_t> variant_features(Variant v) {
    return v == Variant::no_crisis_features ? non_crisis_feature_indices() : std::vector<std::size_t>{};
}

void ExperimentConfig::validate() const {
    if (csv_path.empty()) {
        synthetic.validate();
        if (synthetic_days == 0) throw ConfigError("synthetic days must be positive");
    }
    if (train_end.has_value() != test_start.has_value()) {
        throw ConfigError("train_end and test_start must be given together");
    }
    if (train_end && !(*train_end < *test_start)) throw ConfigError("train_end must precede test_start");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
    if (window.window < 2) throw ConfigError("window must be at least 2 days");
    if (window.horizon < 1) throw ConfigError("horizon must be at least 1 day");
    if (window.stride < 1) throw ConfigError("train_stride must be at least 1");
    if (test_stride != window.horizon) {
        throw ConfigError("test_stride (" + std::to_string(test_stride) + ") must equal the horizon (" +
                          std::to_string(window.horizon) + ") so holding periods tile the test range");
    }
    if (window.correlation_lookback < 2) throw ConfigError("correlation_lookback must be at least 2");
    loss.validate();
    train.validate();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream s(line);
    std::string cell;
    while (std::getline(s, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        out.push_back(cell);
    }
    return out;
}

}  // namespace

UniverseSpec load_universe_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open universe file " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("universe file " + path + " is empty");
    const auto header = split_csv_line(line);
    if (header.empty() || header[0] != "ticker") throw DataError(path + ": first column must be 'ticker'");
    std::optional<std::size_t> def_col;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == "defensive") def_col = i;
    UniverseSpec spec;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        spec.tickers.push_back(cells.at(0));
        bool defensive = false;
        if (def_col) {
            if (*def_col >= cells.size()) throw DataError(path + ": row for " + cells[0] + " lacks 'defensive'");
            defensive = cells[*def_col] == "1" || cells[*def_col] == "true";
        }
        spec.defensive.push_back(defensive);
    }
    if (!def_col) return UniverseSpec::from_tickers(spec.tickers);
    return spec;
}

Universe load_universe(const ExperimentConfig& cfg) {
    const UniverseSpec spec = load_universe_spec(cfg.universe_path);
    if (!cfg.csv_path.empty()) {
        LoadReport rep;
        Universe u = load_csv(cfg.csv_path, spec, &rep);
        spdlog::info("loaded {} rows ({} rejected, {} ignored, {} dates dropped by alignment)", rep.rows_read,
                     rep.rejected_rows, rep.ignored_rows, rep.dropped_dates);
        return u;
    }
    RegimeConfig rc = cfg.synthetic;
    rc.tickers = spec.tickers;
    rc.defensive_indices.clear();
    for (std::size_t i = 0; i < spec.defensive.size(); ++i)
        if (spec.defensive[i]) rc.defensive_indices.push_back(i);
    return generate_synthetic(rc, cfg.synthetic_days, cfg.data_seed);
}

Dataset prepare_dataset(const ExperimentConfig& cfg) { return prepare_dataset(cfg, load_universe(cfg)); }

Dataset prepare_dataset(const ExperimentConfig& cfg, Universe universe) {
    cfg.validate();
    cfg.model.validate(universe.n_assets());
    Dataset d;
    d.universe = std::move(universe);
    d.prior = load_prior_csv(cfg.universe_path, d.universe.tickers);
    const auto& cal = d.universe.calendar;
    if (cal.size() < 2) throw DataError("the universe needs at least two days");
    if (cfg.train_end) {
        d.train_end = *cfg.train_end;
        d.test_start = *cfg.test_start;
    } else {
        const auto idx = static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(cal.size() - 1)));
        d.train_end = cal[idx];
        d.test_start = cal[std::min(idx + 1, cal.size() - 1)];
    }
    DateSplit split = split_by_date(make_windows(d.universe, cfg.window), d.train_end, d.test_start);
    d.train = std::move(split.train);
    d.dropped_windows = split.dropped;
    d.test_schedule = rebalance_schedule(d.universe, d.test_start, cfg.window.horizon,
                                         cfg.window.lookback_pad + cfg.window.window - 1);
    spdlog::info("{} assets, {} days; {} training windows, {} test periods ({} to {})", d.universe.n_assets(),
                 d.universe.n_days(), d.train.size(), d.test_schedule.size(), d.train_end.to_string(),
                 d.test_start.to_string());
    return d;
}

PreparedWindows prepare_windows(const std::vector<FeatureWindow>& raw, const std::vector<std::size_t>& subset) {
    PreparedWindows p;
    p.windows = raw;
    std::vector<Tensor> feats;
    for (auto& w : p.windows) {
        if (!subset.empty()) w.features = select_features(w.features, subset);
        feats.push_back(w.features);
    }
    if (feats.empty()) throw ContractError("no training windows to normalise");
    p.normalizer = FeatureNormalizer::fit(feats);
    for (auto& w : p.windows) w.features = p.normalizer.apply(w.features);
    return p;
}

namespace {

TrainedModel build_variant(const Dataset& data, const ExperimentConfig& cfg, Variant v, PreparedWindows& prep) {
    if (!variant_trains(v)) throw ContractError(variant_name(v) + " has no model to train");
    TrainedModel tm;
    tm.variant = v;
    tm.features = variant_features(v);
    prep = prepare_windows(data.train, tm.features);
    tm.normalizer = prep.normalizer;
    tm.model = std::make_unique<CrispModel>(apply_variant(cfg.model, v), data.prior.normalized, cfg.model_seed);
    return tm;
}

}  // namespace

TrainedModel train_variant(const Dataset& data, const ExperimentConfig& cfg, Variant v,
                           const std::optional<Checkpoint>& resume) {
    PreparedWindows prep;
    TrainedModel tm = build_variant(data, cfg, v, prep);
    spdlog::info("training {} ({} parameters)", variant_name(v), tm.model->parameters().scalar_count());
    Trainer trainer(*tm.model, cfg.train, cfg.loss);
    tm.result = trainer.fit(prep.windows, resume);
    return tm;
}

TrainedModel restore_variant(const Dataset& data, const ExperimentConfig& cfg, Variant v, const Checkpoint& ckpt) {
    PreparedWindows prep;
    TrainedModel tm = build_variant(data, cfg, v, prep);
    load_parameters(*tm.model, ckpt, true);
    return tm;
}

std::unique_ptr<Strategy> model_strategy(const TrainedModel& tm, const ExperimentConfig& cfg) {
    const std::string name = tm.variant == Variant::full ? "CRISP" : variant_name(tm.variant);
    return std::make_unique<ModelStrategy>(name, *tm.model, tm.normalizer, tm.features, cfg.window);
}

BacktestOptions backtest_options(const ExperimentConfig& cfg) {
    BacktestOptions o;
    o.horizon = cfg.window.horizon;
    o.bounds = cfg.model.bounds;
    o.risk_free = cfg.loss.risk_free;
    return o;
}

std::vector<AblationRow> ablation_suite(const Dataset& data, const ExperimentConfig& cfg,
                                        const std::vector<Variant>& variants) {
    std::vector<AblationRow> rows;
    const BacktestOptions opts = backtest_options(cfg);
    for (Variant v : variants) {
        AblationRow row;
        row.configuration = variant_name(v);
        if (variant_trains(v)) {
            TrainedModel tm = train_variant(data, cfg, v);
            row.epochs = tm.result.log.size();
            row.best_epoch = tm.result.best.best_epoch;
            auto strategy = model_strategy(tm, cfg);
            row.report = run_backtest(*strategy, data.universe, data.test_schedule, opts);
        } else {
            RandomSelectionStrategy strategy(cfg.random_seed, cfg.model.bounds);
            row.report = run_backtest(strategy, data.universe, data.test_schedule, opts);
        }
        row.report.strategy = row.configuration;
        row.metrics = row.report.metrics;
        spdlog::info("{:<22} sharpe {:+.3f}  ann_return {:+.4f}  max_dd {:+.4f}", row.configuration,
                     row.metrics.sharpe, row.metrics.ann_return, row.metrics.max_drawdown);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(17);
    out << "configuration,sharpe,sortino,ann_return,cum_return,ann_vol,max_drawdown,calmar,avg_turnover,epochs,"
           "best_epoch\n";
    for (const auto& r : rows) {
        const auto& m = r.metrics;
        out << '"' << r.configuration << '"' << ',' << m.sharpe << ',' << m.sortino << ',' << m.ann_return << ','
            << m.cum_return << ',' << m.ann_vol << ',' << m.max_drawdown << ',' << m.calmar << ','
            << m.avg_turnover << ',' << r.epochs << ',' << r.best_epoch << '\n';
    }
}

}  // namespace crisp
