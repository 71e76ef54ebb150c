#include "crisp/market_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

namespace crisp {

const char* regime_name(Regime r) { return r == Regime::crisis ? "crisis" : "calm"; }

const std::vector<std::string>& default_tickers() {
    static const std::vector<std::string> t = {"WMT", "CL",  "JNJ", "KR", "GILD", "AWK", "ABT",
                                               "ORCL", "MCD", "NU", "XEL", "VZ",  "HCN"};
    return t;
}

const std::vector<std::string>& default_defensive_tickers() {
    static const std::vector<std::string> t = {"WMT", "CL", "JNJ", "KR", "AWK", "ABT", "NU", "XEL"};
    return t;
}

UniverseSpec UniverseSpec::defaults() { return from_tickers(default_tickers()); }

UniverseSpec UniverseSpec::from_tickers(std::vector<std::string> tickers) {
    UniverseSpec spec;
    const auto& def = default_defensive_tickers();
    for (const auto& t : tickers) {
        spec.defensive.push_back(std::find(def.begin(), def.end(), t) != def.end());
    }
    spec.tickers = std::move(tickers);
    return spec;
}

Eigen::VectorXd Universe::market_returns() const {
    if (returns.rows() == 0) return Eigen::VectorXd::Zero(returns.cols());
    return returns.colwise().mean().transpose();
}

Universe Universe::prefix(std::size_t days) const {
    days = std::min(days, n_days());
    const auto d = static_cast<Eigen::Index>(days);
    Universe u;
    u.tickers = tickers;
    u.defensive = defensive;
    u.calendar.assign(calendar.begin(), calendar.begin() + static_cast<std::ptrdiff_t>(days));
    u.close = close.leftCols(d);
    u.volume = volume.leftCols(d);
    u.returns = returns.leftCols(d);
    if (!regimes.empty()) {
        u.regimes.assign(regimes.begin(), regimes.begin() + static_cast<std::ptrdiff_t>(days));
    }
    return u;
}

std::optional<std::size_t> Universe::index_of(const Date& d) const {
    auto it = std::lower_bound(calendar.begin(), calendar.end(), d);
    if (it == calendar.end() || *it != d) return std::nullopt;
    return static_cast<std::size_t>(it - calendar.begin());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

void fill_returns(Universe& u) {
    u.returns = Eigen::MatrixXd::Zero(u.close.rows(), u.close.cols());
    for (Eigen::Index k = 1; k < u.close.cols(); ++k) {
        u.returns.col(k) = (u.close.col(k).array() / u.close.col(k - 1).array() - 1.0).matrix();
    }
}

}  // namespace

Universe load_csv(const std::string& path, const UniverseSpec& spec, LoadReport* report) {
    if (spec.tickers.size() < 2) throw DataError("a universe needs at least two tickers");
    std::ifstream in(path);
    if (!in) throw DataError("cannot open price file '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw DataError("price file '" + path + "' is empty");
    auto header = split_csv_line(line);
    if (header != std::vector<std::string>{"date", "ticker", "close", "volume"}) {
        throw DataError("price file '" + path + "' must start with header date,ticker,close,volume");
    }

    std::map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < spec.tickers.size(); ++i) slot[spec.tickers[i]] = i;
    std::vector<std::map<Date, std::pair<double, double>>> rows(spec.tickers.size());
    LoadReport rep;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 4) {
            throw DataError(path + ":" + std::to_string(line_no) + ": expected 4 columns");
        }
        ++rep.rows_read;
        auto it = slot.find(cells[1]);
        if (it == slot.end()) {
            ++rep.ignored_rows;
            continue;
        }
        Date date;
        double close = 0.0, volume = 0.0;
        try {
            date = Date::parse(cells[0]);
            close = std::stod(cells[2]);
            volume = std::stod(cells[3]);
        } catch (const std::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!std::isfinite(close) || close <= 0.0 || !std::isfinite(volume) || volume < 0.0) {
            ++rep.rejected_rows;
            continue;
        }
        if (!rows[it->second].emplace(date, std::make_pair(close, volume)).second) {
            throw DataError(path + ":" + std::to_string(line_no) + ": duplicate row for " +
                            cells[1] + " on " + cells[0]);
        }
    }

    std::vector<std::string> missing;
    for (std::size_t i = 0; i < spec.tickers.size(); ++i) {
        if (rows[i].empty()) missing.push_back(spec.tickers[i]);
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw DataError("price file '" + path + "' has no rows for: " + list);
    }

    std::set<Date> all_dates;
    for (const auto& r : rows) {
        for (const auto& [d, _] : r) all_dates.insert(d);
    }
    std::vector<Date> calendar;
    for (const auto& d : all_dates) {
        bool everywhere = std::all_of(rows.begin(), rows.end(),
                                      [&](const auto& r) { return r.count(d) > 0; });
        if (everywhere) calendar.push_back(d);
    }
    rep.dropped_dates = all_dates.size() - calendar.size();
    if (rep.rejected_rows > 0) {
        spdlog::warn("{}: rejected {} rows with non-positive prices", path, rep.rejected_rows);
    }
    if (rep.dropped_dates > 0) {
        spdlog::info("{}: calendar intersection dropped {} dates", path, rep.dropped_dates);
    }

    Universe u;
    u.tickers = spec.tickers;
    u.defensive = spec.defensive;
    if (u.defensive.size() != u.tickers.size()) u.defensive.assign(u.tickers.size(), false);
    u.calendar = calendar;
    const auto n = static_cast<Eigen::Index>(u.tickers.size());
    const auto d = static_cast<Eigen::Index>(calendar.size());
    u.close.resize(n, d);
    u.volume.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < d; ++k) {
            const auto& [c, v] = rows[static_cast<std::size_t>(i)].at(calendar[static_cast<std::size_t>(k)]);
            u.close(i, k) = c;
            u.volume(i, k) = v;
        }
    }
    fill_returns(u);
    if (report) *report = rep;
    return u;
}

void write_universe_csv(const Universe& u, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "date,ticker,close,volume\n";
    out << std::setprecision(17);
    for (std::size_t k = 0; k < u.n_days(); ++k) {
        const std::string date = u.calendar[k].to_string();
        for (std::size_t i = 0; i < u.n_assets(); ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            const auto kk = static_cast<Eigen::Index>(k);
            out << date << ',' << u.tickers[i] << ',' << u.close(ii, kk) << ',' << u.volume(ii, kk)
                << '\n';
        }
    }
}

void write_regimes_csv(const Universe& u, const std::string& path) {
    if (u.regimes.size() != u.n_days()) throw DataError("universe carries no regime labels");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "date,regime\n";
    for (std::size_t k = 0; k < u.n_days(); ++k) {
        out << u.calendar[k].to_string() << ',' << regime_name(u.regimes[k]) << '\n';
    }
}

void RegimeConfig::validate() const {
    for (std::size_t r = 0; r < 2; ++r) {
        double s = transition[r][0] + transition[r][1];
        if (std::fabs(s - 1.0) > 1e-12 || transition[r][0] < 0.0 || transition[r][1] < 0.0) {
            throw DataError("transition matrix row " + std::to_string(r) +
                            " is not a probability vector");
        }
    }
    if (!(calm_vol > 0.0) || !(crisis_vol > 0.0)) throw DataError("volatilities must be positive");
    for (double c : {calm_corr, crisis_corr}) {
        if (!(c >= 0.0 && c < 1.0)) throw DataError("correlation levels must lie in [0, 1)");
    }
    if (!(defensive_damping > 0.0 && defensive_damping <= 1.0)) {
        throw DataError("defensive damping must lie in (0, 1]");
    }
    if (defensive_crisis_mean < 0.0) throw DataError("defensive crisis mean must be non-negative");
    if (tickers.size() < 2) throw DataError("a universe needs at least two tickers");
    for (auto i : defensive_indices) {
        if (i >= tickers.size()) throw DataError("defensive index out of range");
    }
}

double RegimeConfig::stationary_crisis_probability() const {
    const double a = transition[0][1];
    const double b = transition[1][0];
    return a + b > 0.0 ? a / (a + b) : 0.0;
}

Universe generate_synthetic(const RegimeConfig& config, std::size_t days, std::uint64_t seed) {
    config.validate();
    if (days < 2) throw DataError("synthetic universe needs at least two days");
    const std::size_t n = config.tickers.size();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Universe u;
    u.tickers = config.tickers;
    u.defensive.assign(n, false);
    for (auto i : config.defensive_indices) u.defensive[i] = true;

    Date d = Date::parse("2005-01-03");
    for (std::size_t k = 0; k < days; ++k) {
        while (d.is_weekend()) d = d.plus_days(1);
        u.calendar.push_back(d);
        d = d.plus_days(1);
    }

    u.regimes.resize(days);
    Regime state = Regime::calm;
    for (std::size_t k = 0; k < days; ++k) {
        if (k > 0) {
            const double stay = config.transition[static_cast<std::size_t>(state)]
                                                  [static_cast<std::size_t>(state)];
            if (unif(rng) >= stay) state = state == Regime::calm ? Regime::crisis : Regime::calm;
        }
        u.regimes[k] = state;
    }

    const auto ni = static_cast<Eigen::Index>(n);
    const auto di = static_cast<Eigen::Index>(days);
    u.returns = Eigen::MatrixXd::Zero(ni, di);
    u.close.resize(ni, di);
    u.volume.resize(ni, di);
    for (Eigen::Index i = 0; i < ni; ++i) u.close(i, 0) = 100.0;
    for (std::size_t k = 0; k < days; ++k) {
        const bool crisis = u.regimes[k] == Regime::crisis;
        const double rho = crisis ? config.crisis_corr : config.calm_corr;
        const double factor = normal(rng);
        for (std::size_t i = 0; i < n; ++i) {
            const double idio = normal(rng);
            const double vz = normal(rng);
            const auto ii = static_cast<Eigen::Index>(i);
            const auto kk = static_cast<Eigen::Index>(k);
            u.volume(ii, kk) = 1e6 * std::exp(0.25 * vz) * (crisis ? 1.6 : 1.0);
            if (k == 0) continue;
            double mu = crisis ? config.crisis_mean : config.calm_mean;
            double sigma = crisis ? config.crisis_vol : config.calm_vol;
            if (crisis && u.defensive[i]) {
                mu = config.defensive_crisis_mean;
                sigma *= config.defensive_damping;
            }
            double r = mu + sigma * (std::sqrt(rho) * factor + std::sqrt(1.0 - rho) * idio);
            r = std::max(r, -0.95);
            u.returns(ii, kk) = r;
            u.close(ii, kk) = u.close(ii, kk - 1) * (1.0 + r);
        }
    }
    return u;
}

std::size_t window_count(std::size_t days, std::size_t window, std::size_t horizon,
                         std::size_t stride) {
    if (stride == 0) throw ContractError("window stride must be positive");
    if (days < window + horizon) return 0;
    return (days - window - horizon) / stride + 1;
}

Eigen::MatrixXd trailing_correlation(const Universe& u, std::size_t end_index, std::size_t lookback) {
    const auto n = static_cast<Eigen::Index>(u.n_assets());
    const std::size_t first = end_index + 1 > lookback ? std::max<std::size_t>(1, end_index + 1 - lookback) : 1;
    if (end_index < first + 1) return Eigen::MatrixXd::Identity(n, n);
    const auto len = static_cast<Eigen::Index>(end_index + 1 - first);
    Eigen::MatrixXd x = u.returns.block(0, static_cast<Eigen::Index>(first), n, len);
    Eigen::VectorXd mean = x.rowwise().mean();
    x.colwise() -= mean;
    Eigen::MatrixXd cov = x * x.transpose();
    Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double den = std::sqrt(cov(i, i) * cov(j, j));
            corr(i, j) = den > 1e-300 ? cov(i, j) / den : 0.0;
        }
    }
    return corr;
}

FeatureWindow make_window_at(const Universe& u, std::size_t end_index, const WindowOptions& opts) {
    const std::size_t span = opts.window + opts.lookback_pad;
    if (end_index >= u.n_days() || end_index + 1 < span) {
        throw ContractError("window ending at day " + std::to_string(end_index) + " needs " +
                            std::to_string(span) + " days of history (window plus lookback pad)");
    }
    const std::size_t block_start = end_index + 1 - span;
    const auto n = static_cast<Eigen::Index>(u.n_assets());
    const auto bs = static_cast<Eigen::Index>(block_start);
    const auto len = static_cast<Eigen::Index>(span);

    PriceBlock block;
    block.close = u.close.block(0, bs, n, len);
    block.volume = u.volume.block(0, bs, n, len);
    block.market_returns = u.market_returns().segment(bs, len);
    block.defensive = u.defensive;

    FeatureWindow w;
    w.features = compute_features(block, opts.window, opts.lookback_pad);
    w.start_index = end_index + 1 - opts.window;
    w.end_index = end_index;
    w.window_end_date = u.calendar[end_index];
    const std::size_t avail = std::min(opts.horizon, u.n_days() - end_index - 1);
    if (avail == opts.horizon) {
        w.target_returns = u.returns.block(0, static_cast<Eigen::Index>(end_index + 1), n,
                                           static_cast<Eigen::Index>(opts.horizon));
        for (std::size_t h = 1; h <= opts.horizon; ++h) w.target_dates.push_back(u.calendar[end_index + h]);
    } else {
        w.target_returns.resize(n, 0);
    }
    w.correlation = trailing_correlation(u, end_index, opts.correlation_lookback);
    if (!u.regimes.empty()) w.regime = u.regimes[end_index];
    return w;
}

std::vector<FeatureWindow> make_windows(const Universe& u, const WindowOptions& opts) {
    std::vector<FeatureWindow> out;
    const std::size_t d = u.n_days();
    const std::size_t usable = d > opts.lookback_pad ? d - opts.lookback_pad : 0;
    const std::size_t count = window_count(usable, opts.window, opts.horizon, opts.stride);
    if (count == 0) {
        spdlog::warn("make_windows: {} days cannot hold a {}-day window, {}-day horizon and {}-day pad",
                     d, opts.window, opts.horizon, opts.lookback_pad);
        return out;
    }
    out.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        const std::size_t start = opts.lookback_pad + w * opts.stride;
        out.push_back(make_window_at(u, start + opts.window - 1, opts));
    }
    return out;
}

DateSplit split_by_date(std::vector<FeatureWindow> windows, const Date& train_end,
                        const Date& test_start) {
    if (!(train_end < test_start)) {
        throw ContractError("split_by_date: train end " + train_end.to_string() +
                            " must precede test start " + test_start.to_string());
    }
    DateSplit split;
    for (auto& w : windows) {
        if (w.target_dates.empty()) {
            ++split.dropped;
            continue;
        }
        if (w.target_dates.back() <= train_end) {
            split.train.push_back(std::move(w));
        } else if (w.target_dates.front() >= test_start) {
            split.test.push_back(std::move(w));
        } else {
            ++split.dropped;
        }
    }
    if (split.dropped > 0) {
        spdlog::info("split_by_date: dropped {} windows straddling the split", split.dropped);
    }
    return split;
}

}  // namespace crisp
