#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crisp/date.hpp"
#include "crisp/features.hpp"
#include "crisp/tensor.hpp"

namespace crisp {

/// Malformed or inconsistent market data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Regime : std::uint8_t { calm = 0, crisis = 1 };
const char* regime_name(Regime r);

/// The 13-name default universe, in canonical order.
const std::vector<std::string>& default_tickers();
/// Tickers of the defensive cluster tracked in attention telemetry.
const std::vector<std::string>& default_defensive_tickers();

struct UniverseSpec {
    std::vector<std::string> tickers;
    std::vector<bool> defensive;

    static UniverseSpec defaults();
    /// Defensive flags from membership in default_defensive_tickers().
    static UniverseSpec from_tickers(std::vector<std::string> tickers);
};

/// Aligned daily panel. Column k of every matrix is calendar day k;
/// returns(:, 0) is zero because no prior close exists.
struct Universe {
    std::vector<std::string> tickers;
    std::vector<bool> defensive;
    std::vector<Date> calendar;
    Eigen::MatrixXd close;    // N x D
    Eigen::MatrixXd volume;   // N x D
    Eigen::MatrixXd returns;  // N x D simple returns
    std::vector<Regime> regimes;  // per day, synthetic data only

    std::size_t n_assets() const { return tickers.size(); }
    std::size_t n_days() const { return calendar.size(); }
    /// Number of days on which a return is defined (D - 1).
    std::size_t return_days() const { return n_days() > 0 ? n_days() - 1 : 0; }

    /// Equal-weight average of asset returns; the market proxy.
    Eigen::VectorXd market_returns() const;
    /// Copy restricted to the first `days` calendar days.
    Universe prefix(std::size_t days) const;
    /// Index of `d` in the calendar, if present.
    std::optional<std::size_t> index_of(const Date& d) const;
};

struct LoadReport {
    std::size_t rows_read = 0;
    std::size_t rejected_rows = 0;    // non-positive or non-finite prices
    std::size_t ignored_rows = 0;     // tickers outside the universe
    std::size_t dropped_dates = 0;    // removed by calendar intersection
};

/// Reads `date,ticker,close,volume` rows and aligns tickers on the
/// intersection of their calendars.
Universe load_csv(const std::string& path, const UniverseSpec& spec, LoadReport* report = nullptr);
void write_universe_csv(const Universe& u, const std::string& path);
void write_regimes_csv(const Universe& u, const std::string& path);

struct RegimeConfig {
    // Row-stochastic; index 0 = calm, 1 = crisis.
    std::array<std::array<double, 2>, 2> transition{{{0.98, 0.02}, {0.06, 0.94}}};
    double calm_mean = 0.0006;
    double crisis_mean = -0.0015;
    double defensive_crisis_mean = 0.0002;
    double calm_vol = 0.010;
    double crisis_vol = 0.025;
    double calm_corr = 0.2;
    double crisis_corr = 0.8;
    double defensive_damping = 0.4;
    std::vector<std::string> tickers = default_tickers();
    std::vector<std::size_t> defensive_indices{0, 1, 2, 3, 5, 6, 9, 10};

    /// Throws DataError on any violated invariant.
    void validate() const;
    /// Long-run crisis occupancy of the Markov chain.
    double stationary_crisis_probability() const;
};

/// Markov-switching single-factor market with a damped defensive cluster.
Universe generate_synthetic(const RegimeConfig& config, std::size_t days, std::uint64_t seed);

struct WindowOptions {
    std::size_t window = 20;
    std::size_t horizon = 5;
    std::size_t stride = 5;
    std::size_t lookback_pad = kLookbackPad;
    std::size_t correlation_lookback = 252;
};

struct FeatureWindow {
    Tensor features;                 // N x T x F, raw until normalised
    Eigen::MatrixXd target_returns;  // N x H
    Eigen::MatrixXd correlation;     // N x N trailing return correlation
    std::size_t start_index = 0;     // first feature day
    std::size_t end_index = 0;       // last feature day (the rebalance day)
    Date window_end_date;
    std::vector<Date> target_dates;
    std::optional<Regime> regime;    // regime on the rebalance day
};

/// floor((days - window - horizon) / stride) + 1, or 0 when too short.
std::size_t window_count(std::size_t days, std::size_t window, std::size_t horizon,
                         std::size_t stride);

/// Slides windows over the universe. The first window starts after the
/// lookback pad, so the count is window_count(D - pad, T, H, stride).
std::vector<FeatureWindow> make_windows(const Universe& u, const WindowOptions& opts);

/// Builds the single window whose last feature day is `end_index`; targets
/// are left empty when the horizon runs past the data.
FeatureWindow make_window_at(const Universe& u, std::size_t end_index, const WindowOptions& opts);

/// Pearson correlation of returns over up to `lookback` days ending at
/// `end_index` (inclusive).
Eigen::MatrixXd trailing_correlation(const Universe& u, std::size_t end_index,
                                     std::size_t lookback = 252);

struct DateSplit {
    std::vector<FeatureWindow> train;
    std::vector<FeatureWindow> test;
    std::size_t dropped = 0;
};

/// Train windows have every target on or before `train_end`; test windows
/// have every target on or after `test_start`. Windows straddling the gap are
/// dropped.
DateSplit split_by_date(std::vector<FeatureWindow> windows, const Date& train_end,
                        const Date& test_start);

}  // namespace crisp
