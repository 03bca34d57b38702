#pragma once

// Rolling-window evaluation: sMAPE on the median forecast, weighted quantile
// loss and CRPS pooled over every (series, window, step), CRPS-sum for
// multivariate targets, and the seasonal-free naive baseline.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clops/distribution.hpp"
#include "clops/features.hpp"
#include "clops/model.hpp"
#include "clops/trace.hpp"
#include "json.hpp"

namespace clops {

/// (200/H) * sum |y - yhat| / (|y| + |yhat|) over an [H x d_y] block, averaged
/// across dimensions. Terms with a zero denominator contribute 0.
double smape(std::span<const double> y, std::span<const double> yhat, std::size_t d_y = 1);

/// (alpha - 1{y < q}) (y - q).
double pinball(double alpha, double q, double y);

/// Pools quantile losses over a set of observations; y values come with one
/// forecast per level.
class QuantileScorer {
public:
    explicit QuantileScorer(std::vector<double> levels);

    void add(double y, std::span<const double> quantiles);
    void merge(const QuantileScorer& other);

    /// 2 * sum pinball / sum |y| at level index k. Throws DataError when sum |y| is 0.
    double wql(std::size_t k) const;
    /// Mean of wql over the levels.
    double crps() const;

    const std::vector<double>& levels() const { return levels_; }
    std::size_t count() const { return count_; }
    double abs_sum() const { return abs_sum_; }

private:
    std::vector<double> levels_;
    std::vector<double> loss_;
    double abs_sum_ = 0.0;
    std::size_t count_ = 0;
};

/// wQL at one level over observations y[i] with forecasts q[i].
double wql(std::span<const double> y, std::span<const double> q, double alpha);

/// CRPS over observations y[N] with quantile forecasts q[N x K] at `levels`.
double crps(std::span<const double> y, std::span<const double> q, std::span<const double> levels);

/// CRPS of the sum across dimensions: samples [S x H x d], targets [H x d].
/// Throws ContractError when S < K.
double crps_sum(std::span<const double> samples, std::span<const double> y, std::size_t n_samples,
                std::size_t horizon, std::size_t dims, std::span<const double> levels);

/// Empirical quantiles of the dimension-summed samples: [H x K], plus the summed targets [H].
void summed_quantiles(std::span<const double> samples, std::span<const double> y, std::size_t n_samples,
                      std::size_t horizon, std::size_t dims, std::span<const double> levels,
                      std::vector<double>& q_out, std::vector<double>& y_out);

/// Last observed value repeated; Gaussian with sigma_h = sigma * sqrt(h), sigma =
/// RMS of one-step differences over the context. Context layout [L x d_y];
/// positions with valid[t] == 0 are ignored.
ForecastDistribution naive_forecast(std::span<const double> context, std::size_t d_y, std::size_t horizon,
                                    std::span<const std::uint8_t> valid = {});

struct EvalPlan {
    std::size_t horizon = 48;
    std::size_t stride = 48;
    std::size_t windows = 12;
    std::vector<double> levels = decile_levels();
    std::size_t n_samples = 100;
    std::uint64_t seed = 0;
    std::size_t batch = 64;
};

/// First forecast index of every evaluation window of a series of length T:
/// T - H - (m - 1 - w) * stride for w = 0..m-1. Throws DataError when the
/// earliest window has no context left.
std::vector<std::size_t> window_starts(std::size_t length, const EvalPlan& plan);

/// Produces data-scale forecasts for a batch of windows. WindowRef.start is
/// where the L-step context begins, so the forecast covers
/// [start + L, start + L + H).
using Forecaster = std::function<ForecastDistribution(const Collection&, std::span<const WindowRef>)>;

template <typename Real>
Forecaster model_forecaster(Model<Real>& model);
Forecaster naive_forecaster(std::size_t context_length, std::size_t horizon);

struct WindowScore {
    std::string series_id;
    std::size_t window = 0;
    std::int64_t forecast_start = 0;  // timestamp of the first forecast step
    double smape = 0.0;
    double crps = 0.0;  // this window's own quantile-loss ratio
};

struct MetricsReport {
    double smape = 0.0;
    double crps = 0.0;
    std::optional<double> crps_sum;  // multivariate only
    std::vector<double> wql;         // per level
    std::vector<double> levels;
    std::size_t n_series = 0;
    std::size_t n_windows = 0;
    std::string fingerprint;
    std::vector<WindowScore> windows;

    nlohmann::json to_json() const;
    /// One row per series-window, then a summary row (series_id "ALL").
    std::string to_csv() const;
};

MetricsReport rolling_evaluate(const Forecaster& forecaster, const Collection& collection, std::size_t context_length,
                               const EvalPlan& plan, const std::string& fingerprint = {});

}  // namespace clops
