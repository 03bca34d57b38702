#pragma once

// Window sampling and the per-window feature pipeline: instance
// normalization, log-scale static feature, date/time features, lags and
// assembly into model inputs.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "clops/distribution.hpp"
#include "clops/model.hpp"
#include "clops/trace.hpp"

namespace clops {

inline constexpr double kNormEps = 1e-10;

struct NormStats {
    std::vector<double> loc;    // per target dimension
    std::vector<double> scale;  // sqrt(mean squared deviation + eps), always > 0
    double eps = kNormEps;
};

/// Normalizes a [L x d_y] window in place. Statistics use only positions with
/// valid[t] != 0 (all positions when `valid` is empty).
NormStats instance_normalize(std::span<double> window, std::size_t d_y, std::span<const std::uint8_t> valid = {});

/// Maps a normalized-scale forecast back to the data scale, one NormStats per
/// batch row.
ForecastDistribution unnormalize_forecast(const ForecastDistribution& dist, std::span<const NormStats> stats);

/// log(scale) per target dimension.
std::vector<double> log_scale_feature(const NormStats& stats);

/// minute/59, hour/23, weekday/6, (day-1)/30, (yday-1)/365, each shifted by -0.5.
std::array<double, kDatetimeFeatures> datetime_features(std::int64_t epoch_seconds);

struct LagMatrix {
    std::size_t positions = 0;
    std::size_t n_lags = 0;
    std::vector<double> values;       // [positions x n_lags]
    std::vector<std::uint8_t> valid;  // 0 where the lagged index falls before the series start
};

/// values[p, j] = y[anchor + p - lags[j]], zero-filled (and flagged) when that
/// index is negative or beyond the end of y.
LagMatrix lag_features(std::span<const float> y, std::ptrdiff_t anchor, std::size_t positions,
                       std::span<const std::size_t> lags);

/// Where one window sits: context occupies [start, start + L), prediction
/// range [start + L, start + L + H). start < 0 means left padding.
struct WindowRef {
    std::size_t series = 0;
    std::ptrdiff_t start = 0;
};

struct WindowBatch {
    std::size_t batch = 0, context_length = 0, horizon = 0;
    std::size_t d_y = 0, d_pd = 0, n_static = 0;
    std::vector<std::size_t> lags;

    std::vector<double> context_targets;  // [B, L, d_y], normalized, 0 at padding
    std::vector<double> future_targets;   // [B, H, d_y], normalized
    std::vector<double> lag_values;       // [B, L+H, d_y * n_lags], normalized, dim-major per position
    std::vector<std::uint8_t> lag_valid;  // same layout
    std::vector<double> past_dynamic;     // [B, L, d_pd], window-standardized
    std::vector<double> datetime;         // [B, L+H, 5]
    std::vector<double> static_feats;     // [B, d_y + n_static]: log scale then static_real
    std::vector<std::uint8_t> context_valid;  // [B, L]
    std::vector<NormStats> stats;
    std::vector<WindowRef> windows;
};

/// Builds the batch for explicit window positions. Positions past the end of
/// a series read as zero.
WindowBatch make_window_batch(const Collection& collection, std::span<const WindowRef> windows, std::size_t L,
                              std::size_t H, std::span<const std::size_t> lags);

/// Draws B windows: series i with probability length_i / total, start uniform
/// over [0, length_i - L - H], or left-padded when the series is shorter than
/// L + H. Draw `slot` of `iteration` depends only on (seed, iteration, slot).
std::vector<WindowRef> sample_window_refs(const Collection& collection, std::size_t B, std::size_t L, std::size_t H,
                                          std::uint64_t seed, std::uint64_t iteration);

WindowBatch sample_windows(const Collection& collection, std::size_t B, std::size_t L, std::size_t H,
                           std::span<const std::size_t> lags, std::uint64_t seed, std::uint64_t iteration);

/// Concatenates channels per position in the ModelConfig layout. Prediction
/// positions get zero targets and past dynamics; lags shorter than H are
/// zeroed there (all lags for the masked encoder). Throws DimensionError when
/// the batch disagrees with the config.
template <typename Real>
ModelInput<Real> assemble_inputs(const WindowBatch& batch, const ModelConfig& config);

}  // namespace clops
