#pragma once

// Per-step predictive distributions in plain double storage, detached from
// any gradient graph. Produced by the probabilistic heads (normalized scale)
// and by the naive baseline (original scale).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clops/rng.hpp"

namespace clops {

enum class DistributionKind { student_t, mv_student_t, quantiles, normal };

std::string to_string(DistributionKind kind);

/// Parameter layout, per (series b, step h):
///   student_t     [dims x 3]        mu, sigma, nu
///   normal        [dims x 2]        mu, sigma
///   quantiles     [dims x K]        values at `levels`, nondecreasing
///   mv_student_t  [dims + dims^2 + 1]  mu, lower-triangular scale (row-major), nu
struct ForecastDistribution {
    DistributionKind kind = DistributionKind::student_t;
    std::size_t batch = 0;
    std::size_t horizon = 0;
    std::size_t dims = 0;
    std::vector<double> params;
    std::vector<double> levels;  // quantile levels, only for kind == quantiles

    std::size_t step_size() const;
    std::span<const double> step(std::size_t b, std::size_t h) const;
    std::span<double> step(std::size_t b, std::size_t h);

    double mean(std::size_t b, std::size_t h, std::size_t d) const;

    /// One joint draw for step (b, h), written to out[dims].
    void sample(std::size_t b, std::size_t h, CounterRng& rng, std::span<double> out) const;

    /// Keeps only the series listed in `rows`.
    ForecastDistribution select_rows(std::span<const std::size_t> rows) const;
};

/// Student-T parameters, one entry per (b, h, d).
ForecastDistribution make_student_t(std::size_t batch, std::size_t horizon, std::size_t dims,
                                    std::span<const double> mu, std::span<const double> sigma,
                                    std::span<const double> nu);

/// Quantile of a sorted sample with linear interpolation between order statistics.
double empirical_quantile(std::span<const double> sorted, double level);

/// Quantiles at `levels` for every (b, h, d), laid out [B x H x d x K].
/// Parametric kinds use `n_samples` seeded draws per step (the normal kind
/// is evaluated analytically); quantile kinds are read off or interpolated.
std::vector<double> predictive_quantiles(const ForecastDistribution& dist, std::span<const double> levels,
                                         std::size_t n_samples, std::uint64_t seed);

/// Joint samples laid out [B x S x H x d].
std::vector<double> sample_paths(const ForecastDistribution& dist, std::size_t n_samples, std::uint64_t seed);

/// Deciles 0.1, ..., 0.9.
std::vector<double> decile_levels();

}  // namespace clops
