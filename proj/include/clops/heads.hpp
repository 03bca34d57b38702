#pragma once

// Probabilistic output heads. A head turns raw per-step projections into
// constrained distribution parameters and scores them against normalized
// targets.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "clops/distribution.hpp"
#include "clops/tensor.hpp"

namespace clops {

enum class HeadKind { student_t, mv_student_t, iqf };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& name);

/// Number of raw outputs per forecast step.
///   student_t     3 * d_y
///   mv_student_t  d_y + d_y (d_y + 1) / 2 + 1
///   iqf           K * d_y
std::size_t head_raw_size(HeadKind kind, std::size_t d_y, std::size_t n_levels);

template <typename Real>
struct HeadOutput {
    HeadKind kind = HeadKind::student_t;
    Tensor<Real> mu;         // [B, H, d]            student_t, mv_student_t
    Tensor<Real> sigma;      // [B, H, d]            student_t
    Tensor<Real> nu;         // [B, H, d] or [B, H]  student_t, mv_student_t
    Tensor<Real> tril;       // [B, H, d, d]         mv_student_t
    Tensor<Real> quantiles;  // [B, H, d, K]         iqf
    std::vector<double> levels;

    std::size_t batch() const;
    std::size_t horizon() const;
};

/// Applies the parameter constraints to raw[B, H, head_raw_size]:
/// sigma = softplus + 1e-6, nu = 2 + softplus, tril diagonal = softplus + 1e-6,
/// quantiles = raw_0 followed by softplus increments.
template <typename Real>
HeadOutput<Real> constrain_head(const Tensor<Real>& raw, HeadKind kind, std::size_t d_y,
                                std::span<const double> levels);

/// Mean negative log-likelihood of independent Student-T marginals over (B, H, d).
template <typename Real>
Tensor<Real> nll_student_t(const HeadOutput<Real>& head, const Tensor<Real>& y);

/// Mean negative log-likelihood of the joint Student-T over (B, H).
template <typename Real>
Tensor<Real> nll_mv_student_t(const HeadOutput<Real>& head, const Tensor<Real>& y);

/// Pinball loss averaged over levels, steps, series and dims.
template <typename Real>
Tensor<Real> quantile_loss_train(const HeadOutput<Real>& head, const Tensor<Real>& y);

/// Dispatches on head.kind.
template <typename Real>
Tensor<Real> head_loss(const HeadOutput<Real>& head, const Tensor<Real>& y);

/// Detached copy in double precision.
template <typename Real>
ForecastDistribution to_distribution(const HeadOutput<Real>& head);

}  // namespace clops
