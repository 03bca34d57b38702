#pragma once

// Dense numeric kernels used by the tensor engine.
//
// Two implementations with identical signatures live side by side:
// `serial` is the single-threaded reference and `parallel` distributes
// independent rows/columns over OpenMP threads. Each output element is
// always produced by one thread with the same accumulation order, so the
// two agree bitwise; tests/unit/kernels_test.cpp holds them to that.

#include <cstddef>
#include <span>

namespace clops::kernels {

#define CLOPS_KERNEL_DECLS                                                                                      \
    /* c[m x n] (+)= a[m x k] . b[k x n] */                                                                    \
    template <typename Real>                                                                                   \
    void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b, \
                 std::span<Real> c, bool accumulate);                                                          \
    /* c[m x n] (+)= a[m x k] . b[n x k]^T */                                                                  \
    template <typename Real>                                                                                   \
    void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b, \
                 std::span<Real> c, bool accumulate);                                                          \
    /* c[m x n] (+)= a[k x m]^T . b[k x n] */                                                                  \
    template <typename Real>                                                                                   \
    void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const Real> a, std::span<const Real> b, \
                 std::span<Real> c, bool accumulate);                                                          \
    /* Same as above over `batch` contiguous problems. */                                                      \
    template <typename Real>                                                                                   \
    void batched_gemm_nn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,                        \
                         std::span<const Real> a, std::span<const Real> b, std::span<Real> c, bool accumulate); \
    template <typename Real>                                                                                   \
    void batched_gemm_nt(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,                        \
                         std::span<const Real> a, std::span<const Real> b, std::span<Real> c, bool accumulate); \
    template <typename Real>                                                                                   \
    void batched_gemm_tn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k,                        \
                         std::span<const Real> a, std::span<const Real> b, std::span<Real> c, bool accumulate); \
    /* Fused attention over `batch` blocks: p = softmax(q k^T * scale + bias), o = p v.                   */ \
    /* bias may be empty; bias_stride 0 shares one [tq x tk] bias.                                         */ \
    template <typename Real>                                                                                   \
    void attention_forward(std::size_t batch, std::size_t tq, std::size_t tk, std::size_t d, std::size_t dv,  \
                           std::span<const Real> q, std::span<const Real> k, std::span<const Real> v,         \
                           std::span<const Real> bias, std::size_t bias_stride, Real scale, std::span<Real> p, \
                           std::span<Real> o);                                                                 \
    /* Accumulates into dq, dk, dv; any of them may be empty. */                                               \
    template <typename Real>                                                                                   \
    void attention_backward(std::size_t batch, std::size_t tq, std::size_t tk, std::size_t d, std::size_t dv, \
                            std::span<const Real> q, std::span<const Real> k, std::span<const Real> v,        \
                            std::span<const Real> p, Real scale, std::span<const Real> dout, std::span<Real> dq, \
                            std::span<Real> dk, std::span<Real> dvals);                                        \
    template <typename Real>                                                                                   \
    void softmax_rows(std::size_t rows, std::size_t cols, std::span<const Real> x, std::span<Real> y);         \
    /* dx += y * (dy - sum(y * dy)) per row */                                                                 \
    template <typename Real>                                                                                   \
    void softmax_rows_backward(std::size_t rows, std::size_t cols, std::span<const Real> y,                    \
                               std::span<const Real> dy, std::span<Real> dx);                                  \
    /* Stores per-row mean and reciprocal std for the backward pass. */                                        \
    template <typename Real>                                                                                   \
    void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const Real> x,                          \
                         std::span<const Real> gain, std::span<const Real> bias, Real eps, std::span<Real> y,  \
                         std::span<Real> mean, std::span<Real> rstd);                                          \
    /* Accumulates into dx, dgain and dbias; any of them may be empty. */                                      \
    template <typename Real>                                                                                   \
    void layer_norm_rows_backward(std::size_t rows, std::size_t cols, std::span<const Real> x,                 \
                                  std::span<const Real> gain, std::span<const Real> mean,                      \
                                  std::span<const Real> rstd, std::span<const Real> dy, std::span<Real> dx,    \
                                  std::span<Real> dgain, std::span<Real> dbias);                               \
    template <typename Real>                                                                                   \
    void gelu(std::span<const Real> x, std::span<Real> y);                                                     \
    /* dx += dy * gelu'(x) */                                                                                  \
    template <typename Real>                                                                                   \
    void gelu_backward(std::span<const Real> x, std::span<const Real> dy, std::span<Real> dx);                 \
    /* Chunked sum with a fixed chunk size; the result does not depend on thread count. */                     \
    template <typename Real>                                                                                   \
    double sum(std::span<const Real> x);                                                                       \
    template <typename Real>                                                                                   \
    double sum_squares(std::span<const Real> x);

namespace serial {
CLOPS_KERNEL_DECLS
}  // namespace serial

namespace parallel {
CLOPS_KERNEL_DECLS
}  // namespace parallel

#undef CLOPS_KERNEL_DECLS

/// Which implementation the tensor engine dispatches to.
enum class Backend { serial, parallel };
void set_backend(Backend backend);
Backend backend();

/// Caps OpenMP parallelism; 0 restores the runtime default.
void set_num_threads(int n);
int num_threads();

/// Reads CLOPS_THREADS from the environment, if set.
void configure_threads_from_env();

}  // namespace clops::kernels
