#pragma once

// Loop bodies shared by the serial and OpenMP kernels. A `Loop` policy
// decides how independent iterations are distributed; the arithmetic for a
// given output element never depends on it.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <type_traits>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

namespace clops::kernels::impl {

inline constexpr std::size_t kRowBlock = 8;
inline constexpr std::size_t kColBlock = 64;
inline constexpr std::size_t kSumChunk = 4096;

// Float exp and erf written so the compiler can vectorize loops over them
// (libm calls block that). Double keeps the library functions; it is the
// precision used for gradient checks.
inline float exp_approx(float x) {
    constexpr float lo = -87.33f, hi = 88.37f;
    const float xc = x < lo ? lo : (x > hi ? hi : x);
    // Round xc / ln2 to nearest with the 1.5 * 2^23 trick.
    const float fn = (xc * 1.44269504088896341f + 12582912.0f) - 12582912.0f;
    const float r = (xc - fn * 0.693359375f) + fn * 2.12194440e-4f;
    float poly = 1.9875691500e-4f;
    poly = poly * r + 1.3981999507e-3f;
    poly = poly * r + 8.3334519073e-3f;
    poly = poly * r + 4.1665795894e-2f;
    poly = poly * r + 1.6666665459e-1f;
    poly = poly * r + 5.0000001201e-1f;
    const float er = poly * r * r + r + 1.0f;
    const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(fn) + 127) << 23;
    const float scaled = er * std::bit_cast<float>(bits);
    const float out = x < lo ? 0.0f : scaled;
    return x == x ? out : x;  // selects, not branches, so loops still vectorize
}

// Abramowitz-Stegun 7.1.26, |error| < 1.5e-7.
inline float erf_approx(float x) {
    const float ax = std::abs(x);
    const float t = 1.0f / (1.0f + 0.3275911f * ax);
    float poly = 1.061405429f;
    poly = poly * t - 1.453152027f;
    poly = poly * t + 1.421413741f;
    poly = poly * t - 0.284496736f;
    poly = poly * t + 0.254829592f;
    const float y = 1.0f - poly * t * exp_approx(-ax * ax);
    return std::copysign(y, x);
}

template <typename Real>
inline Real exp_fast(Real x) {
    if constexpr (std::is_same_v<Real, float>)
        return exp_approx(x);
    else
        return std::exp(x);
}

template <typename Real>
inline Real erf_fast(Real x) {
    if constexpr (std::is_same_v<Real, float>)
        return erf_approx(x);
    else
        return std::erf(x);
}

struct InlineLoop {
    template <class F>
    static void run(std::size_t n, F&& f) {
        for (std::size_t i = 0; i < n; ++i) f(i);
    }
};

// R x kTile block of c = a . b where a(i, p) = a[i * rs + p * cs]. The block
// is accumulated in a local array across the whole k loop (the compiler keeps
// it in vector registers) and written to c once.
inline constexpr std::size_t kTile = 32;

// Block width W is a compile-time constant for the common widths (full tiles
// and 16-wide head projections); W == 0 takes the width from nc.
template <std::size_t R, std::size_t W, typename Real>
inline void gemm_tile(std::size_t i0, std::size_t j0, std::size_t nc, std::size_t n, std::size_t k, const Real* a,
                      std::size_t rs, std::size_t cs, const Real* b, Real* c, bool accumulate) {
    const std::size_t width = W ? W : nc;
    Real acc[R][kTile] = {};
    const Real* arow[R];
    for (std::size_t r = 0; r < R; ++r) arow[r] = a + (i0 + r) * rs;
    for (std::size_t p = 0; p < k; ++p) {
        const Real* __restrict brow = b + p * n + j0;
        for (std::size_t r = 0; r < R; ++r) {
            const Real av = arow[r][p * cs];
            for (std::size_t j = 0; j < width; ++j) acc[r][j] += av * brow[j];
        }
    }
    for (std::size_t r = 0; r < R; ++r) {
        Real* crow = c + (i0 + r) * n + j0;
        if (accumulate)
            for (std::size_t j = 0; j < width; ++j) crow[j] += acc[r][j];
        else
            for (std::size_t j = 0; j < width; ++j) crow[j] = acc[r][j];
    }
}

template <std::size_t R, typename Real>
inline void gemm_tile_any(std::size_t i0, std::size_t j0, std::size_t nc, std::size_t n, std::size_t k,
                          const Real* a, std::size_t rs, std::size_t cs, const Real* b, Real* c, bool accumulate) {
    if (nc == kTile)
        gemm_tile<R, kTile>(i0, j0, nc, n, k, a, rs, cs, b, c, accumulate);
    else if (nc == 16)
        gemm_tile<R, 16>(i0, j0, nc, n, k, a, rs, cs, b, c, accumulate);
    else
        gemm_tile<R, 0>(i0, j0, nc, n, k, a, rs, cs, b, c, accumulate);
}

// Depth of one pass over k; keeps the kDepth x kTile panel of b in L1 when k is long
// (weight gradients contract over every token in the batch).
inline constexpr std::size_t kDepth = 256;

// Rows [i0, i0 + rows) of c = a . b, rows <= kRowBlock.
template <typename Real>
inline void gemm_rows(std::size_t i0, std::size_t rows, std::size_t n, std::size_t k, const Real* a,
                      std::size_t rs, std::size_t cs, const Real* b, Real* c, bool accumulate) {
    for (std::size_t p0 = 0; p0 < k || p0 == 0; p0 += kDepth) {
        const std::size_t kc = std::min(kDepth, k - p0);
        const Real* ap = a + p0 * cs;
        const Real* bp = b + p0 * n;
        const bool acc = accumulate || p0 > 0;
        for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
            const std::size_t nc = std::min(kTile, n - j0);
            switch (rows) {
                case 8: gemm_tile_any<8>(i0, j0, nc, n, kc, ap, rs, cs, bp, c, acc); break;
                case 7: gemm_tile_any<7>(i0, j0, nc, n, kc, ap, rs, cs, bp, c, acc); break;
                case 6: gemm_tile_any<6>(i0, j0, nc, n, kc, ap, rs, cs, bp, c, acc); break;
                case 5: gemm_tile_any<5>(i0, j0, nc, n, kc, ap, rs, cs, bp, c, acc); break;
                case 4: gemm_tile_any<4>(i0, j0, nc, n, kc, ap, rs, cs, bp, c, acc); break;
                case 3: gemm_tile_any<3>(i0, j0, nc, n, kc, ap, rs, cs, bp, c, acc); break;
                case 2: gemm_tile_any<2>(i0, j0, nc, n, kc, ap, rs, cs, bp, c, acc); break;
                default: gemm_tile_any<1>(i0, j0, nc, n, kc, ap, rs, cs, bp, c, acc); break;
            }
        }
    }
}

template <typename Real>
inline void transpose(std::size_t rows, std::size_t cols, const Real* src, Real* dst) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

template <class Loop, typename Real>
void gemm_strided(std::size_t batch, std::size_t m, std::size_t n, std::size_t k, const Real* a, std::size_t rs,
                  std::size_t cs, std::size_t a_batch_stride, const Real* b, Real* c, bool accumulate) {
    const std::size_t blocks = (m + kRowBlock - 1) / kRowBlock;
    Loop::run(batch * blocks, [&](std::size_t task) {
        const std::size_t bi = task / blocks;
        const std::size_t blk = task % blocks;
        const std::size_t i0 = blk * kRowBlock;
        const std::size_t rows = std::min(kRowBlock, m - i0);
        gemm_rows(i0, rows, n, k, a + bi * a_batch_stride, rs, cs, b + bi * k * n, c + bi * m * n, accumulate);
    });
}

template <class Loop, typename Real>
void gemm_nn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b,
             Real* c, bool accumulate) {
    gemm_strided<Loop>(batch, m, n, k, a, k, 1, m * k, b, c, accumulate);
}

template <class Loop, typename Real>
void gemm_tn(std::size_t batch, std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b,
             Real* c, bool accumulate) {
    gemm_strided<Loop>(batch, m, n, k, a, 1, m, m * k, b, c, accumulate);
}

template <class Loop, typename Real>
void gemm_nt(std::size_t batch, std::size_t m, std::size_t n, std::size_t k, const Real* a, const Real* b,
             Real* c, bool accumulate) {
    std::vector<Real> bt(batch * n * k);
    Loop::run(batch, [&](std::size_t bi) { transpose(n, k, b + bi * n * k, bt.data() + bi * n * k); });
    gemm_nn<Loop>(batch, m, n, k, a, bt.data(), c, accumulate);
}

// Row reductions with kLanes partial accumulators combined in a fixed order:
// vectorizable without reassociation flags, and independent of threading.
inline constexpr std::size_t kLanes = 16;

template <typename Real, class F>
inline Real lane_sum(std::size_t n, F&& term) {
    Real acc[kLanes] = {};
    std::size_t j = 0;
    for (; j + kLanes <= n; j += kLanes)
        for (std::size_t l = 0; l < kLanes; ++l) acc[l] += term(j + l);
    for (std::size_t l = 0; j < n; ++j, ++l) acc[l] += term(j);
    Real total = 0;
    for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
    return total;
}

template <typename Real>
inline Real lane_max(std::size_t n, const Real* x) {
    Real acc[kLanes];
    for (auto& a : acc) a = -std::numeric_limits<Real>::infinity();
    std::size_t j = 0;
    for (; j + kLanes <= n; j += kLanes)
        for (std::size_t l = 0; l < kLanes; ++l) acc[l] = x[j + l] > acc[l] ? x[j + l] : acc[l];
    for (std::size_t l = 0; j < n; ++j, ++l) acc[l] = x[j] > acc[l] ? x[j] : acc[l];
    Real mx = acc[0];
    for (std::size_t l = 1; l < kLanes; ++l) mx = acc[l] > mx ? acc[l] : mx;
    return mx;
}

// One row; x and y may alias.
template <typename Real>
inline void softmax_row(std::size_t cols, const Real* x, Real* y) {
    const Real mx = lane_max(cols, x);
    for (std::size_t j = 0; j < cols; ++j) y[j] = exp_fast(x[j] - mx);
    const Real inv = Real(1) / lane_sum<Real>(cols, [y](std::size_t j) { return y[j]; });
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

template <class Loop, typename Real>
void softmax_rows(std::size_t rows, std::size_t cols, const Real* x, Real* y) {
    Loop::run(rows, [&](std::size_t r) { softmax_row(cols, x + r * cols, y + r * cols); });
}

// Per block b of `batch`: p = softmax(q k^T * scale + bias), o = p v, with
// q [tq x d], k [tk x d], v [tk x dv]. `bias` may be null; bias_stride is 0
// when one [tq x tk] bias is shared by all blocks.
template <class Loop, typename Real>
void attention_forward(std::size_t batch, std::size_t tq, std::size_t tk, std::size_t d, std::size_t dv,
                       const Real* q, const Real* k, const Real* v, const Real* bias, std::size_t bias_stride,
                       Real scale, Real* p, Real* o) {
    Loop::run(batch, [&](std::size_t b) {
        std::vector<Real> kt(d * tk);
        transpose(tk, d, k + b * tk * d, kt.data());
        Real* pb = p + b * tq * tk;
        gemm_nn<InlineLoop>(1, tq, tk, d, q + b * tq * d, kt.data(), pb, false);
        if (bias) {
            const Real* bb = bias + b * bias_stride;
            for (std::size_t i = 0; i < tq * tk; ++i) pb[i] = pb[i] * scale + bb[i];
        } else {
            for (std::size_t i = 0; i < tq * tk; ++i) pb[i] *= scale;
        }
        for (std::size_t i = 0; i < tq; ++i) softmax_row(tk, pb + i * tk, pb + i * tk);
        gemm_nn<InlineLoop>(1, tq, dv, tk, pb, v + b * tk * dv, o + b * tq * dv, false);
    });
}

// Accumulates into dq, dk, dv (any may be null) given the stored p and the output gradient.
template <class Loop, typename Real>
void attention_backward(std::size_t batch, std::size_t tq, std::size_t tk, std::size_t d, std::size_t dv,
                        const Real* q, const Real* k, const Real* v, const Real* p, Real scale, const Real* dout,
                        Real* dq, Real* dk, Real* dvals) {
    Loop::run(batch, [&](std::size_t b) {
        const Real* pb = p + b * tq * tk;
        const Real* gb = dout + b * tq * dv;
        if (dvals) gemm_tn<InlineLoop>(1, tk, dv, tq, pb, gb, dvals + b * tk * dv, true);
        if (!dq && !dk) return;
        std::vector<Real> ds(tq * tk);
        gemm_nt<InlineLoop>(1, tq, tk, dv, gb, v + b * tk * dv, ds.data(), false);
        for (std::size_t i = 0; i < tq; ++i) {
            const Real* pr = pb + i * tk;
            Real* dr = ds.data() + i * tk;
            const Real dot = lane_sum<Real>(tk, [pr, dr](std::size_t j) { return pr[j] * dr[j]; });
            for (std::size_t j = 0; j < tk; ++j) dr[j] = pr[j] * (dr[j] - dot) * scale;
        }
        if (dq) gemm_nn<InlineLoop>(1, tq, d, tk, ds.data(), k + b * tk * d, dq + b * tq * d, true);
        if (dk) gemm_tn<InlineLoop>(1, tk, d, tq, ds.data(), q + b * tq * d, dk + b * tk * d, true);
    });
}

template <class Loop, typename Real>
void softmax_rows_backward(std::size_t rows, std::size_t cols, const Real* y, const Real* dy, Real* dx) {
    Loop::run(rows, [&](std::size_t r) {
        const Real* yr = y + r * cols;
        const Real* dyr = dy + r * cols;
        const Real dot = lane_sum<Real>(cols, [yr, dyr](std::size_t j) { return yr[j] * dyr[j]; });
        Real* dxr = dx + r * cols;
        for (std::size_t j = 0; j < cols; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
    });
}

template <class Loop, typename Real>
void layer_norm_rows(std::size_t rows, std::size_t cols, const Real* x, const Real* gain, const Real* bias,
                     Real eps, Real* y, Real* mean, Real* rstd) {
    Loop::run(rows, [&](std::size_t r) {
        const Real* xr = x + r * cols;
        const Real mu = lane_sum<Real>(cols, [xr](std::size_t j) { return xr[j]; }) / Real(cols);
        const Real var =
            lane_sum<Real>(cols, [xr, mu](std::size_t j) { return (xr[j] - mu) * (xr[j] - mu); }) / Real(cols);
        const Real rs = Real(1) / std::sqrt(var + eps);
        mean[r] = mu;
        rstd[r] = rs;
        Real* yr = y + r * cols;
        for (std::size_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
    });
}

template <class Loop, typename Real>
void layer_norm_rows_backward(std::size_t rows, std::size_t cols, const Real* x, const Real* gain,
                              const Real* mean, const Real* rstd, const Real* dy, Real* dx, Real* dgain,
                              Real* dbias) {
    if (dx) {
        Loop::run(rows, [&](std::size_t r) {
            const Real* xr = x + r * cols;
            const Real* dyr = dy + r * cols;
            Real s1 = 0, s2 = 0;
            for (std::size_t j = 0; j < cols; ++j) {
                const Real xhat = (xr[j] - mean[r]) * rstd[r];
                const Real g = dyr[j] * gain[j];
                s1 += g;
                s2 += g * xhat;
            }
            s1 /= Real(cols);
            s2 /= Real(cols);
            Real* dxr = dx + r * cols;
            for (std::size_t j = 0; j < cols; ++j) {
                const Real xhat = (xr[j] - mean[r]) * rstd[r];
                dxr[j] += rstd[r] * (dyr[j] * gain[j] - s1 - xhat * s2);
            }
        });
    }
    if (dgain || dbias) {
        const std::size_t blocks = (cols + kColBlock - 1) / kColBlock;
        Loop::run(blocks, [&](std::size_t blk) {
            const std::size_t j0 = blk * kColBlock;
            const std::size_t j1 = std::min(cols, j0 + kColBlock);
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* xr = x + r * cols;
                const Real* dyr = dy + r * cols;
                for (std::size_t j = j0; j < j1; ++j) {
                    if (dgain) dgain[j] += dyr[j] * (xr[j] - mean[r]) * rstd[r];
                    if (dbias) dbias[j] += dyr[j];
                }
            }
        });
    }
}

template <typename Real>
inline Real gelu_value(Real x) {
    return Real(0.5) * x * (Real(1) + erf_fast(x * Real(std::numbers::sqrt2 / 2)));
}

template <typename Real>
inline Real gelu_derivative(Real x) {
    const Real cdf = Real(0.5) * (Real(1) + erf_fast(x * Real(std::numbers::sqrt2 / 2)));
    const Real pdf = exp_fast(Real(-0.5) * x * x) * Real(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    return cdf + x * pdf;
}

template <class Loop, typename Real>
void gelu(std::size_t n, const Real* x, Real* y) {
    const std::size_t chunks = (n + kSumChunk - 1) / kSumChunk;
    Loop::run(chunks, [&](std::size_t c) {
        const std::size_t end = std::min(n, (c + 1) * kSumChunk);
        for (std::size_t i = c * kSumChunk; i < end; ++i) y[i] = gelu_value(x[i]);
    });
}

template <class Loop, typename Real>
void gelu_backward(std::size_t n, const Real* x, const Real* dy, Real* dx) {
    const std::size_t chunks = (n + kSumChunk - 1) / kSumChunk;
    Loop::run(chunks, [&](std::size_t c) {
        const std::size_t end = std::min(n, (c + 1) * kSumChunk);
        for (std::size_t i = c * kSumChunk; i < end; ++i) dx[i] += dy[i] * gelu_derivative(x[i]);
    });
}

template <class Loop, typename Real, typename F>
double chunked_sum(std::size_t n, const Real* x, F&& term) {
    const std::size_t chunks = (n + kSumChunk - 1) / kSumChunk;
    std::vector<double> partial(chunks, 0.0);
    Loop::run(chunks, [&](std::size_t c) {
        const std::size_t end = std::min(n, (c + 1) * kSumChunk);
        double acc = 0.0;
        for (std::size_t i = c * kSumChunk; i < end; ++i) acc += term(static_cast<double>(x[i]));
        partial[c] = acc;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

}  // namespace clops::kernels::impl
