#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "clops/kernels.hpp"
#include "doctest.h"

using namespace clops;

namespace {

std::vector<float> random_values(std::size_t n, unsigned seed) {
    std::mt19937 gen(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = dist(gen);
    return v;
}

// Triple loop in double, used as the oracle for every gemm layout.
std::vector<double> naive_gemm(std::size_t m, std::size_t n, std::size_t k, const std::vector<float>& a,
                               bool a_trans, const std::vector<float>& b, bool b_trans) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) {
                const double av = a_trans ? a[p * m + i] : a[i * k + p];
                const double bv = b_trans ? b[j * k + p] : b[p * n + j];
                c[i * n + j] += av * bv;
            }
    return c;
}

struct ThreadScope {
    explicit ThreadScope(int n) { kernels::set_num_threads(n); }
    ~ThreadScope() { kernels::set_num_threads(0); }
};

}  // namespace

TEST_CASE("gemm layouts match the naive oracle") {
    const std::size_t m = 13, n = 7, k = 11;
    const auto a = random_values(m * k, 1);
    const auto b = random_values(k * n, 2);
    std::vector<float> c(m * n);

    kernels::serial::gemm_nn<float>(m, n, k, a, b, c, false);
    auto ref = naive_gemm(m, n, k, a, false, b, false);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-5));

    kernels::serial::gemm_nt<float>(m, n, k, a, b, c, false);  // b read as [n x k]
    ref = naive_gemm(m, n, k, a, false, b, true);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-5));

    kernels::serial::gemm_tn<float>(m, n, k, a, b, c, false);  // a read as [k x m]
    ref = naive_gemm(m, n, k, a, true, b, false);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-5));
}

TEST_CASE("gemm accumulate adds onto existing output") {
    const std::vector<float> a{1, 2}, b{3, 4};
    std::vector<float> c{10};
    kernels::parallel::gemm_nn<float>(1, 1, 2, a, b, c, true);
    CHECK(c[0] == 21.0f);
}

TEST_CASE("parallel kernels are bitwise identical to the serial reference") {
    ThreadScope threads(4);
    const std::size_t batch = 3, m = 37, n = 29, k = 41;
    const auto a = random_values(batch * m * k, 3);
    const auto b = random_values(batch * k * n, 4);
    std::vector<float> cs(batch * m * n), cp(batch * m * n);

    kernels::serial::batched_gemm_nn<float>(batch, m, n, k, a, b, cs, false);
    kernels::parallel::batched_gemm_nn<float>(batch, m, n, k, a, b, cp, false);
    CHECK(cs == cp);

    const auto bt = random_values(batch * n * k, 5);
    kernels::serial::batched_gemm_nt<float>(batch, m, n, k, a, bt, cs, false);
    kernels::parallel::batched_gemm_nt<float>(batch, m, n, k, a, bt, cp, false);
    CHECK(cs == cp);

    const auto at = random_values(batch * k * m, 6);
    kernels::serial::batched_gemm_tn<float>(batch, m, n, k, at, b, cs, false);
    kernels::parallel::batched_gemm_tn<float>(batch, m, n, k, at, b, cp, false);
    CHECK(cs == cp);

    const std::size_t rows = 50, cols = 130;
    const auto x = random_values(rows * cols, 7);
    const auto dy = random_values(rows * cols, 8);
    const auto gain = random_values(cols, 9);
    const auto bias = random_values(cols, 10);

    std::vector<float> ys(rows * cols), yp(rows * cols);
    kernels::serial::softmax_rows<float>(rows, cols, x, ys);
    kernels::parallel::softmax_rows<float>(rows, cols, x, yp);
    CHECK(ys == yp);
    std::vector<float> dxs(rows * cols, 0), dxp(rows * cols, 0);
    kernels::serial::softmax_rows_backward<float>(rows, cols, ys, dy, dxs);
    kernels::parallel::softmax_rows_backward<float>(rows, cols, yp, dy, dxp);
    CHECK(dxs == dxp);

    std::vector<float> ms(rows), rs(rows), mp(rows), rp(rows);
    kernels::serial::layer_norm_rows<float>(rows, cols, x, gain, bias, 1e-5f, ys, ms, rs);
    kernels::parallel::layer_norm_rows<float>(rows, cols, x, gain, bias, 1e-5f, yp, mp, rp);
    CHECK(ys == yp);
    std::vector<float> gs(cols, 0), gp(cols, 0), bs(cols, 0), bp(cols, 0);
    std::fill(dxs.begin(), dxs.end(), 0.0f);
    std::fill(dxp.begin(), dxp.end(), 0.0f);
    kernels::serial::layer_norm_rows_backward<float>(rows, cols, x, gain, ms, rs, dy, dxs, gs, bs);
    kernels::parallel::layer_norm_rows_backward<float>(rows, cols, x, gain, mp, rp, dy, dxp, gp, bp);
    CHECK(dxs == dxp);
    CHECK(gs == gp);
    CHECK(bs == bp);

    const auto big = random_values(100000, 11);
    CHECK(kernels::serial::sum<float>(big) == kernels::parallel::sum<float>(big));
    std::vector<float> g1(big.size()), g2(big.size());
    kernels::serial::gelu<float>(big, g1);
    kernels::parallel::gelu<float>(big, g2);
    CHECK(g1 == g2);
}

TEST_CASE("softmax rows sum to one and survive large inputs") {
    const std::vector<double> x{1000.0, 1000.0, 0.0, std::log(3.0)};
    std::vector<double> y(4);
    kernels::serial::softmax_rows<double>(2, 2, x, y);
    CHECK(y[0] == doctest::Approx(0.5));
    CHECK(y[1] == doctest::Approx(0.5));
    CHECK(y[2] == doctest::Approx(0.25));
    CHECK(y[3] == doctest::Approx(0.75));
}

TEST_CASE("layer norm rows have zero mean and unit variance") {
    const std::size_t rows = 4, cols = 9;
    const auto xf = random_values(rows * cols, 12);
    const std::vector<double> x(xf.begin(), xf.end());
    const std::vector<double> gain(cols, 1.0), bias(cols, 0.0);
    std::vector<double> y(rows * cols), mu(rows), rs(rows);
    kernels::parallel::layer_norm_rows<double>(rows, cols, x, gain, bias, 1e-12, y, mu, rs);
    for (std::size_t r = 0; r < rows; ++r) {
        double m = 0, v = 0;
        for (std::size_t j = 0; j < cols; ++j) m += y[r * cols + j];
        m /= cols;
        for (std::size_t j = 0; j < cols; ++j) v += (y[r * cols + j] - m) * (y[r * cols + j] - m);
        CHECK(std::abs(m) < 1e-12);
        CHECK(v / cols == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("gemm full tiles, 16-wide tiles and long k match the naive oracle") {
    struct Dims { std::size_t m, n, k; };
    for (const auto [m, n, k] : {Dims{19, 48, 600}, Dims{9, 16, 300}, Dims{5, 70, 3}, Dims{8, 32, 257}}) {
        const auto a = random_values(m * k, 21);
        const auto b = random_values(k * n, 22);
        std::vector<float> c(m * n);
        CAPTURE(m);
        CAPTURE(n);
        CAPTURE(k);
        kernels::serial::gemm_nn<float>(m, n, k, a, b, c, false);
        auto ref = naive_gemm(m, n, k, a, false, b, false);
        for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-4).scale(1.0));
        kernels::serial::gemm_tn<float>(m, n, k, a, b, c, false);
        ref = naive_gemm(m, n, k, a, true, b, false);
        for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-4).scale(1.0));
        kernels::serial::gemm_nt<float>(m, n, k, a, b, c, false);
        ref = naive_gemm(m, n, k, a, false, b, true);
        for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-4).scale(1.0));
    }
}

TEST_CASE("float gelu tracks the double erf oracle") {
    std::vector<float> x;
    for (int i = -20000; i <= 20000; ++i) x.push_back(static_cast<float>(i) * 5e-4f);
    x.push_back(-100.0f);
    x.push_back(100.0f);
    std::vector<float> y(x.size()), dx(x.size(), 0.0f);
    const std::vector<float> ones(x.size(), 1.0f);
    kernels::serial::gelu<float>(x, y);
    kernels::serial::gelu_backward<float>(x, ones, dx);
    double worst_value = 0, worst_slope = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xv = x[i];
        const double cdf = 0.5 * (1.0 + std::erf(xv / std::sqrt(2.0)));
        const double pdf = std::exp(-0.5 * xv * xv) / std::sqrt(2.0 * 3.141592653589793);
        const double scale = std::max(1.0, std::abs(xv));
        worst_value = std::max(worst_value, std::abs(y[i] - xv * cdf) / scale);
        worst_slope = std::max(worst_slope, std::abs(dx[i] - (cdf + xv * pdf)) / scale);
    }
    CHECK(worst_value < 1e-6);
    CHECK(worst_slope < 1e-6);

    const std::vector<float> nan{std::numeric_limits<float>::quiet_NaN()};
    std::vector<float> out(1);
    kernels::serial::gelu<float>(nan, out);
    CHECK(std::isnan(out[0]));
}

TEST_CASE("float softmax tracks the double oracle and zeroes masked entries") {
    const std::size_t rows = 40, cols = 57;
    auto x = random_values(rows * cols, 23);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] *= 10.0f;
        if (i % 7 == 3) x[i] = -1e9f;
    }
    std::vector<float> y(x.size());
    kernels::serial::softmax_rows<float>(rows, cols, x, y);
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = -1e300, total = 0;
        for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, double(x[r * cols + j]));
        for (std::size_t j = 0; j < cols; ++j) total += std::exp(double(x[r * cols + j]) - mx);
        for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t i = r * cols + j;
            if (i % 7 == 3) {
                CHECK(y[i] == 0.0f);
            } else {
                CHECK(std::abs(y[i] - std::exp(double(x[i]) - mx) / total) < 1e-6);
            }
        }
    }
}

TEST_CASE("fused attention kernels match a double oracle and are bitwise identical across backends") {
    const std::size_t batch = 3, tq = 21, tk = 34, d = 16, dv = 7;
    const auto q = random_values(batch * tq * d, 31);
    const auto k = random_values(batch * tk * d, 32);
    const auto v = random_values(batch * tk * dv, 33);
    auto bias = random_values(tq * tk, 34);
    for (std::size_t i = 0; i < bias.size(); i += 5) bias[i] = -1e9f;
    const float scale = 0.25f;

    std::vector<float> ps(batch * tq * tk), os(batch * tq * dv);
    kernels::serial::attention_forward<float>(batch, tq, tk, d, dv, q, k, v, bias, 0, scale, ps, os);

    // Oracle: explicit scores, softmax and weighted sum in double.
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < tq; ++i) {
            std::vector<double> s(tk);
            double mx = -1e300;
            for (std::size_t j = 0; j < tk; ++j) {
                double dot = 0;
                for (std::size_t p = 0; p < d; ++p) dot += double(q[(b * tq + i) * d + p]) * k[(b * tk + j) * d + p];
                s[j] = dot * scale + bias[i * tk + j];
                mx = std::max(mx, s[j]);
            }
            double total = 0;
            for (auto& e : s) total += (e = std::exp(e - mx));
            for (std::size_t c = 0; c < dv; ++c) {
                double o = 0;
                for (std::size_t j = 0; j < tk; ++j) o += s[j] / total * v[(b * tk + j) * dv + c];
                CHECK(os[(b * tq + i) * dv + c] == doctest::Approx(o).epsilon(1e-4).scale(1.0));
            }
        }

    ThreadScope threads(4);
    std::vector<float> pp(ps.size()), op(os.size());
    kernels::parallel::attention_forward<float>(batch, tq, tk, d, dv, q, k, v, bias, 0, scale, pp, op);
    CHECK(ps == pp);
    CHECK(os == op);

    const auto dout = random_values(batch * tq * dv, 35);
    std::vector<float> dqs(q.size(), 0), dks(k.size(), 0), dvs(v.size(), 0);
    std::vector<float> dqp(q.size(), 0), dkp(k.size(), 0), dvp(v.size(), 0);
    kernels::serial::attention_backward<float>(batch, tq, tk, d, dv, q, k, v, ps, scale, dout, dqs, dks, dvs);
    kernels::parallel::attention_backward<float>(batch, tq, tk, d, dv, q, k, v, pp, scale, dout, dqp, dkp, dvp);
    CHECK(dqs == dqp);
    CHECK(dks == dkp);
    CHECK(dvs == dvp);

    // Empty gradient spans are skipped.
    std::vector<float> only_v(v.size(), 0);
    kernels::serial::attention_backward<float>(batch, tq, tk, d, dv, q, k, v, ps, scale, dout, {}, {}, only_v);
    CHECK(only_v == dvs);
}
