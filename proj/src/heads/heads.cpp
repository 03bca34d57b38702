#include "clops/heads.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace clops {

std::string to_string(HeadKind kind) {
    switch (kind) {
        case HeadKind::student_t: return "student_t";
        case HeadKind::mv_student_t: return "mv_student_t";
        case HeadKind::iqf: return "iqf";
    }
    return "unknown";
}

HeadKind head_kind_from_string(const std::string& name) {
    if (name == "student_t") return HeadKind::student_t;
    if (name == "mv_student_t") return HeadKind::mv_student_t;
    if (name == "iqf") return HeadKind::iqf;
    throw std::invalid_argument("unknown head kind '" + name + "'");
}

std::size_t head_raw_size(HeadKind kind, std::size_t d_y, std::size_t n_levels) {
    switch (kind) {
        case HeadKind::student_t: return 3 * d_y;
        case HeadKind::mv_student_t: return d_y + d_y * (d_y + 1) / 2 + 1;
        case HeadKind::iqf: return n_levels * d_y;
    }
    return 0;
}

template <typename Real>
std::size_t HeadOutput<Real>::batch() const {
    return kind == HeadKind::iqf ? quantiles.dim(0) : mu.dim(0);
}

template <typename Real>
std::size_t HeadOutput<Real>::horizon() const {
    return kind == HeadKind::iqf ? quantiles.dim(1) : mu.dim(1);
}

namespace {

constexpr double kScaleFloor = 1e-6;

template <typename Real>
Tensor<Real> positive(const Tensor<Real>& raw) {
    return add_scalar(softplus(raw), static_cast<Real>(kScaleFloor));
}

// Builds [B, H, d, d] from packed row-major lower-triangular raw[B, H, d(d+1)/2].
template <typename Real>
Tensor<Real> build_tril(const Tensor<Real>& packed, std::size_t d) {
    const std::size_t b = packed.dim(0), h = packed.dim(1);
    std::vector<Tensor<Real>> rows;
    for (std::size_t i = 0; i < d; ++i) {
        const std::size_t start = i * (i + 1) / 2;
        std::vector<Tensor<Real>> parts;
        if (i > 0) parts.push_back(slice(packed, 2, start, i));
        parts.push_back(positive(slice(packed, 2, start + i, 1)));
        if (i + 1 < d) parts.push_back(Tensor<Real>::zeros({b, h, d - 1 - i}));
        rows.push_back(reshape(parts.size() == 1 ? parts[0] : concat(parts, 2), {b, h, 1, d}));
    }
    return rows.size() == 1 ? rows[0] : concat(rows, 2);
}

template <typename Real>
Tensor<Real> half_shift(const Tensor<Real>& nu, double extra) {
    return add_scalar(scale(nu, Real(0.5)), static_cast<Real>(0.5 * extra));
}

}  // namespace

template <typename Real>
HeadOutput<Real> constrain_head(const Tensor<Real>& raw, HeadKind kind, std::size_t d_y,
                                std::span<const double> levels) {
    if (raw.rank() != 3 || raw.dim(2) != head_raw_size(kind, d_y, levels.size()))
        throw DimensionError("head raw output " + shape_string(raw.shape()) + " does not fit " + to_string(kind) +
                             " with d_y=" + std::to_string(d_y));
    const std::size_t b = raw.dim(0), h = raw.dim(1);
    HeadOutput<Real> out;
    out.kind = kind;
    switch (kind) {
        case HeadKind::student_t: {
            auto r = reshape(raw, {b, h, d_y, 3});
            out.mu = select(r, 3, 0);
            out.sigma = positive(select(r, 3, 1));
            out.nu = add_scalar(softplus(select(r, 3, 2)), Real(2));
            break;
        }
        case HeadKind::mv_student_t: {
            const std::size_t packed = d_y * (d_y + 1) / 2;
            out.mu = slice(raw, 2, 0, d_y);
            out.tril = build_tril(slice(raw, 2, d_y, packed), d_y);
            out.nu = add_scalar(softplus(select(raw, 2, d_y + packed)), Real(2));
            break;
        }
        case HeadKind::iqf: {
            const std::size_t k = levels.size();
            auto r = reshape(raw, {b, h, d_y, k});
            auto steps = k > 1 ? concat<Real>({slice(r, 3, 0, 1), softplus(slice(r, 3, 1, k - 1))}, 3) : r;
            out.quantiles = cumsum_last(steps);
            out.levels.assign(levels.begin(), levels.end());
            break;
        }
    }
    return out;
}

template <typename Real>
Tensor<Real> nll_student_t(const HeadOutput<Real>& head, const Tensor<Real>& y) {
    if (head.kind != HeadKind::student_t) throw ContractError("nll_student_t needs a student_t head");
    if (y.shape() != head.mu.shape())
        throw DimensionError("targets " + shape_string(y.shape()) + " vs head " + shape_string(head.mu.shape()));
    const auto& nu = head.nu;
    auto z = div(sub(y, head.mu), head.sigma);
    auto nll = sub(lgamma(scale(nu, Real(0.5))), lgamma(half_shift(nu, 1.0)));
    nll = add(nll, scale(log(scale(nu, static_cast<Real>(std::numbers::pi))), Real(0.5)));
    nll = add(nll, log(head.sigma));
    nll = add(nll, mul(half_shift(nu, 1.0), log1p(div(square(z), nu))));
    return mean(nll);
}

template <typename Real>
Tensor<Real> nll_mv_student_t(const HeadOutput<Real>& head, const Tensor<Real>& y) {
    if (head.kind != HeadKind::mv_student_t) throw ContractError("nll_mv_student_t needs an mv_student_t head");
    if (y.shape() != head.mu.shape())
        throw DimensionError("targets " + shape_string(y.shape()) + " vs head " + shape_string(head.mu.shape()));
    const std::size_t d = y.dim(2);
    auto resid = sub(y, head.mu);
    // Forward substitution L u = resid, one [B, H] slice at a time.
    std::vector<Tensor<Real>> u;
    Tensor<Real> maha, log_det;
    for (std::size_t i = 0; i < d; ++i) {
        auto row = select(head.tril, 2, i);
        auto acc = select(resid, 2, i);
        for (std::size_t j = 0; j < i; ++j) acc = sub(acc, mul(select(row, 2, j), u[j]));
        auto diag = select(row, 2, i);
        u.push_back(div(acc, diag));
        maha = i == 0 ? square(u.back()) : add(maha, square(u.back()));
        log_det = i == 0 ? log(diag) : add(log_det, log(diag));
    }
    const auto& nu = head.nu;
    const double dd = static_cast<double>(d);
    auto nll = sub(lgamma(scale(nu, Real(0.5))), lgamma(half_shift(nu, dd)));
    nll = add(nll, scale(log(scale(nu, static_cast<Real>(std::numbers::pi))), static_cast<Real>(0.5 * dd)));
    nll = add(nll, log_det);
    nll = add(nll, mul(half_shift(nu, dd), log1p(div(maha, nu))));
    return mean(nll);
}

template <typename Real>
Tensor<Real> quantile_loss_train(const HeadOutput<Real>& head, const Tensor<Real>& y) {
    if (head.kind != HeadKind::iqf) throw ContractError("quantile_loss_train needs an iqf head");
    return mean(pinball(head.quantiles, y, head.levels));
}

template <typename Real>
Tensor<Real> head_loss(const HeadOutput<Real>& head, const Tensor<Real>& y) {
    switch (head.kind) {
        case HeadKind::student_t: return nll_student_t(head, y);
        case HeadKind::mv_student_t: return nll_mv_student_t(head, y);
        case HeadKind::iqf: return quantile_loss_train(head, y);
    }
    throw ContractError("unknown head kind");
}

template <typename Real>
ForecastDistribution to_distribution(const HeadOutput<Real>& head) {
    ForecastDistribution dist;
    dist.batch = head.batch();
    dist.horizon = head.horizon();
    const std::size_t steps = dist.batch * dist.horizon;
    switch (head.kind) {
        case HeadKind::student_t: {
            dist.kind = DistributionKind::student_t;
            dist.dims = head.mu.dim(2);
            const auto mu = head.mu.values(), sigma = head.sigma.values(), nu = head.nu.values();
            dist.params.resize(mu.size() * 3);
            for (std::size_t i = 0; i < mu.size(); ++i) {
                dist.params[i * 3] = mu[i];
                dist.params[i * 3 + 1] = sigma[i];
                dist.params[i * 3 + 2] = nu[i];
            }
            break;
        }
        case HeadKind::mv_student_t: {
            dist.kind = DistributionKind::mv_student_t;
            const std::size_t d = head.mu.dim(2);
            dist.dims = d;
            const auto mu = head.mu.values(), tril = head.tril.values(), nu = head.nu.values();
            const std::size_t n = dist.step_size();
            dist.params.resize(steps * n);
            for (std::size_t s = 0; s < steps; ++s) {
                double* p = dist.params.data() + s * n;
                for (std::size_t i = 0; i < d; ++i) p[i] = mu[s * d + i];
                for (std::size_t i = 0; i < d * d; ++i) p[d + i] = tril[s * d * d + i];
                p[d + d * d] = nu[s];
            }
            break;
        }
        case HeadKind::iqf: {
            dist.kind = DistributionKind::quantiles;
            dist.dims = head.quantiles.dim(2);
            dist.levels = head.levels;
            const auto q = head.quantiles.values();
            dist.params.assign(q.begin(), q.end());
            break;
        }
    }
    return dist;
}

#define CLOPS_INSTANTIATE_HEADS(Real)                                                                        \
    template struct HeadOutput<Real>;                                                                        \
    template HeadOutput<Real> constrain_head(const Tensor<Real>&, HeadKind, std::size_t, std::span<const double>); \
    template Tensor<Real> nll_student_t(const HeadOutput<Real>&, const Tensor<Real>&);                       \
    template Tensor<Real> nll_mv_student_t(const HeadOutput<Real>&, const Tensor<Real>&);                    \
    template Tensor<Real> quantile_loss_train(const HeadOutput<Real>&, const Tensor<Real>&);                 \
    template Tensor<Real> head_loss(const HeadOutput<Real>&, const Tensor<Real>&);                           \
    template ForecastDistribution to_distribution(const HeadOutput<Real>&);

CLOPS_INSTANTIATE_HEADS(float)
CLOPS_INSTANTIATE_HEADS(double)

}  // namespace clops
