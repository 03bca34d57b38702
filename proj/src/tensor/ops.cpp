#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clops/kernels.hpp"
#include "clops/tensor.hpp"

#define CLOPS_DISPATCH(fn, Real, ...)                                  \
    (kernels::backend() == kernels::Backend::serial                    \
         ? kernels::serial::fn<Real>(__VA_ARGS__)                      \
         : kernels::parallel::fn<Real>(__VA_ARGS__))

namespace clops {

namespace {

template <typename Real>
using Node = detail::Node<Real>;

template <typename Real>
using BackwardFn = std::function<void(Node<Real>&)>;

// Builds the result node, recording history only when needed.
template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> value, std::initializer_list<Tensor<Real>> inputs,
                         BackwardFn<Real> backward) {
    auto node = std::make_shared<Node<Real>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (NoGradGuard::grad_enabled()) {
        bool any = false;
        for (const auto& t : inputs) any = any || t.requires_grad();
        if (any) {
            node->requires_grad = true;
            for (const auto& t : inputs) node->parents.push_back(t.node());
            node->backward = std::move(backward);
        }
    }
    return Tensor<Real>(std::move(node));
}

template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> value, const std::vector<Tensor<Real>>& inputs,
                         BackwardFn<Real> backward) {
    auto node = std::make_shared<Node<Real>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (NoGradGuard::grad_enabled()) {
        bool any = false;
        for (const auto& t : inputs) any = any || t.requires_grad();
        if (any) {
            node->requires_grad = true;
            for (const auto& t : inputs) node->parents.push_back(t.node());
            node->backward = std::move(backward);
        }
    }
    return Tensor<Real>(std::move(node));
}

// Gradient buffer of parent i, or an empty span when it needs none.
template <typename Real>
std::span<Real> parent_grad(Node<Real>& self, std::size_t i) {
    Node<Real>& p = *self.parents[i];
    if (!p.requires_grad) return {};
    return p.grad_buffer();
}

// ---------------------------------------------------------------- broadcasting

struct Broadcast {
    Shape out;
    enum class Kind { same, a_suffix, b_suffix, general } kind = Kind::same;
    std::vector<std::size_t> a_index, b_index;  // only for general
};

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
    Broadcast plan;
    if (a == b) {
        plan.out = a;
        return plan;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    plan.out.assign(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1)
            throw DimensionError("cannot broadcast " + shape_string(a) + " with " + shape_string(b));
        plan.out[i] = std::max(da, db);
    }
    auto is_suffix = [&](const Shape& s) {
        if (s.size() > plan.out.size()) return false;
        return std::equal(s.begin(), s.end(), plan.out.end() - static_cast<std::ptrdiff_t>(s.size()));
    };
    if (a == plan.out && is_suffix(b)) {
        plan.kind = Broadcast::Kind::b_suffix;
        return plan;
    }
    if (b == plan.out && is_suffix(a)) {
        plan.kind = Broadcast::Kind::a_suffix;
        return plan;
    }
    plan.kind = Broadcast::Kind::general;
    const std::size_t n = shape_numel(plan.out);
    plan.a_index.resize(n);
    plan.b_index.resize(n);
    auto strides_for = [&](const Shape& s) {
        std::vector<std::size_t> st(rank, 0);
        std::size_t acc = 1;
        for (std::size_t i = s.size(); i-- > 0;) {
            const std::size_t axis = i + (rank - s.size());
            st[axis] = s[i] == 1 ? 0 : acc;
            acc *= s[i];
        }
        return st;
    };
    const auto sa = strides_for(a);
    const auto sb = strides_for(b);
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t ia = 0, ib = 0;
        for (std::size_t d = 0; d < rank; ++d) {
            ia += idx[d] * sa[d];
            ib += idx[d] * sb[d];
        }
        plan.a_index[flat] = ia;
        plan.b_index[flat] = ib;
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < plan.out[d]) break;
            idx[d] = 0;
        }
    }
    return plan;
}

// `Fwd(a, b)` gives the value; `Da(a, b, out)` and `Db(a, b, out)` the partials.
// Suffix broadcasts (bias rows, per-channel scales) run as row loops; every
// gradient element is still accumulated in increasing output order.
template <typename Real, class Fwd, class Da, class Db>
Tensor<Real> binary_op(const Tensor<Real>& a, const Tensor<Real>& b, Fwd fwd, Da da, Db db) {
    using Kind = Broadcast::Kind;
    auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape()));
    const std::size_t n = shape_numel(plan->out);
    const auto av = a.values();
    const auto bv = b.values();
    const std::size_t na = av.size(), nb = bv.size();
    std::vector<Real> out(n);
    switch (plan->kind) {
        case Kind::same:
            for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
            break;
        case Kind::b_suffix:
            for (std::size_t r = 0; r < n / std::max<std::size_t>(nb, 1); ++r)
                for (std::size_t j = 0; j < nb; ++j) out[r * nb + j] = fwd(av[r * nb + j], bv[j]);
            break;
        case Kind::a_suffix:
            for (std::size_t r = 0; r < n / std::max<std::size_t>(na, 1); ++r)
                for (std::size_t j = 0; j < na; ++j) out[r * na + j] = fwd(av[j], bv[r * na + j]);
            break;
        case Kind::general:
            for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[plan->a_index[i]], bv[plan->b_index[i]]);
            break;
    }
    return make_result<Real>(plan->out, std::move(out), {a, b}, [plan, na, nb, da, db](Node<Real>& self) {
        const Real* av = self.parents[0]->value.data();
        const Real* bv = self.parents[1]->value.data();
        const Real* y = self.value.data();
        const Real* g = self.grad.data();
        const auto ga_span = parent_grad(self, 0);
        const auto gb_span = parent_grad(self, 1);
        Real* ga = ga_span.empty() ? nullptr : ga_span.data();
        Real* gb = gb_span.empty() ? nullptr : gb_span.data();
        const std::size_t n = self.value.size();
        switch (plan->kind) {
            case Kind::same:
                if (ga)
                    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * da(av[i], bv[i], y[i]);
                if (gb)
                    for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * db(av[i], bv[i], y[i]);
                break;
            case Kind::b_suffix:
                for (std::size_t r = 0; r < n / std::max<std::size_t>(nb, 1); ++r) {
                    const std::size_t o = r * nb;
                    if (ga)
                        for (std::size_t j = 0; j < nb; ++j) ga[o + j] += g[o + j] * da(av[o + j], bv[j], y[o + j]);
                    if (gb)
                        for (std::size_t j = 0; j < nb; ++j) gb[j] += g[o + j] * db(av[o + j], bv[j], y[o + j]);
                }
                break;
            case Kind::a_suffix:
                for (std::size_t r = 0; r < n / std::max<std::size_t>(na, 1); ++r) {
                    const std::size_t o = r * na;
                    if (ga)
                        for (std::size_t j = 0; j < na; ++j) ga[j] += g[o + j] * da(av[j], bv[o + j], y[o + j]);
                    if (gb)
                        for (std::size_t j = 0; j < na; ++j) gb[o + j] += g[o + j] * db(av[j], bv[o + j], y[o + j]);
                }
                break;
            case Kind::general:
                for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t ia = plan->a_index[i];
                    const std::size_t ib = plan->b_index[i];
                    if (ga) ga[ia] += g[i] * da(av[ia], bv[ib], y[i]);
                    if (gb) gb[ib] += g[i] * db(av[ia], bv[ib], y[i]);
                }
                break;
        }
    });
}

// `Fwd(x)` gives the value and `Deriv(x, y)` the derivative.
template <typename Real, class Fwd, class Deriv>
Tensor<Real> unary_op(const Tensor<Real>& x, Fwd fwd, Deriv deriv) {
    const auto xv = x.values();
    std::vector<Real> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    return make_result<Real>(x.shape(), std::move(out), {x}, [deriv](Node<Real>& self) {
        const auto gx = parent_grad(self, 0);
        if (gx.empty()) return;
        const auto& xv = self.parents[0]->value;
        for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] * deriv(xv[i], self.value[i]);
    });
}

template <typename Real>
Real softplus_value(Real x) {
    return x > Real(20) ? x : std::log1p(std::exp(x));
}

template <typename Real>
Real sigmoid(Real x) {
    if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
    const Real e = std::exp(x);
    return e / (Real(1) + e);
}

std::size_t leading(const Shape& s, std::size_t keep) {
    std::size_t n = 1;
    for (std::size_t i = 0; i + keep < s.size(); ++i) n *= s[i];
    return n;
}

}  // namespace

// -------------------------------------------------------------- elementwise

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    return binary_op(
        a, b, [](Real x, Real y) { return x + y; }, [](Real, Real, Real) { return Real(1); },
        [](Real, Real, Real) { return Real(1); });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    return binary_op(
        a, b, [](Real x, Real y) { return x - y; }, [](Real, Real, Real) { return Real(1); },
        [](Real, Real, Real) { return Real(-1); });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    return binary_op(
        a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y, Real) { return y; },
        [](Real x, Real, Real) { return x; });
}

template <typename Real>
Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
    return binary_op(
        a, b, [](Real x, Real y) { return x / y; }, [](Real, Real y, Real) { return Real(1) / y; },
        [](Real, Real y, Real out) { return -out / y; });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, Real factor) {
    return unary_op(x, [factor](Real v) { return v * factor; }, [factor](Real, Real) { return factor; });
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& x, Real offset) {
    return unary_op(x, [offset](Real v) { return v + offset; }, [](Real, Real) { return Real(1); });
}

template <typename Real>
Tensor<Real> neg(const Tensor<Real>& x) {
    return scale(x, Real(-1));
}

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& x) {
    return unary_op(x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

template <typename Real>
Tensor<Real> log(const Tensor<Real>& x) {
    return unary_op(x, [](Real v) { return std::log(v); }, [](Real v, Real) { return Real(1) / v; });
}

template <typename Real>
Tensor<Real> log1p(const Tensor<Real>& x) {
    return unary_op(x, [](Real v) { return std::log1p(v); }, [](Real v, Real) { return Real(1) / (Real(1) + v); });
}

template <typename Real>
Tensor<Real> sqrt(const Tensor<Real>& x) {
    return unary_op(x, [](Real v) { return std::sqrt(v); }, [](Real, Real y) { return Real(0.5) / y; });
}

template <typename Real>
Tensor<Real> square(const Tensor<Real>& x) {
    return unary_op(x, [](Real v) { return v * v; }, [](Real v, Real) { return Real(2) * v; });
}

template <typename Real>
Tensor<Real> softplus(const Tensor<Real>& x) {
    return unary_op(x, [](Real v) { return softplus_value(v); }, [](Real v, Real) { return sigmoid(v); });
}

template <typename Real>
Tensor<Real> lgamma(const Tensor<Real>& x) {
    return unary_op(
        x, [](Real v) { return std::lgamma(v); }, [](Real v, Real) { return boost::math::digamma(v); });
}

template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
    std::vector<Real> out(x.size());
    CLOPS_DISPATCH(gelu, Real, x.values(), out);
    return make_result<Real>(x.shape(), std::move(out), {x}, [](Node<Real>& self) {
        const auto gx = parent_grad(self, 0);
        if (gx.empty()) return;
        CLOPS_DISPATCH(gelu_backward, Real, self.parents[0]->value, self.grad, gx);
    });
}

// ------------------------------------------------------------------ matmul

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2)
        throw DimensionError("matmul needs rank >= 2, got " + shape_string(sa) + " and " + shape_string(sb));
    const std::size_t m = sa[sa.size() - 2], k = sa.back();
    const std::size_t kb = sb[sb.size() - 2], n = sb.back();
    if (k != kb) throw DimensionError("matmul inner dimensions differ: " + shape_string(sa) + " . " + shape_string(sb));

    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);

    if (sb.size() == 2) {
        const std::size_t rows = leading(sa, 1);
        std::vector<Real> out(rows * n);
        CLOPS_DISPATCH(gemm_nn, Real, rows, n, k, a.values(), b.values(), out, false);
        return make_result<Real>(std::move(out_shape), std::move(out), {a, b}, [rows, n, k](Node<Real>& self) {
            const auto ga = parent_grad(self, 0);
            const auto gb = parent_grad(self, 1);
            if (!ga.empty()) CLOPS_DISPATCH(gemm_nt, Real, rows, k, n, self.grad, self.parents[1]->value, ga, true);
            if (!gb.empty()) CLOPS_DISPATCH(gemm_tn, Real, k, n, rows, self.parents[0]->value, self.grad, gb, true);
        });
    }

    if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()))
        throw DimensionError("batched matmul needs equal leading dims: " + shape_string(sa) + " . " +
                             shape_string(sb));
    const std::size_t batch = leading(sa, 2);
    std::vector<Real> out(batch * m * n);
    CLOPS_DISPATCH(batched_gemm_nn, Real, batch, m, n, k, a.values(), b.values(), out, false);
    return make_result<Real>(std::move(out_shape), std::move(out), {a, b}, [batch, m, n, k](Node<Real>& self) {
        const auto ga = parent_grad(self, 0);
        const auto gb = parent_grad(self, 1);
        if (!ga.empty())
            CLOPS_DISPATCH(batched_gemm_nt, Real, batch, m, k, n, self.grad, self.parents[1]->value, ga, true);
        if (!gb.empty())
            CLOPS_DISPATCH(batched_gemm_tn, Real, batch, k, n, m, self.parents[0]->value, self.grad, gb, true);
    });
}

template <typename Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()) ||
        sa.back() != sb.back())
        throw DimensionError("matmul_nt shape mismatch: " + shape_string(sa) + " . " + shape_string(sb) + "^T");
    const std::size_t m = sa[sa.size() - 2], k = sa.back(), n = sb[sb.size() - 2];
    const std::size_t batch = leading(sa, 2);
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
    std::vector<Real> out(batch * m * n);
    CLOPS_DISPATCH(batched_gemm_nt, Real, batch, m, n, k, a.values(), b.values(), out, false);
    return make_result<Real>(std::move(out_shape), std::move(out), {a, b}, [batch, m, n, k](Node<Real>& self) {
        const auto ga = parent_grad(self, 0);
        const auto gb = parent_grad(self, 1);
        if (!ga.empty())
            CLOPS_DISPATCH(batched_gemm_nn, Real, batch, m, k, n, self.grad, self.parents[1]->value, ga, true);
        if (!gb.empty())
            CLOPS_DISPATCH(batched_gemm_tn, Real, batch, n, k, m, self.grad, self.parents[0]->value, gb, true);
    });
}

// ------------------------------------------------------------------- shape

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
    if (shape_numel(shape) != x.size())
        throw DimensionError("cannot reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
    std::vector<Real> out(x.values().begin(), x.values().end());
    return make_result<Real>(std::move(shape), std::move(out), {x}, [](Node<Real>& self) {
        const auto gx = parent_grad(self, 0);
        if (gx.empty()) return;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
}

template <typename Real>
Tensor<Real> permute(const Tensor<Real>& x, const std::vector<std::size_t>& axes) {
    const Shape& s = x.shape();
    const std::size_t rank = s.size();
    if (axes.size() != rank) throw DimensionError("permute axes do not match " + shape_string(s));
    std::vector<bool> seen(rank, false);
    for (std::size_t a : axes) {
        if (a >= rank || seen[a]) throw DimensionError("invalid permutation for " + shape_string(s));
        seen[a] = true;
    }
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) out_shape[i] = s[axes[i]];
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * s[i + 1];
    // Trailing axes that stay in place move as contiguous runs.
    std::size_t kept = rank, run = 1;
    while (kept > 0 && axes[kept - 1] == kept - 1) run *= s[--kept];
    // src_index[r] is the source offset of output run r.
    const std::size_t runs = run == 0 ? 0 : x.size() / run;
    auto src_index = std::make_shared<std::vector<std::size_t>>(runs);
    std::vector<std::size_t> idx(kept, 0);
    for (std::size_t r = 0; r < runs; ++r) {
        std::size_t src = 0;
        for (std::size_t d = 0; d < kept; ++d) src += idx[d] * in_strides[axes[d]];
        (*src_index)[r] = src;
        for (std::size_t d = kept; d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    const auto xv = x.values();
    std::vector<Real> out(x.size());
    for (std::size_t r = 0; r < runs; ++r)
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((*src_index)[r]), run, out.begin() + static_cast<std::ptrdiff_t>(r * run));
    return make_result<Real>(std::move(out_shape), std::move(out), {x}, [src_index, run](Node<Real>& self) {
        const auto gx = parent_grad(self, 0);
        if (gx.empty()) return;
        for (std::size_t r = 0; r < src_index->size(); ++r) {
            Real* dst = gx.data() + (*src_index)[r];
            const Real* g = self.grad.data() + r * run;
            for (std::size_t j = 0; j < run; ++j) dst[j] += g[j];
        }
    });
}

// -------------------------------------------------------------- reductions

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
    const double total = CLOPS_DISPATCH(sum, Real, x.values());
    return make_result<Real>({1}, {static_cast<Real>(total)}, {x}, [](Node<Real>& self) {
        const auto gx = parent_grad(self, 0);
        if (gx.empty()) return;
        for (auto& g : gx) g += self.grad[0];
    });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x) {
    return scale(sum(x), Real(1) / static_cast<Real>(x.size()));
}

template <typename Real>
Tensor<Real> sum_axis(const Tensor<Real>& x, std::size_t axis) {
    const Shape& s = x.shape();
    if (axis >= s.size()) throw DimensionError("sum_axis " + std::to_string(axis) + " on " + shape_string(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out_shape.push_back(s[i]);
    if (out_shape.empty()) out_shape.push_back(1);
    const auto xv = x.values();
    std::vector<Real> out(outer * inner, Real(0));
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + l) * inner + i];
    return make_result<Real>(std::move(out_shape), std::move(out), {x}, [outer, inner, len](Node<Real>& self) {
        const auto gx = parent_grad(self, 0);
        if (gx.empty()) return;
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l)
                for (std::size_t i = 0; i < inner; ++i) gx[(o * len + l) * inner + i] += self.grad[o * inner + i];
    });
}

template <typename Real>
Tensor<Real> mean_axis(const Tensor<Real>& x, std::size_t axis) {
    return scale(sum_axis(x, axis), Real(1) / static_cast<Real>(x.dim(axis)));
}

template <typename Real>
Tensor<Real> cumsum_last(const Tensor<Real>& x) {
    const std::size_t len = x.shape().back();
    const std::size_t rows = x.size() / len;
    const auto xv = x.values();
    std::vector<Real> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        Real acc = 0;
        for (std::size_t j = 0; j < len; ++j) out[r * len + j] = acc += xv[r * len + j];
    }
    return make_result<Real>(x.shape(), std::move(out), {x}, [rows, len](Node<Real>& self) {
        const auto gx = parent_grad(self, 0);
        if (gx.empty()) return;
        for (std::size_t r = 0; r < rows; ++r) {
            Real acc = 0;
            for (std::size_t j = len; j-- > 0;) {
                acc += self.grad[r * len + j];
                gx[r * len + j] += acc;
            }
        }
    });
}

// ----------------------------------------------------------- normalization

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis) {
    const std::size_t rank = x.rank();
    if (axis >= rank) throw DimensionError("softmax axis " + std::to_string(axis) + " on " + shape_string(x.shape()));
    if (axis != rank - 1) {
        std::vector<std::size_t> axes(rank);
        std::iota(axes.begin(), axes.end(), 0);
        std::swap(axes[axis], axes[rank - 1]);
        return permute(softmax(permute(x, axes), rank - 1), axes);
    }
    const std::size_t cols = x.shape().back();
    const std::size_t rows = x.size() / cols;
    std::vector<Real> out(x.size());
    CLOPS_DISPATCH(softmax_rows, Real, rows, cols, x.values(), out);
    return make_result<Real>(x.shape(), std::move(out), {x}, [rows, cols](Node<Real>& self) {
        const auto gx = parent_grad(self, 0);
        if (gx.empty()) return;
        CLOPS_DISPATCH(softmax_rows_backward, Real, rows, cols, self.value, self.grad, gx);
    });
}

// Fused so the [B, H, Tq, Tk] score tensor is materialized once, as the
// probabilities kept for the backward pass.
template <typename Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v, const Tensor<Real>& bias,
                       Real scale) {
    const Shape& sq = q.shape();
    const Shape& sk = k.shape();
    const Shape& sv = v.shape();
    if (sq.size() != 4 || sk.size() != 4 || sv.size() != 4 || sq[0] != sk[0] || sq[1] != sk[1] || sq[3] != sk[3] ||
        sv[0] != sk[0] || sv[1] != sk[1] || sv[2] != sk[2])
        throw DimensionError("attention shapes q " + shape_string(sq) + ", k " + shape_string(sk) + ", v " +
                             shape_string(sv));
    const std::size_t batch = sq[0] * sq[1], tq = sq[2], tk = sk[2], d = sq[3], dv = sv[3];
    std::size_t bias_stride = 0;
    if (bias.defined()) {
        const Shape& bs = bias.shape();
        const Shape full{sq[0], sq[1], tq, tk};
        if (bs == full) {
            bias_stride = tq * tk;
        } else if (!(bs.size() == 2 && bs[0] == tq && bs[1] == tk)) {
            throw DimensionError("attention mask " + shape_string(bs) + " does not match scores " +
                                 shape_string(full));
        }
        if (bias.requires_grad() && NoGradGuard::grad_enabled())
            throw ContractError("attention bias must not require gradients");
    }
    auto probs = std::make_shared<std::vector<Real>>(batch * tq * tk);
    std::vector<Real> out(batch * tq * dv);
    const std::span<const Real> bias_values = bias.defined() ? bias.values() : std::span<const Real>{};
    CLOPS_DISPATCH(attention_forward, Real, batch, tq, tk, d, dv, q.values(), k.values(), v.values(), bias_values,
                   bias_stride, scale, std::span<Real>(*probs), std::span<Real>(out));
    return make_result<Real>({sq[0], sq[1], tq, dv}, std::move(out), {q, k, v},
                             [probs, batch, tq, tk, d, dv, scale](Node<Real>& self) {
                                 const auto gq = parent_grad(self, 0);
                                 const auto gk = parent_grad(self, 1);
                                 const auto gv = parent_grad(self, 2);
                                 CLOPS_DISPATCH(attention_backward, Real, batch, tq, tk, d, dv,
                                                std::span<const Real>(self.parents[0]->value),
                                                std::span<const Real>(self.parents[1]->value),
                                                std::span<const Real>(self.parents[2]->value),
                                                std::span<const Real>(*probs), scale,
                                                std::span<const Real>(self.grad), gq, gk, gv);
                             });
}

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias, Real eps) {
    const std::size_t cols = x.shape().back();
    if (gain.size() != cols || bias.size() != cols)
        throw DimensionError("layer_norm gain/bias " + shape_string(gain.shape()) + "/" + shape_string(bias.shape()) +
                             " do not match " + shape_string(x.shape()));
    const std::size_t rows = x.size() / cols;
    std::vector<Real> out(x.size());
    auto stats = std::make_shared<std::pair<std::vector<Real>, std::vector<Real>>>();
    stats->first.resize(rows);
    stats->second.resize(rows);
    CLOPS_DISPATCH(layer_norm_rows, Real, rows, cols, x.values(), gain.values(), bias.values(), eps, out,
                   stats->first, stats->second);
    return make_result<Real>(x.shape(), std::move(out), {x, gain, bias}, [rows, cols, stats](Node<Real>& self) {
        const auto gx = parent_grad(self, 0);
        const auto gg = parent_grad(self, 1);
        const auto gb = parent_grad(self, 2);
        CLOPS_DISPATCH(layer_norm_rows_backward, Real, rows, cols, self.parents[0]->value, self.parents[1]->value,
                       stats->first, stats->second, self.grad, gx, gg, gb);
    });
}

// ------------------------------------------------------- concat and slicing

template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw DimensionError("concat axis out of range for " + shape_string(s0));
    std::vector<std::size_t> lens;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
        if (!ok) throw DimensionError("concat mismatch: " + shape_string(s0) + " vs " + shape_string(s));
        lens.push_back(s[axis]);
        total += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
    Shape out_shape = s0;
    out_shape[axis] = total;
    std::vector<Real> out(outer * total * inner);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto pv = parts[p].values();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * lens[p] * inner), lens[p] * inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * total + offset) * inner));
        offset += lens[p];
    }
    return make_result<Real>(std::move(out_shape), std::move(out), parts,
                             [outer, inner, total, lens](Node<Real>& self) {
                                 std::size_t offset = 0;
                                 for (std::size_t p = 0; p < lens.size(); ++p) {
                                     const auto gp = parent_grad(self, p);
                                     if (!gp.empty()) {
                                         for (std::size_t o = 0; o < outer; ++o)
                                             for (std::size_t i = 0; i < lens[p] * inner; ++i)
                                                 gp[o * lens[p] * inner + i] +=
                                                     self.grad[(o * total + offset) * inner + i];
                                     }
                                     offset += lens[p];
                                 }
                             });
}

template <typename Real>
Tensor<Real> slice(const Tensor<Real>& x, std::size_t axis, std::size_t start, std::size_t length) {
    const Shape& s = x.shape();
    if (axis >= s.size() || length == 0 || start + length > s[axis])
        throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                             std::to_string(axis) + " of " + shape_string(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    Shape out_shape = s;
    out_shape[axis] = length;
    const auto xv = x.values();
    std::vector<Real> out(outer * length * inner);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * len + start) * inner), length * inner,
                    out.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
    return make_result<Real>(std::move(out_shape), std::move(out), {x},
                             [outer, inner, len, start, length](Node<Real>& self) {
                                 const auto gx = parent_grad(self, 0);
                                 if (gx.empty()) return;
                                 for (std::size_t o = 0; o < outer; ++o)
                                     for (std::size_t i = 0; i < length * inner; ++i)
                                         gx[(o * len + start) * inner + i] += self.grad[o * length * inner + i];
                             });
}

template <typename Real>
Tensor<Real> select(const Tensor<Real>& x, std::size_t axis, std::size_t index) {
    Shape out_shape = x.shape();
    if (axis >= out_shape.size()) throw DimensionError("select axis out of range for " + shape_string(out_shape));
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape.push_back(1);
    return reshape(slice(x, axis, index, 1), std::move(out_shape));
}

// ------------------------------------------------------------ rope, pinball

template <typename Real>
Tensor<Real> rope_rotate(const Tensor<Real>& x, std::span<const double> positions, double base) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw DimensionError("rope_rotate needs [..., T, d], got " + shape_string(s));
    const std::size_t d = s.back();
    const std::size_t steps = s[s.size() - 2];
    if (d % 2 != 0) throw DimensionError("rope_rotate needs an even last dimension, got " + shape_string(s));
    if (positions.size() != steps)
        throw DimensionError("rope_rotate got " + std::to_string(positions.size()) + " positions for " +
                             shape_string(s));
    auto cs = std::make_shared<std::vector<Real>>(steps * d);  // interleaved cos, sin per (t, pair)
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t j = 0; j < d / 2; ++j) {
            const double theta = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(d));
            const double angle = positions[t] * theta;
            (*cs)[t * d + 2 * j] = static_cast<Real>(std::cos(angle));
            (*cs)[t * d + 2 * j + 1] = static_cast<Real>(std::sin(angle));
        }
    const std::size_t blocks = x.size() / (steps * d);
    const auto xv = x.values();
    std::vector<Real> out(x.size());
    for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t t = 0; t < steps; ++t)
            for (std::size_t j = 0; j < d / 2; ++j) {
                const std::size_t i = (b * steps + t) * d + 2 * j;
                const Real c = (*cs)[t * d + 2 * j], sn = (*cs)[t * d + 2 * j + 1];
                out[i] = xv[i] * c - xv[i + 1] * sn;
                out[i + 1] = xv[i] * sn + xv[i + 1] * c;
            }
    return make_result<Real>(s, std::move(out), {x}, [cs, blocks, steps, d](Node<Real>& self) {
        const auto gx = parent_grad(self, 0);
        if (gx.empty()) return;
        for (std::size_t b = 0; b < blocks; ++b)
            for (std::size_t t = 0; t < steps; ++t)
                for (std::size_t j = 0; j < d / 2; ++j) {
                    const std::size_t i = (b * steps + t) * d + 2 * j;
                    const Real c = (*cs)[t * d + 2 * j], sn = (*cs)[t * d + 2 * j + 1];
                    gx[i] += self.grad[i] * c + self.grad[i + 1] * sn;
                    gx[i + 1] += -self.grad[i] * sn + self.grad[i + 1] * c;
                }
    });
}

template <typename Real>
Tensor<Real> pinball(const Tensor<Real>& q, const Tensor<Real>& y, std::span<const double> levels) {
    const std::size_t k = q.shape().back();
    if (levels.size() != k || y.size() * k != q.size())
        throw DimensionError("pinball: quantiles " + shape_string(q.shape()) + " vs targets " +
                             shape_string(y.shape()) + " with " + std::to_string(levels.size()) + " levels");
    auto alphas = std::make_shared<std::vector<Real>>(levels.begin(), levels.end());
    const auto qv = q.values();
    const auto yv = y.values();
    std::vector<Real> out(q.size());
    for (std::size_t i = 0; i < yv.size(); ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const Real diff = yv[i] - qv[i * k + j];
            const Real w = (*alphas)[j] - (yv[i] < qv[i * k + j] ? Real(1) : Real(0));
            out[i * k + j] = w * diff;
        }
    return make_result<Real>(q.shape(), std::move(out), {q, y}, [alphas, k](Node<Real>& self) {
        const auto gq = parent_grad(self, 0);
        const auto gy = parent_grad(self, 1);
        const auto& qv = self.parents[0]->value;
        const auto& yv = self.parents[1]->value;
        for (std::size_t i = 0; i < yv.size(); ++i)
            for (std::size_t j = 0; j < k; ++j) {
                const Real w = (*alphas)[j] - (yv[i] < qv[i * k + j] ? Real(1) : Real(0));
                const Real g = self.grad[i * k + j];
                if (!gq.empty()) gq[i * k + j] -= g * w;
                if (!gy.empty()) gy[i] += g * w;
            }
    });
}

#define CLOPS_INSTANTIATE_OPS(Real)                                                                       \
    template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                                  \
    template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                                  \
    template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                                  \
    template Tensor<Real> div(const Tensor<Real>&, const Tensor<Real>&);                                  \
    template Tensor<Real> scale(const Tensor<Real>&, Real);                                               \
    template Tensor<Real> add_scalar(const Tensor<Real>&, Real);                                          \
    template Tensor<Real> neg(const Tensor<Real>&);                                                       \
    template Tensor<Real> exp(const Tensor<Real>&);                                                       \
    template Tensor<Real> log(const Tensor<Real>&);                                                       \
    template Tensor<Real> log1p(const Tensor<Real>&);                                                     \
    template Tensor<Real> sqrt(const Tensor<Real>&);                                                      \
    template Tensor<Real> square(const Tensor<Real>&);                                                    \
    template Tensor<Real> softplus(const Tensor<Real>&);                                                  \
    template Tensor<Real> lgamma(const Tensor<Real>&);                                                    \
    template Tensor<Real> gelu(const Tensor<Real>&);                                                      \
    template Tensor<Real> matmul(const Tensor<Real>&, const Tensor<Real>&);                               \
    template Tensor<Real> matmul_nt(const Tensor<Real>&, const Tensor<Real>&);                            \
    template Tensor<Real> reshape(const Tensor<Real>&, Shape);                                            \
    template Tensor<Real> permute(const Tensor<Real>&, const std::vector<std::size_t>&);                  \
    template Tensor<Real> sum(const Tensor<Real>&);                                                       \
    template Tensor<Real> mean(const Tensor<Real>&);                                                      \
    template Tensor<Real> sum_axis(const Tensor<Real>&, std::size_t);                                     \
    template Tensor<Real> mean_axis(const Tensor<Real>&, std::size_t);                                    \
    template Tensor<Real> cumsum_last(const Tensor<Real>&);                                               \
    template Tensor<Real> softmax(const Tensor<Real>&, std::size_t);                                      \
    template Tensor<Real> attention(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,          \
                                    const Tensor<Real>&, Real);                                           \
    template Tensor<Real> layer_norm(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, Real); \
    template Tensor<Real> concat(const std::vector<Tensor<Real>>&, std::size_t);                          \
    template Tensor<Real> slice(const Tensor<Real>&, std::size_t, std::size_t, std::size_t);              \
    template Tensor<Real> select(const Tensor<Real>&, std::size_t, std::size_t);                          \
    template Tensor<Real> rope_rotate(const Tensor<Real>&, std::span<const double>, double);              \
    template Tensor<Real> pinball(const Tensor<Real>&, const Tensor<Real>&, std::span<const double>);

CLOPS_INSTANTIATE_OPS(float)
CLOPS_INSTANTIATE_OPS(double)

}  // namespace clops
