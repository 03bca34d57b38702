#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to a graph node. Every op allocates a fresh
// node holding its value and, when any input requires a gradient, a closure
// that pushes the node's gradient into its parents. The graph is rebuilt on
// each forward pass and dropped with the last handle that references it.
//
// Instantiated for float (training) and double (gradient checking).

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace clops {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

template <typename Real>
struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::span<Real> grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), Real(0));
        return grad;
    }
};

}  // namespace detail

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool grad_enabled();

private:
    bool previous_;
};

template <typename Real>
class Tensor {
public:
    using value_type = Real;
    using NodePtr = std::shared_ptr<detail::Node<Real>>;

    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Real value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<Real> values, bool requires_grad = false);
    static Tensor scalar(Real value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const;

    std::span<const Real> values() const;
    /// Direct access to the stored values, used for in-place parameter updates.
    std::span<Real> values_mut();
    Real item() const;
    Real at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool has_grad() const;
    /// Empty when no gradient has reached this tensor.
    std::span<const Real> grad() const;
    std::span<Real> grad_mut();
    void zero_grad();

    /// Copy of the values with no graph history.
    Tensor detach() const;

    /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate
    /// across calls; intermediate gradients are recomputed each time.
    void backward() const;

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

// Elementwise binary ops broadcast with the usual trailing-axis rules.
template <typename Real> Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real> Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real> Tensor<Real> scale(const Tensor<Real>& x, Real factor);
template <typename Real> Tensor<Real> add_scalar(const Tensor<Real>& x, Real offset);
template <typename Real> Tensor<Real> neg(const Tensor<Real>& x);
template <typename Real> Tensor<Real> exp(const Tensor<Real>& x);
template <typename Real> Tensor<Real> log(const Tensor<Real>& x);
template <typename Real> Tensor<Real> log1p(const Tensor<Real>& x);
template <typename Real> Tensor<Real> sqrt(const Tensor<Real>& x);
template <typename Real> Tensor<Real> square(const Tensor<Real>& x);
template <typename Real> Tensor<Real> softplus(const Tensor<Real>& x);
template <typename Real> Tensor<Real> lgamma(const Tensor<Real>& x);
/// x * Phi(x), exact erf form.
template <typename Real> Tensor<Real> gelu(const Tensor<Real>& x);

/// a[..., m, k] . b[k, n], or batched a[..., m, k] . b[..., k, n] with equal leading dims.
template <typename Real> Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);
/// Batched a[..., m, k] . b[..., n, k]^T.
template <typename Real> Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real> Tensor<Real> reshape(const Tensor<Real>& x, Shape shape);
template <typename Real> Tensor<Real> permute(const Tensor<Real>& x, const std::vector<std::size_t>& axes);

template <typename Real> Tensor<Real> sum(const Tensor<Real>& x);
template <typename Real> Tensor<Real> mean(const Tensor<Real>& x);
template <typename Real> Tensor<Real> sum_axis(const Tensor<Real>& x, std::size_t axis);
template <typename Real> Tensor<Real> mean_axis(const Tensor<Real>& x, std::size_t axis);
/// Inclusive prefix sum along the last axis.
template <typename Real> Tensor<Real> cumsum_last(const Tensor<Real>& x);

template <typename Real> Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis);
/// softmax(q k^T * scale + bias) v for q [B, H, Tq, d], k [B, H, Tk, d], v [B, H, Tk, dv]. bias is
/// undefined, [Tq, Tk] or [B, H, Tq, Tk] and must not require gradients.
template <typename Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v, const Tensor<Real>& bias,
                       Real scale);
/// Normalizes over the last axis, then applies gain and bias.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias, Real eps);

template <typename Real> Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis);
template <typename Real> Tensor<Real> slice(const Tensor<Real>& x, std::size_t axis, std::size_t start, std::size_t length);
/// Drops `axis` by picking one index along it.
template <typename Real> Tensor<Real> select(const Tensor<Real>& x, std::size_t axis, std::size_t index);

/// Rotates consecutive pairs of the last axis of x[..., T, d] by
/// positions[t] * base^(-2j/d). d must be even.
template <typename Real>
Tensor<Real> rope_rotate(const Tensor<Real>& x, std::span<const double> positions, double base = 10000.0);

/// Pinball loss (alpha - 1{y < q}) (y - q) for q[..., K] against y[...].
template <typename Real>
Tensor<Real> pinball(const Tensor<Real>& q, const Tensor<Real>& y, std::span<const double> levels);

template <typename Real> Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) { return add(a, b); }
template <typename Real> Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) { return sub(a, b); }
template <typename Real> Tensor<Real> operator*(const Tensor<Real>& a, const Tensor<Real>& b) { return mul(a, b); }
template <typename Real> Tensor<Real> operator/(const Tensor<Real>& a, const Tensor<Real>& b) { return div(a, b); }
template <typename Real> Tensor<Real> operator-(const Tensor<Real>& a) { return neg(a); }

/// Central-difference gradient check of a scalar function at x.
/// Returns max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// When `coords` is non-empty only those flat indices are probed.
double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                         double h = 1e-5, std::span<const std::size_t> coords = {});

}  // namespace clops
