#include "clops/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace clops {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
    out << ']';
    return out.str();
}

namespace {
thread_local bool t_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return t_grad_enabled; }

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), Real(0), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return from_values(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::from_values(Shape shape, std::vector<Real> values, bool requires_grad) {
    for (std::size_t d : shape)
        if (d == 0) throw DimensionError("tensor shape " + shape_string(shape) + " has a zero extent");
    if (shape_numel(shape) != values.size())
        throw DimensionError("shape " + shape_string(shape) + " does not hold " + std::to_string(values.size()) +
                             " values");
    auto node = std::make_shared<detail::Node<Real>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value) {
    return from_values({1}, {value});
}

template <typename Real>
const Shape& Tensor<Real>::shape() const {
    if (!node_) throw ContractError("use of an undefined tensor");
    return node_->shape;
}

template <typename Real>
std::size_t Tensor<Real>::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
    return s[axis];
}

template <typename Real>
std::size_t Tensor<Real>::size() const {
    return values().size();
}

template <typename Real>
std::span<const Real> Tensor<Real>::values() const {
    if (!node_) throw ContractError("use of an undefined tensor");
    return node_->value;
}

template <typename Real>
std::span<Real> Tensor<Real>::values_mut() {
    if (!node_) throw ContractError("use of an undefined tensor");
    return node_->value;
}

template <typename Real>
Real Tensor<Real>::item() const {
    if (size() != 1) throw ContractError("item() on a tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

template <typename Real>
Real Tensor<Real>::at(std::initializer_list<std::size_t> index) const {
    const Shape& s = shape();
    if (index.size() != s.size()) throw DimensionError("index rank does not match " + shape_string(s));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= s[axis]) throw DimensionError("index out of range for " + shape_string(s));
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->value[flat];
}

template <typename Real>
bool Tensor<Real>::requires_grad() const {
    return node_ && node_->requires_grad;
}

template <typename Real>
void Tensor<Real>::set_requires_grad(bool flag) {
    if (!node_) throw ContractError("use of an undefined tensor");
    node_->requires_grad = flag;
}

template <typename Real>
bool Tensor<Real>::has_grad() const {
    return node_ && !node_->grad.empty();
}

template <typename Real>
std::span<const Real> Tensor<Real>::grad() const {
    if (!node_) return {};
    return node_->grad;
}

template <typename Real>
std::span<Real> Tensor<Real>::grad_mut() {
    if (!node_) throw ContractError("use of an undefined tensor");
    return node_->grad_buffer();
}

template <typename Real>
void Tensor<Real>::zero_grad() {
    if (node_) node_->grad.clear();
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
    return from_values(shape(), node_->value, false);
}

template <typename Real>
void Tensor<Real>::backward() const {
    using Node = detail::Node<Real>;
    if (!node_) throw ContractError("backward() on an undefined tensor");
    if (node_->value.size() != 1)
        throw ContractError("backward() needs a scalar loss, got shape " + shape_string(node_->shape));
    if (!std::isfinite(static_cast<double>(node_->value[0])))
        throw NumericError("backward() on a non-finite loss");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order)
        if (n->backward) n->grad.clear();
    node_->grad_buffer()[0] += Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

template class Tensor<float>;
template class Tensor<double>;

double finite_diff_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                         double h, std::span<const std::size_t> coords) {
    auto probe = Tensor<double>::from_values(x.shape(), std::vector<double>(x.values().begin(), x.values().end()),
                                             true);
    Tensor<double> loss = f(probe);
    loss.backward();
    std::vector<double> analytic(probe.size(), 0.0);
    if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

    std::vector<std::size_t> all;
    if (coords.empty()) {
        all.resize(probe.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        coords = all;
    }

    NoGradGuard no_grad;
    double worst = 0.0;
    std::vector<double> shifted(x.values().begin(), x.values().end());
    for (std::size_t i : coords) {
        const double original = shifted[i];
        shifted[i] = original + h;
        const double up = f(Tensor<double>::from_values(x.shape(), shifted)).item();
        shifted[i] = original - h;
        const double down = f(Tensor<double>::from_values(x.shape(), shifted)).item();
        shifted[i] = original;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace clops
