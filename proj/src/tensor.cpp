#include "crisp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace crisp {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor::Tensor() : data_(std::make_shared<detail::TensorData>()) {
    data_->values.assign(1, 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : data_(std::make_shared<detail::TensorData>()) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
    data_->shape = std::move(shape);
    data_->values = std::move(values);
    data_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({}, {value}, requires_grad);
}

Tensor Tensor::eye(std::size_t n) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return Tensor({n, n}, std::move(v));
}

std::size_t Tensor::size(int axis) const {
    int d = static_cast<int>(dim());
    int a = axis < 0 ? axis + d : axis;
    if (a < 0 || a >= d) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(shape()));
    }
    return data_->shape[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return data_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != dim()) {
        throw DimensionError("index rank mismatch for shape " + shape_str(shape()));
    }
    std::size_t flat = 0;
    std::size_t k = 0;
    for (auto i : index) {
        if (i >= data_->shape[k]) throw DimensionError("index out of range");
        flat = flat * data_->shape[k] + i;
        ++k;
    }
    return data_->values[flat];
}

std::vector<double> Tensor::grad() const {
    if (has_grad()) return data_->grad;
    return std::vector<double>(numel(), 0.0);
}

void Tensor::zero_grad() {
    data_->grad.assign(data_->values.size(), 0.0);
}

const char* Tensor::op_name() const {
    return data_->node ? data_->node->op : "leaf";
}

Tensor Tensor::detach() const {
    return Tensor(data_->shape, data_->values, false);
}

Tensor Tensor::clone() const {
    return Tensor(data_->shape, data_->values, data_->requires_grad);
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    // Post-order topological sort, iterative to avoid deep recursion through
    // long recurrent chains.
    std::vector<detail::TensorData*> order;
    std::unordered_set<detail::TensorData*> visited;
    std::vector<std::pair<detail::TensorData*, std::size_t>> stack;
    stack.emplace_back(data_.get(), 0);
    visited.insert(data_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (node->node && next < node->node->parents.size()) {
            detail::TensorData* parent = node->node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    for (auto* t : order) {
        if (t->node) {
            t->grad.assign(t->values.size(), 0.0);
        } else {
            t->ensure_grad();
        }
    }
    data_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorData* t = *it;
        if (!t->node) continue;
        for (auto& p : t->node->parents) {
            if (p->requires_grad) p->ensure_grad();
        }
        t->node->backward(*t);
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_op(const char* name, Shape shape, std::vector<double> values,
               const std::vector<Tensor>& parents, BackwardFn backward) {
    Tensor out(std::move(shape), std::move(values));
    if (!g_grad_enabled) return out;
    bool needs = std::any_of(parents.begin(), parents.end(),
                             [](const Tensor& p) { return p.requires_grad(); });
    if (!needs) return out;
    auto node = std::make_shared<detail::Node>();
    node->op = name;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.data());
    node->backward = std::move(backward);
    out.data()->node = std::move(node);
    out.data()->requires_grad = true;
    return out;
}

Tensor ParameterSet::add(std::string name, Tensor init, bool trainable) {
    if (contains(name)) {
        throw ContractError("duplicate parameter name '" + name + "'");
    }
    init.set_requires_grad(trainable);
    params_.push_back(Parameter{std::move(name), init, trainable});
    return init;
}

const Parameter& ParameterSet::get(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return p;
    }
    throw ContractError("unknown parameter '" + name + "'");
}

Parameter& ParameterSet::get(const std::string& name) {
    return const_cast<Parameter&>(std::as_const(*this).get(name));
}

bool ParameterSet::contains(const std::string& name) const {
    return std::any_of(params_.begin(), params_.end(),
                       [&](const Parameter& p) { return p.name == name; });
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> v(fan_in * fan_out);
    for (auto& x : v) x = dist(rng);
    return Tensor({fan_in, fan_out}, std::move(v));
}

}  // namespace crisp
