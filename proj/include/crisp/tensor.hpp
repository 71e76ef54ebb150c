#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace crisp {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible; the message names both shapes.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a caller violates an operation precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorData;

struct Node {
    const char* op = "";
    std::vector<std::shared_ptr<TensorData>> parents;
    // Reads out.grad and accumulates into the parents' grad buffers.
    std::function<void(TensorData& out)> backward;
};

struct TensorData {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    std::shared_ptr<Node> node;

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

}  // namespace detail

/// Dense row-major tensor of doubles with reverse-mode autodiff.
///
/// Tensor is a shared handle: copies alias the same storage. Operations in
/// ops.hpp build new tensors and, when any input requires a gradient and grad
/// mode is enabled, record a backpropagation node pointing at their inputs.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor eye(std::size_t n);

    const Shape& shape() const { return data_->shape; }
    std::size_t dim() const { return data_->shape.size(); }
    std::size_t size(int axis) const;
    std::size_t numel() const { return data_->values.size(); }

    std::span<const double> values() const { return data_->values; }
    std::span<double> mutable_values() { return data_->values; }
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return data_->requires_grad; }
    void set_requires_grad(bool flag) { data_->requires_grad = flag; }
    bool has_grad() const { return data_->grad.size() == data_->values.size(); }
    /// Gradient buffer; all zeros when nothing has been accumulated yet.
    std::vector<double> grad() const;
    void zero_grad();

    bool is_leaf() const { return data_->node == nullptr; }
    const char* op_name() const;

    /// Same values, no history.
    Tensor detach() const;
    Tensor clone() const;

    /// Backpropagate from a scalar. Leaf gradients accumulate across calls.
    void backward() const;

    const std::shared_ptr<detail::TensorData>& data() const { return data_; }
    explicit Tensor(std::shared_ptr<detail::TensorData> data) : data_(std::move(data)) {}

private:
    std::shared_ptr<detail::TensorData> data_;
};

bool grad_enabled();

/// Disables graph recording for its lifetime (evaluation passes).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

using BackwardFn = std::function<void(detail::TensorData& out)>;

/// Builds an op result. `backward` is attached only if some parent requires a
/// gradient and grad mode is on. Used by ops.cpp and by custom ops elsewhere.
Tensor make_op(const char* name, Shape shape, std::vector<double> values,
               const std::vector<Tensor>& parents, BackwardFn backward);

/// Named learnable tensor.
struct Parameter {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

/// Ordered parameter registry. Names are unique.
class ParameterSet {
public:
    Tensor add(std::string name, Tensor init, bool trainable = true);

    std::vector<Parameter>& items() { return params_; }
    const std::vector<Parameter>& items() const { return params_; }
    const Parameter& get(const std::string& name) const;
    Parameter& get(const std::string& name);
    bool contains(const std::string& name) const;
    std::size_t count() const { return params_.size(); }
    std::size_t scalar_count() const;
    void zero_grad();

private:
    std::vector<Parameter> params_;
};

/// Glorot-uniform initialised matrix.
Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace crisp
