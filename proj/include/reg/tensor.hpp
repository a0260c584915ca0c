#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "reg/common.hpp"

namespace reg {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One record in the computation graph. Nodes are created in topological
// order (inputs always exist before the node that consumes them), so the
// creation id doubles as a topological index for the backward sweep.
struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    uint64_t id = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;  // empty for leaves
    // Reduction ops keep their double-precision result so finite-difference
    // checks are not limited by the float32 store of a large sum.
    double scalar_hi = 0.0;
    bool has_scalar_hi = false;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    float* grad_data();  // allocates zeros on first call
    double scalar_double() const { return has_scalar_hi ? scalar_hi : value[0]; }
};

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<float> data, bool requires_grad);

// Wires inputs/backward only when gradients are enabled and some input
// needs them; otherwise the node is a detached constant and upstream
// graph memory is released as soon as callers drop their handles.
std::shared_ptr<Node> make_op_node(const char* op, Shape shape, std::vector<float> value,
                                   std::vector<std::shared_ptr<Node>> inputs,
                                   std::function<void(Node&)> backward_fn);

}  // namespace detail

// Differentiable N-d array handle. Activations are 5-d [B,C,D,H,W] row-major
// with the last axis fastest; scalars have shape {1} or {}.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int64_t dim(size_t axis) const;
    size_t ndim() const { return shape().size(); }
    int64_t numel() const;
    bool requires_grad() const;
    const char* op() const;

    std::span<const float> values() const;
    // Mutable access to leaf storage (parameter updates between passes).
    std::span<float> values_mut();
    float item() const;         // single-element tensors only
    double item_double() const;  // full-precision value for reduction results

    bool has_grad() const;
    std::span<const float> grad() const;
    void zero_grad();

    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

// Reverse sweep from a scalar loss. Gradients accumulate additively into
// every requires_grad leaf reachable from the loss.
void backward(const Tensor& loss);

// Scoped gradient-mode switch; ops created while disabled are detached.
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Elementwise / reduction primitives.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor sum(const Tensor& a);                                   // -> scalar
Tensor contract(const Tensor& a, std::span<const float> coeffs);  // sum_i a_i*c_i -> scalar

// Scalar combination: sum_i weights[i] * scalars[i]. Every input must be a
// single-element tensor.
Tensor weighted_sum(const std::vector<Tensor>& scalars, const std::vector<float>& weights);

Tensor relu(const Tensor& a);
Tensor concat_channels(const Tensor& a, const Tensor& b);

}  // namespace reg
