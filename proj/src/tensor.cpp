#include "reg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <unordered_set>

namespace reg {

namespace {

std::atomic<uint64_t> g_next_node_id{1};
bool g_debug_checks = false;
thread_local bool g_grad_enabled = true;

void check_finite(const char* what, const char* op, std::span<const float> data) {
    for (float v : data) {
        if (!std::isfinite(v)) {
            throw NumericsError(std::string("non-finite ") + what + " in op '" + op + "'");
        }
    }
}

}  // namespace

void set_debug_checks(bool enabled) { g_debug_checks = enabled; }
bool debug_checks() { return g_debug_checks; }

extern "C" void openblas_set_num_threads(int);

void set_max_threads(int n) {
    if (n >= 1) openblas_set_num_threads(n);
}

void init_threads_from_env() {
    if (const char* env = std::getenv("REG_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) set_max_threads(n);
    }
}

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

float* Node::grad_data() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    return grad.data();
}

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<float> data, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    node->id = g_next_node_id.fetch_add(1);
    return node;
}

std::shared_ptr<Node> make_op_node(const char* op, Shape shape, std::vector<float> value,
                                   std::vector<std::shared_ptr<Node>> inputs,
                                   std::function<void(Node&)> backward_fn) {
    if (shape_numel(shape) != static_cast<int64_t>(value.size())) {
        throw ShapeError(std::string("op '") + op + "' produced " + std::to_string(value.size()) +
                         " values for shape " + shape_str(shape));
    }
    if (g_debug_checks) check_finite("value", op, value);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->id = g_next_node_id.fetch_add(1);
    node->op = op;
    bool needs_grad = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs) needs_grad = needs_grad || in->requires_grad;
    }
    if (needs_grad) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward_fn = std::move(backward_fn);
    }
    return node;
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(detail::make_leaf(std::move(shape), std::vector<float>(n, 0.0f), requires_grad));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return Tensor(detail::make_leaf(std::move(shape), std::vector<float>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    return Tensor(detail::make_leaf(std::move(shape), std::move(data), requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }

int64_t Tensor::dim(size_t axis) const {
    if (axis >= node_->shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(node_->shape));
    }
    return node_->shape[axis];
}

int64_t Tensor::numel() const { return node_->numel(); }
bool Tensor::requires_grad() const { return node_->requires_grad; }
const char* Tensor::op() const { return node_->op; }

std::span<const float> Tensor::values() const { return node_->value; }
std::span<float> Tensor::values_mut() { return node_->value; }

float Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() requires a single-element tensor, got shape " +
                         shape_str(node_->shape));
    }
    return node_->value[0];
}

double Tensor::item_double() const {
    if (numel() != 1) {
        throw ShapeError("item_double() requires a single-element tensor, got shape " +
                         shape_str(node_->shape));
    }
    return node_->scalar_double();
}

bool Tensor::has_grad() const { return node_->grad.size() == node_->value.size(); }

std::span<const float> Tensor::grad() const {
    if (!has_grad()) {
        throw std::logic_error("grad() called before backward reached this tensor");
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward requires a scalar loss");
    }
    auto root = loss.node();
    if (!root->requires_grad) {
        throw std::logic_error("backward on a tensor that does not require grad");
    }

    // Collect the subgraph reachable from the loss.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        detail::Node* node = stack.back();
        stack.pop_back();
        order.push_back(node);
        for (const auto& in : node->inputs) {
            if (in->requires_grad && seen.insert(in.get()).second) {
                stack.push_back(in.get());
            }
        }
    }
    // Creation ids are a topological order: inputs always precede consumers.
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });

    root->grad_data()[0] += 1.0f;
    for (detail::Node* node : order) {
        if (!node->backward_fn) continue;
        node->grad_data();  // fan-out may have left it unallocated
        node->backward_fn(*node);
        if (g_debug_checks) check_finite("gradient", node->op, node->grad);
    }
    if (g_debug_checks) {
        for (detail::Node* node : order) {
            if (!node->backward_fn && node->grad.size() == node->value.size()) {
                check_finite("leaf gradient", node->op, node->grad);
            }
        }
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<float> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    auto an = a.node();
    auto bn = b.node();
    return Tensor(detail::make_op_node(
        "add", a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
            for (auto* dst : {an.get(), bn.get()}) {
                if (!dst->requires_grad) continue;
                float* g = dst->grad_data();
                for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
        }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<float> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    auto an = a.node();
    auto bn = b.node();
    return Tensor(detail::make_op_node(
        "sub", a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
            if (an->requires_grad) {
                float* g = an->grad_data();
                for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                float* g = bn->grad_data();
                for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
            }
        }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<float> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    auto an = a.node();
    auto bn = b.node();
    return Tensor(detail::make_op_node(
        "mul", a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
            if (an->requires_grad) {
                float* g = an->grad_data();
                for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                float* g = bn->grad_data();
                for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * an->value[i];
            }
        }));
}

Tensor scale(const Tensor& a, float c) {
    const auto av = a.values();
    std::vector<float> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    auto an = a.node();
    return Tensor(detail::make_op_node(
        "scale", a.shape(), std::move(out), {an}, [an, c](detail::Node& self) {
            if (!an->requires_grad) return;
            float* g = an->grad_data();
            for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * c;
        }));
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (float v : a.values()) total += v;
    auto an = a.node();
    auto node = detail::make_op_node(
        "sum", Shape{1}, {static_cast<float>(total)}, {an}, [an](detail::Node& self) {
            if (!an->requires_grad) return;
            const float g0 = self.grad[0];
            float* g = an->grad_data();
            for (size_t i = 0; i < an->value.size(); ++i) g[i] += g0;
        });
    node->scalar_hi = total;
    node->has_scalar_hi = true;
    return Tensor(node);
}

Tensor contract(const Tensor& a, std::span<const float> coeffs) {
    if (static_cast<int64_t>(coeffs.size()) != a.numel()) {
        throw ShapeError("contract: coefficient count " + std::to_string(coeffs.size()) +
                         " does not match tensor numel " + std::to_string(a.numel()));
    }
    const auto av = a.values();
    double total = 0.0;
    for (size_t i = 0; i < av.size(); ++i) total += static_cast<double>(av[i]) * coeffs[i];
    auto an = a.node();
    std::vector<float> saved(coeffs.begin(), coeffs.end());
    auto node = detail::make_op_node(
        "contract", Shape{1}, {static_cast<float>(total)}, {an},
        [an, saved = std::move(saved)](detail::Node& self) {
            if (!an->requires_grad) return;
            const float g0 = self.grad[0];
            float* g = an->grad_data();
            for (size_t i = 0; i < saved.size(); ++i) g[i] += g0 * saved[i];
        });
    node->scalar_hi = total;
    node->has_scalar_hi = true;
    return Tensor(node);
}

Tensor weighted_sum(const std::vector<Tensor>& scalars, const std::vector<float>& weights) {
    if (scalars.size() != weights.size() || scalars.empty()) {
        throw ShapeError("weighted_sum: need matching non-empty scalars/weights");
    }
    double total = 0.0;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    inputs.reserve(scalars.size());
    for (size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].numel() != 1) {
            throw ShapeError("weighted_sum: input " + std::to_string(i) + " is not scalar");
        }
        total += scalars[i].node()->scalar_double() * weights[i];
        inputs.push_back(scalars[i].node());
    }
    auto saved_inputs = inputs;
    std::vector<float> w = weights;
    auto node = detail::make_op_node(
        "weighted_sum", Shape{1}, {static_cast<float>(total)}, std::move(inputs),
        [saved_inputs = std::move(saved_inputs), w = std::move(w)](detail::Node& self) {
            const float g0 = self.grad[0];
            for (size_t i = 0; i < saved_inputs.size(); ++i) {
                if (saved_inputs[i]->requires_grad) {
                    saved_inputs[i]->grad_data()[0] += g0 * w[i];
                }
            }
        });
    node->scalar_hi = total;
    node->has_scalar_hi = true;
    return Tensor(node);
}

Tensor relu(const Tensor& a) {
    const auto av = a.values();
    std::vector<float> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0f ? av[i] : 0.0f;
    auto an = a.node();
    return Tensor(detail::make_op_node(
        "relu", a.shape(), std::move(out), {an}, [an](detail::Node& self) {
            if (!an->requires_grad) return;
            float* g = an->grad_data();
            // subgradient at 0 is 0
            for (size_t i = 0; i < self.grad.size(); ++i) {
                if (an->value[i] > 0.0f) g[i] += self.grad[i];
            }
        }));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 5 || b.ndim() != 5) {
        throw ShapeError("concat_channels expects 5-d [B,C,D,H,W] tensors");
    }
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    for (size_t axis : {size_t{0}, size_t{2}, size_t{3}, size_t{4}}) {
        if (sa[axis] != sb[axis]) {
            throw ShapeError("concat_channels: non-channel extents differ, " + shape_str(sa) +
                             " vs " + shape_str(sb));
        }
    }
    const int64_t batch = sa[0];
    const int64_t ca = sa[1];
    const int64_t cb = sb[1];
    const int64_t spatial = sa[2] * sa[3] * sa[4];
    Shape out_shape{batch, ca + cb, sa[2], sa[3], sa[4]};
    std::vector<float> out(shape_numel(out_shape));
    const auto av = a.values();
    const auto bv = b.values();
    for (int64_t n = 0; n < batch; ++n) {
        float* dst = out.data() + n * (ca + cb) * spatial;
        std::copy_n(av.data() + n * ca * spatial, ca * spatial, dst);
        std::copy_n(bv.data() + n * cb * spatial, cb * spatial, dst + ca * spatial);
    }
    auto an = a.node();
    auto bn = b.node();
    return Tensor(detail::make_op_node(
        "concat_channels", std::move(out_shape), std::move(out), {an, bn},
        [an, bn, batch, ca, cb, spatial](detail::Node& self) {
            for (int64_t n = 0; n < batch; ++n) {
                const float* src = self.grad.data() + n * (ca + cb) * spatial;
                if (an->requires_grad) {
                    float* g = an->grad_data() + n * ca * spatial;
                    for (int64_t i = 0; i < ca * spatial; ++i) g[i] += src[i];
                }
                if (bn->requires_grad) {
                    float* g = bn->grad_data() + n * cb * spatial;
                    for (int64_t i = 0; i < cb * spatial; ++i) g[i] += src[ca * spatial + i];
                }
            }
        }));
}

}  // namespace reg
