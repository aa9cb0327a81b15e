#include "vstream/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "vstream/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace vstream {

namespace {

// Activation buffers of a few hundred KB are allocated and freed on every op. With glibc defaults
// they go through mmap/munmap or get trimmed back to the kernel, and page faults then cost a
// quarter of the runtime. Keep them on the heap.
[[maybe_unused]] const bool g_allocator_tuned = [] {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
#endif
    return true;
}();

} // namespace

const char *error_kind_name(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::checkpoint: return "checkpoint";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::state: return "state";
    }
    return "unknown";
}

std::size_t shape_numel(const Shape &shape) {
    std::size_t n = 1;
    for (auto e : shape) {
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double> &Node::grad_buffer() {
    if (grad.empty()) {
        grad.assign(value.size(), 0.0);
    }
    return grad;
}

namespace {

thread_local bool t_grad_enabled = true;

void check_shape(const Shape &shape) {
    for (auto e : shape) {
        if (e == 0) {
            throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        }
    }
}

void check_finite(const char *op, const std::vector<double> &v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string(op) + " produced a non-finite value");
        }
    }
}

} // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    check_shape(shape);
    auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape);
    if (shape.empty() || shape_numel(shape) != values.size()) {
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    }
    check_finite("from", values);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

const Shape &Tensor::shape() const {
    if (!node_) {
        throw StateError("use of an undefined tensor");
    }
    return node_->shape;
}

std::size_t Tensor::numel() const { return node().value.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto &s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::rows() const { return numel() / cols(); }
std::size_t Tensor::cols() const { return shape().back(); }

std::span<const double> Tensor::values() const { return node().value; }
std::span<double> Tensor::mutable_values() { return node_->value; }
std::vector<double> Tensor::to_vector() const { return node().value; }

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return node().value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node().value[r * cols() + c]; }

bool Tensor::requires_grad() const { return node().requires_grad; }

Tensor &Tensor::set_requires_grad(bool on) {
    if (!is_leaf()) {
        throw StateError("requires_grad can only be toggled on leaf tensors");
    }
    node_->requires_grad = on;
    return *this;
}

bool Tensor::is_leaf() const { return node().is_leaf; }
bool Tensor::has_grad() const { return !node().grad.empty(); }
std::span<const double> Tensor::grad() const { return node().grad; }

void Tensor::zero_grad() {
    if (node_) {
        node_->grad.clear();
    }
}

Tensor Tensor::detach() const { return from(shape(), node().value, false); }

Tensor Tensor::clone() const { return from(shape(), node().value, requires_grad()); }

Tensor make_result(const char *op, Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node &)> backward_fn) {
    check_finite(op, value);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    node->is_leaf = false;
    if (t_grad_enabled) {
        bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor &t) { return t.defined() && t.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(inputs.size());
            for (auto &t : inputs) {
                node->parents.push_back(t.node_ptr());
            }
            node->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(node));
}

void backward(const Tensor &loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward requires a scalar loss");
    }
    Node *root = loss.node_ptr().get();
    if (root->consumed) {
        throw StateError("computation record already consumed");
    }
    if (!root->requires_grad) {
        throw StateError("loss does not depend on any tensor that requires a gradient");
    }

    // Iterative post-order DFS gives a topological order.
    std::vector<Node *> order;
    std::unordered_set<Node *> seen;
    std::vector<std::pair<Node *, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto &[node, next] = stack.back();
        if (next < node->parents.size()) {
            Node *p = node->parents[next++].get();
            if (p && p->requires_grad && !seen.count(p)) {
                if (p->consumed) {
                    throw StateError("computation record already consumed");
                }
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node *n = *it;
        if (n->is_leaf) {
            continue;
        }
        if (n->backward_fn && !n->grad.empty()) {
            n->backward_fn(*n);
        }
    }
    for (Node *n : order) {
        if (!n->is_leaf) {
            n->backward_fn = nullptr;
            n->parents.clear();
            n->grad.clear();
            n->grad.shrink_to_fit();
            n->consumed = true;
        }
    }
}

} // namespace vstream
