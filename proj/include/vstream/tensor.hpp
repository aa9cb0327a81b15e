#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vstream {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);
std::string shape_str(const Shape &shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One entry of the computation record. Non-leaf nodes keep their parents and
// a backward closure until the record is consumed by backward().
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until a gradient arrives
    bool requires_grad = false;
    bool is_leaf = true;
    bool consumed = false;
    const char *op = "leaf";
    std::vector<NodePtr> parents;
    std::function<void(Node &)> backward_fn;

    std::vector<double> &grad_buffer();
};

// Reference-semantics handle over a node. Copies share the node; use clone()
// for an independent leaf.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape &shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t dim(std::size_t axis) const;
    // Rank-2 view helpers: leading extents are folded into rows.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const;
    std::span<double> mutable_values();
    std::vector<double> to_vector() const;
    double item() const;
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    Tensor &set_requires_grad(bool on);
    bool is_leaf() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    // Same values, no history.
    Tensor detach() const;
    Tensor clone() const;

    const Node &node() const { return *node_; }
    const NodePtr &node_ptr() const { return node_; }

private:
    NodePtr node_;
};

bool grad_enabled();

// Disables recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
    bool previous_;
};

// Builds a result node. Records parents and the closure only when recording is
// on and some input requires a gradient. Throws NumericError on NaN/Inf.
Tensor make_result(const char *op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, std::function<void(Node &)> backward_fn);

// Reverse pass from a scalar loss. Populates grad on every reachable leaf that
// requires it (accumulating) and releases the intermediate record.
void backward(const Tensor &loss);

} // namespace vstream
