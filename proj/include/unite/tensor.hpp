#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace unite {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<const Node>;

/// Propagates the gradient of a node's output into the gradient buffers of its
/// inputs. `input_grads[i]` is null when input i does not require a gradient.
using BackwardFn = std::function<void(const Node& self, std::span<const double> grad_out,
                                      std::span<std::vector<double>* const> input_grads)>;

/// One recorded operation. Nodes are immutable after construction; gradients
/// are never stored on them (see Gradients).
struct Node {
  std::string op;
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<NodePtr> inputs;
  BackwardFn backward;
};

/// Dense row-major float64 tensor. A cheap handle to an immutable node of the
/// autodiff graph; copying a Tensor shares the node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> data);
  static Tensor parameter(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);

  /// Builds an op result. Records the backward closure only when some input
  /// requires a gradient and recording is enabled. Throws NumericError when
  /// the result holds a non-finite value.
  static Tensor from_op(std::string op, Shape shape, std::vector<double> data,
                        std::vector<Tensor> inputs, BackwardFn backward);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }
  std::span<const double> data() const { return node_->data; }
  double item() const;
  double operator[](std::size_t i) const { return node_->data[i]; }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }
  const NodePtr& node() const { return node_; }

  /// Same values, cut from the graph.
  Tensor detach() const;

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

/// Gradient buffers keyed by graph node, produced by backward().
class Gradients {
 public:
  /// Gradient of the differentiated scalar w.r.t. `t`; zeros of t's shape when
  /// t was not reached or does not require a gradient.
  std::vector<double> of(const Tensor& t) const;
  bool contains(const Tensor& t) const;
  std::vector<double>& buffer(const Node* node, std::size_t size);

 private:
  std::unordered_map<const Node*, std::vector<double>> buffers_;
};

/// Reverse-mode sweep from a scalar. Every node reachable from `root` is
/// visited once, in reverse creation order.
Gradients backward(const Tensor& root);

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

}  // namespace unite
