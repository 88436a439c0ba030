#include "unite/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "unite/errors.hpp"

namespace unite {

namespace {

std::atomic<std::uint64_t> next_node_id{1};
thread_local bool recording = true;

std::shared_ptr<Node> make_node(std::string op, Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_size(shape) != data.size()) {
    throw DimensionError(op + ": shape " + shape_string(shape) + " holds " + std::to_string(shape_size(shape)) +
                         " values but " + std::to_string(data.size()) + " were given");
  }
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void check_finite(const Node& node) {
  for (std::size_t i = 0; i < node.data.size(); ++i) {
    if (!std::isfinite(node.data[i])) {
      throw NumericError(node.op + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
  auto node = make_node("constant", std::move(shape), std::move(data), false);
  check_finite(*node);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  auto node = make_node("parameter", std::move(shape), std::move(data), true);
  check_finite(*node);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  auto node = make_node(requires_grad ? "parameter" : "constant", std::move(shape), std::vector<double>(n, value),
                        requires_grad);
  check_finite(*node);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

Tensor Tensor::from_op(std::string op, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                       BackwardFn backward) {
  bool needs_grad = false;
  if (recording) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  auto node = make_node(std::move(op), std::move(shape), std::move(data), needs_grad);
  check_finite(*node);
  if (needs_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return node_->data[0];
}

Tensor Tensor::detach() const { return constant(shape(), node_->data); }

std::vector<double> Gradients::of(const Tensor& t) const {
  auto it = buffers_.find(t.node().get());
  if (it == buffers_.end()) return std::vector<double>(t.size(), 0.0);
  return it->second;
}

bool Gradients::contains(const Tensor& t) const { return buffers_.count(t.node().get()) != 0; }

std::vector<double>& Gradients::buffer(const Node* node, std::size_t size) {
  auto& buf = buffers_[node];
  if (buf.empty()) buf.assign(size, 0.0);
  return buf;
}

Gradients backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1) {
    throw DimensionError("backward() needs a scalar root, got " +
                         (root.defined() ? shape_string(root.shape()) : std::string("undefined")));
  }
  Gradients grads;
  if (!root.requires_grad()) return grads;

  // Collect the reachable subgraph, then replay it newest-first.
  std::vector<const Node*> order;
  std::unordered_map<const Node*, bool> seen;
  std::vector<const Node*> stack{root.node().get()};
  seen[root.node().get()] = true;
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && !seen[in.get()]) {
        seen[in.get()] = true;
        stack.push_back(in.get());
      }
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });

  grads.buffer(root.node().get(), 1)[0] = 1.0;
  std::vector<std::vector<double>*> input_grads;
  for (const Node* n : order) {
    if (!n->backward) continue;
    input_grads.assign(n->inputs.size(), nullptr);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      const Node* in = n->inputs[i].get();
      if (in->requires_grad) input_grads[i] = &grads.buffer(in, in->data.size());
    }
    // Map values are node-allocated, so this reference survives the inserts above.
    const auto& g_out = grads.buffer(n, n->data.size());
    n->backward(*n, g_out, input_grads);
  }
  return grads;
}

NoGradGuard::NoGradGuard() : previous_(recording) { recording = false; }
NoGradGuard::~NoGradGuard() { recording = previous_; }

bool grad_enabled() noexcept { return recording; }

}  // namespace unite
