#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mfield::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct UnsupportedPrimitive : std::logic_error {
  using std::logic_error::logic_error;
};

namespace detail {

inline thread_local int no_grad_depth = 0;

template <class Real>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<Real>> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grad buffers.
  std::function<void(Node&)> backward;

  std::size_t numel() const { return value->size(); }

  std::vector<Real>& ensure_grad() {
    if (grad.size() != value->size()) grad.assign(value->size(), Real(0));
    return grad;
  }
};

/// Gradient buffer of parent i, or nullptr when that parent is not
/// differentiated (frozen leaf or constant).
template <class Real>
Real* parent_grad(Node<Real>& self, std::size_t i) {
  Node<Real>& p = *self.parents[i];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

}  // namespace detail

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Dense row-major tensor with an optional reverse-mode tape.
///
/// Copies share the underlying node; use clone() for a deep copy. Ops treat
/// a tensor as a [rows, cols] matrix where cols is the last extent.
template <class Real>
class Tensor {
 public:
  using value_type = Real;
  using NodePtr = std::shared_ptr<detail::Node<Real>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), Real(0), requires_grad);
  }

  static Tensor full(Shape shape, Real fill, bool requires_grad = false) {
    auto node = std::make_shared<detail::Node<Real>>();
    const std::size_t n = shape_numel(shape);
    node->shape = std::move(shape);
    node->value = std::make_shared<std::vector<Real>>(n, fill);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_string(shape));
    }
    auto node = std::make_shared<detail::Node<Real>>();
    node->shape = std::move(shape);
    node->value = std::make_shared<std::vector<Real>>(std::move(values));
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(Real v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->numel(); }
  std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  std::size_t rows() const {
    const std::size_t c = cols();
    return c == 0 ? 0 : numel() / c;
  }

  std::span<const Real> data() const { return *node_->value; }
  /// Mutable access to the value buffer, shared with every alias.
  std::span<Real> mutable_data() { return *node_->value; }
  Real item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return (*node_->value)[0];
  }
  Real operator[](std::size_t i) const { return (*node_->value)[i]; }
  Real at(std::size_t r, std::size_t c) const { return (*node_->value)[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf) throw std::logic_error("requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
    if (!on) node_->grad.clear();
  }
  bool is_leaf() const { return node_->is_leaf; }
  const char* op() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  /// Deep copy of the value as a new leaf.
  Tensor clone() const {
    return from(shape(), std::vector<Real>(data().begin(), data().end()), requires_grad() && is_leaf());
  }
  /// Shares the value, drops graph history.
  Tensor detach() const {
    auto node = std::make_shared<detail::Node<Real>>();
    node->shape = node_->shape;
    node->value = node_->value;
    return Tensor(std::move(node));
  }
  /// A new leaf sharing the value buffer but with its own gradient buffer.
  Tensor alias() const {
    auto node = std::make_shared<detail::Node<Real>>();
    node->shape = node_->shape;
    node->value = node_->value;
    node->requires_grad = node_->requires_grad;
    return Tensor(std::move(node));
  }
  Tensor reshape(Shape shape) const;

  template <class Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data().begin(), data().end());
    return Tensor<Other>::from(shape(), std::move(out), requires_grad() && is_leaf());
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Builds the output node of an op; records parents and backward only when
/// some parent participates in differentiation.
template <class Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> values, const char* op,
                         std::vector<Tensor<Real>> parents,
                         std::function<void(detail::Node<Real>&)> backward) {
  auto node = std::make_shared<detail::Node<Real>>();
  node->shape = std::move(shape);
  node->value = std::make_shared<std::vector<Real>>(std::move(values));
  node->op = op;
  node->is_leaf = false;
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->backward = std::move(backward);
      node->parents.reserve(parents.size());
      for (const auto& p : parents) node->parents.push_back(p.node());
    }
  }
  return Tensor<Real>(std::move(node));
}

/// Output of an op with no derivative rule. Flows through backward() only as
/// an error.
template <class Real>
Tensor<Real> make_opaque_result(Shape shape, std::vector<Real> values, const char* op,
                                std::vector<Tensor<Real>> parents) {
  auto node = std::make_shared<detail::Node<Real>>();
  node->shape = std::move(shape);
  node->value = std::make_shared<std::vector<Real>>(std::move(values));
  node->op = op;
  node->is_leaf = false;
  if (grad_enabled()) {
    for (const auto& p : parents) {
      if (p.requires_grad()) {
        node->requires_grad = true;
        node->parents.push_back(p.node());
      }
    }
  }
  return Tensor<Real>(std::move(node));
}

template <class Real>
Tensor<Real> Tensor<Real>::reshape(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_string(shape()) + " to " + shape_string(new_shape));
  }
  return make_result<Real>(std::move(new_shape), std::vector<Real>(data().begin(), data().end()),
                           "reshape", {*this}, [](detail::Node<Real>& self) {
                             Real* pg = detail::parent_grad(self, 0);
                             for (std::size_t i = 0; i < self.grad.size(); ++i) pg[i] += self.grad[i];
                           });
}

/// Reverse sweep from a scalar loss. Leaves with requires_grad accumulate into
/// their gradient buffers; frozen leaves are never touched.
template <class Real>
void backward(const Tensor<Real>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  using NodeT = detail::Node<Real>;
  if (!loss.requires_grad()) return;

  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT* n : order) {
    if (!n->is_leaf && !n->backward) {
      throw UnsupportedPrimitive(std::string("no derivative rule for op '") + n->op + "'");
    }
  }

  NodeT* root = loss.node().get();
  root->ensure_grad()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->is_leaf) continue;
    if (n->grad.empty()) continue;
    n->backward(*n);
    // Interior buffers are not needed once propagated.
    if (n != root) std::vector<Real>().swap(n->grad);
  }
}

}  // namespace mfield::ad
