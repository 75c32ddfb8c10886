#include "embalign/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "embalign/errors.hpp"

namespace embalign {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::span<Real> Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor() : Tensor(Tensor::scalar(0.0)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  check_extents(shape);
  auto node = std::make_shared<detail::Node>();
  node->value.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<Real> data, bool requires_grad) {
  check_extents(shape);
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_string(shape()));
  return shape()[1];
}

std::span<const Real> Tensor::data() const { return node_->value; }

std::span<Real> Tensor::mutable_data() {
  if (!node_->is_leaf()) throw ContractError("cannot write values of a non-leaf tensor");
  return node_->value;
}

Real Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw ContractError("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const Real> Tensor::grad() const {
  if (!node_->requires_grad) throw ContractError("tensor does not require grad");
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from_data(shape(), node_->value, false); }

Tensor Tensor::reshape(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_string(shape()) + " to " + shape_string(new_shape));
  }
  check_extents(new_shape);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(new_shape);
  node->value = node_->value;
  if (node_->requires_grad) {
    node->requires_grad = true;
    node->parents = {node_};
    node->backward = [](detail::Node& self) {
      auto g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Tensor(std::move(node));
}

bool Tensor::all_finite() const {
  return std::all_of(node_->value.begin(), node_->value.end(), [](Real v) { return std::isfinite(v); });
}

Graph Graph::trace(const Tensor& root) {
  Graph g;
  std::unordered_set<const detail::Node*> seen;
  // Iterative post-order DFS; avoids recursion depth limits on long tapes.
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      g.order_.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

Tensor round_to_f32(const Tensor& t) {
  std::vector<Real> v(t.data().begin(), t.data().end());
  for (auto& x : v) x = static_cast<float>(x);
  return Tensor::from_data(t.shape(), std::move(v));
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) throw ContractError("loss does not depend on any tensor requiring grad");

  Graph graph = Graph::trace(loss);
  auto nodes = graph.nodes();
  for (detail::Node* n : nodes) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  }
  detail::Node* root = loss.node().get();
  root->grad_buffer()[0] += 1.0;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

}  // namespace embalign
