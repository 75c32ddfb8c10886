#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace embalign {

using Shape = std::vector<std::size_t>;
// In-memory scalar. Persisted tensors are 32-bit (see io.hpp).
using Real = double;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

// One vertex of the reverse-mode tape. Values are immutable once the op that
// produced the node returns; only `grad` is written during a reverse sweep.
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  std::span<Real> grad_buffer();
};

}  // namespace detail

// Dense row-major tensor. Copies share the underlying node; use
// clone() or detach() for an independent value.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Real> data, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // Extents of a rank-2 tensor; throws DimensionError otherwise.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const Real> data() const;
  // Writable view. Only legal on a leaf (a value not produced by an op).
  std::span<Real> mutable_data();
  Real item() const;
  Real at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const Real> grad() const;
  void zero_grad();

  // New leaf holding a copy of the values, cut from any graph.
  Tensor detach() const;
  Tensor clone() const { return detach(); }
  Tensor reshape(Shape shape) const;

  bool defined() const { return static_cast<bool>(node_); }
  bool all_finite() const;

  // Internal: op construction.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Leaf holding each value rounded to the nearest 32-bit float.
Tensor round_to_f32(const Tensor& t);

// Topologically ordered record of the operations that produced a root
// tensor; parents always precede children.
class Graph {
 public:
  static Graph trace(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  std::span<detail::Node* const> nodes() const { return order_; }

 private:
  std::vector<detail::Node*> order_;
};

// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls;
// intermediate gradients are recomputed each call.
void backward(const Tensor& loss);

}  // namespace embalign
