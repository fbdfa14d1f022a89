#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace xrhead {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the differentiation graph. Non-leaf nodes own a closure that
// pushes their adjoint into their parents; parents are kept alive through
// `parents`, so the closure only needs raw pointers.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
};

}  // namespace detail

/// Dense row-major array of doubles with optional adjoint storage.
///
/// Tensor is a handle: copies share the same storage and graph vertex, the
/// way framework tensors do. Use `detach()` for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  /// Direct write access. Only meaningful for leaves (parameters, inputs).
  std::span<double> values_mut() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  /// Empty unless the tensor requires grad and a backward pass has reached it.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad_mut() { return node_->grad; }
  void zero_grad();

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  /// Copy of the values that is disconnected from the graph.
  Tensor detach(bool requires_grad = false) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds a graph vertex; used by the operation implementations.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> inputs,
                            std::function<void(const detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

/// Reverse pass from a scalar. Leaf adjoints accumulate across calls;
/// intermediate adjoints are recomputed from scratch each time.
void backward(const Tensor& loss);

}  // namespace xrhead
