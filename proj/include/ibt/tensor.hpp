#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ibt {

#ifdef IBT_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> values;
  std::vector<Real> grad;  // allocated lazily
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  std::vector<Real>& ensure_grad();
};

}  // namespace detail

/// Dense row-major array taking part in reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies alias the same storage. Values are
/// fixed after construction except for parameters, which the optimizer
/// updates in place between forward passes. Every op records its parents
/// and a backward closure on a dynamic tape that `backward()` walks in
/// reverse topological order.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<Real> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(Real value);
  /// Trainable leaf; gradients accumulate across backward calls.
  static Tensor parameter(Shape shape, std::vector<Real> values);

  /// Builds an op result. `backward` is kept only when grad mode is on and
  /// some parent requires grad.
  static Tensor make_result(Shape shape, std::vector<Real> values,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward);

  [[nodiscard]] bool defined() const { return node_ != nullptr; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::size_t rank() const { return shape().size(); }
  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] std::size_t rows() const;
  [[nodiscard]] std::size_t cols() const;

  [[nodiscard]] std::span<const Real> values() const;
  std::span<Real> mutable_values();
  [[nodiscard]] Real item() const;
  [[nodiscard]] Real at(std::size_t row, std::size_t col) const;

  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] bool has_grad() const;
  /// Gradient storage; allocated (zeroed) on first access.
  std::span<Real> grad();
  [[nodiscard]] std::span<const Real> grad() const;
  void zero_grad();

  /// False when any value or gradient is NaN/Inf.
  [[nodiscard]] bool all_finite() const;

  /// Deep copy; keeps the requires_grad flag but drops tape history.
  [[nodiscard]] Tensor clone() const;
  /// Same values, no gradient tracking.
  [[nodiscard]] Tensor detach() const;

  [[nodiscard]] detail::Node* node() const { return node_.get(); }
  [[nodiscard]] const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

[[nodiscard]] bool grad_mode_enabled();

/// Reverse pass from a scalar loss. Leaf gradients accumulate; intermediate
/// gradients are reset on every call.
void backward(const Tensor& loss);

}  // namespace ibt
