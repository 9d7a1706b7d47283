#include "ibt/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace ibt {

namespace {
thread_local bool g_grad_mode = true;
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::vector<Real>& detail::Node::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), Real{0});
  return grad;
}

Tensor Tensor::constant(Shape shape, std::vector<Real> values) {
  if (shape_size(shape) != values.size()) {
    throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                " values do not fit shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = shape_size(shape);
  return constant(std::move(shape), std::vector<Real>(n, Real{0}));
}

Tensor Tensor::scalar(Real value) { return constant({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<Real> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::make_result(Shape shape, std::vector<Real> values,
                           std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward_fn) {
  Tensor out = constant(std::move(shape), std::move(values));
  if (!g_grad_mode) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  auto& node = *out.node_;
  node.requires_grad = true;
  node.is_leaf = false;
  node.parents.reserve(parents.size());
  for (auto& p : parents) node.parents.push_back(p.node_);
  node.backward = std::move(backward_fn);
  return out;
}

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("tensor: undefined");
  return node_->shape;
}

std::size_t Tensor::size() const { return node_ ? node_->values.size() : 0; }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.size() != 2) throw std::invalid_argument("tensor: rows() on rank " + std::to_string(s.size()));
  return s[0];
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() != 2) throw std::invalid_argument("tensor: cols() on rank " + std::to_string(s.size()));
  return s[1];
}

std::span<const Real> Tensor::values() const { return node_->values; }

std::span<Real> Tensor::mutable_values() { return node_->values; }

Real Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("tensor: item() on non-scalar " + shape_str(shape()));
  return node_->values[0];
}

Real Tensor::at(std::size_t row, std::size_t col) const {
  return node_->values.at(row * cols() + col);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->values.size(); }

std::span<Real> Tensor::grad() { return node_->ensure_grad(); }

std::span<const Real> Tensor::grad() const { return node_->ensure_grad(); }

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->values.size(), Real{0});
}

bool Tensor::all_finite() const {
  for (Real v : node_->values)
    if (!std::isfinite(v)) return false;
  for (Real g : node_->grad)
    if (!std::isfinite(g)) return false;
  return true;
}

Tensor Tensor::clone() const {
  Tensor t = constant(node_->shape, node_->values);
  t.node_->requires_grad = node_->requires_grad && node_->is_leaf;
  return t;
}

Tensor Tensor::detach() const { return constant(node_->shape, node_->values); }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

bool grad_mode_enabled() { return g_grad_mode; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; the resulting order has parents before children.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (node->is_leaf) {
      node->ensure_grad();
    } else {
      node->grad.assign(node->values.size(), Real{0});
    }
  }
  loss.node()->grad[0] += Real{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

}  // namespace ibt
