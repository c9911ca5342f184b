#pragma once

// Dense tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle to a node holding row-major values, an optional
// gradient buffer and, when produced by a differentiable op while grad mode is
// on, the closure that propagates its gradient to its inputs. backward() walks
// the recorded graph in reverse topological order exactly once and then
// releases it.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nmt/error.hpp"
#include "nmt/real.hpp"

namespace nmt {
inline namespace NMT_PRECISION_NS {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until first touched
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::span<Real> ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), Real(0));
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values,
                     bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<Real> data() { return node_->value; }
  std::span<const Real> data() const { return node_->value; }
  Real item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  // Gradient buffer; empty span if no gradient has been accumulated.
  std::span<Real> grad() { return node_->grad; }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> ensure_grad() { return node_->ensure_grad(); }
  void zero_grad();

  // Deep copy of the values without graph history.
  Tensor detach_copy() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  // Used by ops to build results.
  static Tensor make_result(Shape shape, std::vector<Real> values,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

// Thread-local switch for graph recording.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Ordered record of the nodes reachable from a scalar loss.
class GradientTape {
 public:
  explicit GradientTape(const Tensor& loss);

  std::size_t size() const { return order_.size(); }
  // Runs every node's backward closure in reverse topological order, then
  // releases the graph. Calling it twice is an error.
  void run();

 private:
  std::vector<detail::Node*> order_;
  std::shared_ptr<detail::Node> root_;
  bool consumed_ = false;
};

// Seeds d(loss)/d(loss) = 1 and populates gradients of every requires_grad
// tensor reachable from loss. Throws for non-scalar loss.
void backward(const Tensor& loss);

[[noreturn]] void throw_shape_error(const std::string& op, const Shape& a,
                                    const Shape& b);

}  // namespace NMT_PRECISION_NS
}  // namespace nmt
