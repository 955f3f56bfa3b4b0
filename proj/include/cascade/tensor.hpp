#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cascade {

using Shape = std::vector<std::size_t>;

/// Raised when tensor extents do not fit an operation. The message names the
/// offending axes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for inputs outside an operation's mathematical domain (log of a
/// non-positive value, zero-energy NCC operand, zero-variance correlation).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised for invalid configuration or call parameters.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for malformed input files. `offset()` is the byte offset (or the
/// 1-based line number for line-oriented formats) where parsing stopped.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-4 [B,C,H,W] accessors.
  double& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x);
  double at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const;

  Tensor reshaped(Shape shape) const;
  void fill(double v);

  double sum() const;
  double mean() const;
  double max_abs() const;
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

/// One recorded operation. `backward` reads `grad` and accumulates into the
/// gradient buffers of the parent nodes.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

}  // namespace detail

/// Handle to a tensor participating in reverse-mode differentiation.
///
/// A Var owns its forward value plus an optional gradient buffer. Operations
/// on Vars that require gradients record their adjoint on the result; calling
/// `backward()` on a scalar result replays the recorded operations in reverse
/// topological order. Parameter leaves are shared between graphs, so their
/// gradients accumulate until `zero_grad()`.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var leaf(Tensor value) { return Var(std::move(value), true); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t numel() const { return node_->value.numel(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Gradient buffer; empty until a backward pass reaches this node.
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad_buffer() const { return node_->grad_buffer(); }
  void zero_grad();

  /// Backward from a single-element result with seed 1.
  void backward() const;

  /// Constant copy cut out of the graph.
  Var detach() const { return Var(node_->value, false); }

  double item() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// True while gradient recording is enabled on this thread.
bool grad_enabled();

/// Disables gradient recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// Creates the result node of an operation. `backward` is attached only when
/// recording is enabled and at least one input requires gradients.
Var make_result(Tensor value, std::vector<Var> inputs,
                std::function<void(Node&)> backward);

}  // namespace detail

}  // namespace cascade
