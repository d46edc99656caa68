#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace locaris::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  const Tape* tape = nullptr;  // tape that recorded this node as an output
};
}  // namespace detail

/// Shared handle to a row-major float64 buffer with an optional gradient.
/// Copies alias the same storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  /// Leading extent for rank-2 tensors, 1 for rank-1.
  std::size_t rows() const { return rank() == 1 ? 1 : node_->shape.front(); }
  std::size_t cols() const { return node_->shape.back(); }

  std::span<double> values() const { return node_->value; }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }

  /// Gradient buffer; allocated as zeros on first access.
  std::span<double> grad() const;
  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  void zero_grad() const;

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) const { node_->requires_grad = on; }

  Tensor clone() const;
  Tensor reshaped(Shape shape) const;  // deep copy with a new shape

  const detail::Node* id() const noexcept { return node_.get(); }
  detail::Node& node() const { return *node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Records primitive applications in execution order; backward() replays them
/// in reverse. Single-threaded.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Tensor& output, BackwardFn fn);
  /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
  /// Throws NotScalar / NoTape.
  void backward(const Tensor& loss);
  void clear() { entries_.clear(); }
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  struct Entry {
    detail::Node* output;  // kept alive by the closure's captures
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

/// Makes `tape` the thread's active tape for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Disables recording for the scope's lifetime (inference, finite differences).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape() noexcept;

/// Zeroes the leaves' gradients, runs backward on the active tape, and returns
/// a copy of each leaf's gradient (zeros for leaves off the path).
std::vector<std::vector<double>> grad(const Tensor& loss, std::span<const Tensor> leaves);

}  // namespace locaris::nn
