#include "locaris/tensor.hpp"

#include <algorithm>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "locaris/error.hpp"

namespace locaris::nn {

namespace {
thread_local Tape* g_active_tape = nullptr;

#if defined(__GLIBC__)
// Activation buffers are allocated and freed every step. Keeping them on the
// heap instead of fresh mmap pages avoids a page fault per touched page.
const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif
}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  for (auto d : shape) {
    if (d == 0) fail(Errc::ShapeMismatch, "tensor extents must be positive " + shape_string(shape));
  }
  node_->value.assign(shape_size(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (shape.empty() || shape_size(shape) != values.size()) {
    fail(Errc::ShapeMismatch, "value count " + std::to_string(values.size()) +
                                  " does not match shape " + shape_string(shape));
  }
  for (auto d : shape) {
    if (d == 0) fail(Errc::ShapeMismatch, "tensor extents must be positive " + shape_string(shape));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

double Tensor::item() const {
  if (size() != 1) fail(Errc::NotScalar, "item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

std::span<double> Tensor::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() const {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  return Tensor(node_->shape, node_->value, node_->requires_grad);
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), node_->value, false);
}

void Tape::record(const Tensor& output, BackwardFn fn) {
  auto& node = output.node();
  node.tape = this;
  node.requires_grad = true;
  entries_.push_back({&node, std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    fail(Errc::NotScalar, "backward needs a scalar loss");
  }
  if (loss.node().tape != this) fail(Errc::NoTape, "loss was not produced under this tape");
  loss.grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->fn();
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() noexcept { return g_active_tape; }

std::vector<std::vector<double>> grad(const Tensor& loss, std::span<const Tensor> leaves) {
  Tape* tape = active_tape();
  if (tape == nullptr) fail(Errc::NoTape, "grad() called without an active tape");
  for (const auto& leaf : leaves) leaf.zero_grad();
  tape->backward(loss);
  std::vector<std::vector<double>> out;
  out.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    if (leaf.has_grad()) {
      const auto g = leaf.grad();
      out.emplace_back(g.begin(), g.end());
    } else {
      out.emplace_back(leaf.size(), 0.0);
    }
  }
  return out;
}

}  // namespace locaris::nn
