#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dtbs {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // allocated lazily by backward
  bool requires_grad = false;
};

/// Dense float32 tensor with value semantics over shared storage.
///
/// Differentiable operations record a closure on a thread-local tape when
/// gradient mode is on and any input is grad-tracked. backward() replays the
/// tape in reverse, accumulates into .grad buffers, and clears the tape, so
/// each backward needs a fresh forward pass.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }

  std::span<const float> data() const { return impl_->data; }
  std::span<float> data() { return impl_->data; }
  float item() const;  // scalar tensors only

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const float> grad() const;
  void zero_grad();

  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_tensor(Shape shape, size_t n);
};

// ---- autograd tape ----

class Tape {
 public:
  static Tape& get();  // thread-local instance
  void push(std::function<void()> fn) { entries_.push_back(std::move(fn)); }
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }
  void replay_reverse();

 private:
  std::vector<std::function<void()>> entries_;
};

bool grad_enabled();

/// Disables tape recording for its scope (teacher inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Backpropagates from a scalar loss through everything recorded since the
/// last backward, then clears the tape.
void backward(const Tensor& loss);

// ---- differentiable primitives ----
// All primitives validate shapes (errors name the op and both shapes) and
// reject non-finite outputs.

/// 2-D convolution, NCHW, square odd kernel, zero padding k/2, stride 1 or 2.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride);
/// Adds a per-channel bias (C) to an NCHW tensor.
Tensor bias_add(const Tensor& x, const Tensor& b);
Tensor relu(const Tensor& x);
/// Nearest-neighbour 2x upsample of an NCHW tensor.
Tensor upsample2x(const Tensor& x);
/// Softmax across the channel axis of an NCHW tensor (per-pixel distribution).
Tensor softmax_channels(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
/// Natural log with the argument clamped to >= 1e-12.
Tensor log(const Tensor& x);
/// Sum of all elements (64-bit accumulation) as a scalar tensor.
Tensor sum(const Tensor& x);

/// Throws if any value is NaN/Inf; `what` names the producing op.
void ensure_finite(std::span<const float> values, const char* what);

}  // namespace dtbs
