#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sqac {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<float> data;  // row-major
  std::vector<float> grad;  // empty until a backward pass touches the tensor
  bool requires_grad = false;
};

// Reference-semantics handle to a float32 n-d array. Copies of a Tensor alias
// the same storage (the optimizer and the tape rely on that identity); use
// clone() for an independent deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }
  float item() const;

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<float> grad() { return impl_->grad; }
  std::span<const float> grad() const { return impl_->grad; }
  // Allocates (if needed) and zero-fills the gradient slot.
  void zero_grad();

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& handle() const { return impl_; }
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend class Tape;
};

// Records differentiable operations in execution order. backward() replays
// the recorded rules in reverse, so inputs always precede their consumers.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::string_view op, std::vector<std::shared_ptr<TensorImpl>> inputs,
              std::shared_ptr<TensorImpl> output, BackwardFn backward);

  // Zeroes the gradient of every tensor on the tape, seeds d(loss)/d(loss) = 1
  // and propagates. Leaves end up holding dL/dw.
  void backward(const Tensor& loss);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string_view op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Makes a tape the recording target for the current thread while in scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Throws NumericalError naming `what` if any value is NaN or Inf.
void check_finite(std::span<const float> values, std::string_view what);

}  // namespace sqac
