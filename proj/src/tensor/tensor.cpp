#include "sqac/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "sqac/error.hpp"

namespace sqac {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{}, std::vector<float>{value}); }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0f); }

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::clone() const {
  Tensor out(shape(), std::vector<float>(impl_->data));
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

void Tape::record(std::string_view op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                  std::shared_ptr<TensorImpl> output, BackwardFn backward) {
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  auto it = std::find_if(nodes_.rbegin(), nodes_.rend(),
                         [&](const Node& n) { return n.output.get() == loss.impl(); });
  if (it == nodes_.rend())
    throw Error("backward: loss is not connected to the active tape (detached graph)");
  const std::size_t last = static_cast<std::size_t>(nodes_.rend() - it) - 1;

  // Each tensor is zeroed and checked once, however many nodes touch it.
  std::unordered_set<const TensorImpl*> seen;
  std::vector<TensorImpl*> inputs;
  for (std::size_t i = 0; i <= last; ++i) {
    Node& n = nodes_[i];
    if (seen.insert(n.output.get()).second) n.output->grad.assign(n.output->data.size(), 0.0f);
    for (auto& in : n.inputs)
      if (in->requires_grad && seen.insert(in.get()).second) {
        in->grad.assign(in->data.size(), 0.0f);
        inputs.push_back(in.get());
      }
  }
  loss.impl()->grad.assign(1, 1.0f);

  for (std::size_t i = last + 1; i-- > 0;) nodes_[i].backward();
  for (TensorImpl* in : inputs) check_finite(in->grad, "gradient");
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void check_finite(std::span<const float> values, std::string_view what) {
  // Exponent bits all set means Inf or NaN; the integer form vectorizes.
  std::uint32_t bad = 0;
  for (float v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    bad |= static_cast<std::uint32_t>((bits & 0x7f800000u) == 0x7f800000u);
  }
  if (bad) throw NumericalError(std::string(what) + ": non-finite value");
}

}  // namespace sqac
