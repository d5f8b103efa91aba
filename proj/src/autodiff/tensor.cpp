#include "halsie/autodiff/tensor.hpp"

#include <sstream>

namespace halsie::ad {

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : s_(std::make_shared<TensorStorage<T>>()) {
  if (shape.empty() || shape.size() > 4) throw ShapeError("tensor rank must be 1..4, got " + shape_string(shape));
  s_->value.assign(numel_of(shape), fill);
  s_->shape = std::move(shape);
  s_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (numel_of(shape) != values.size())
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + shape_string(shape));
  Tensor t(std::move(shape), T{0}, requires_grad);
  t.s_->value = std::move(values);
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape()));
  return s_->value[0];
}

template <typename T>
std::span<T> Tensor<T>::grad_buffer() const {
  if (s_->grad.empty()) s_->grad.assign(s_->value.size(), T{0});
  return s_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out;
  out.s_ = std::make_shared<TensorStorage<T>>(*s_);
  return out;
}

template <typename T>
void Tape<T>::backward(Tensor<T>& loss) {
  if (loss.numel() != 1) throw UsageError("backward() needs a scalar root, got " + shape_string(loss.shape()));
  loss.grad_buffer()[0] += T{1};
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace halsie::ad
