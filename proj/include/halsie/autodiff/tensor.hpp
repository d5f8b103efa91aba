#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "halsie/errors.hpp"

namespace halsie::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s);

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Shared-storage handle; copies alias the same buffers (use clone() for a
// deep copy). Shapes use the N x C x H x W convention with up to four dims.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false) { return from({1}, {value}, requires_grad); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t numel() const { return s_->value.size(); }

  std::span<T> values() { return s_->value; }
  std::span<const T> values() const { return s_->value; }
  T& operator[](std::size_t i) { return s_->value[i]; }
  T operator[](std::size_t i) const { return s_->value[i]; }
  T item() const;

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }

  bool has_grad() const { return s_ && !s_->grad.empty(); }
  // Allocates a zero gradient buffer on first use.
  std::span<T> grad_buffer() const;
  std::span<const T> grad() const { return s_->grad; }
  void zero_grad() { s_->grad.clear(); }

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

// Ordered list of backward closures. Operations append after they run, so the
// list is topologically ordered by construction; backward() replays it in
// reverse.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  // Gradients accumulate into existing buffers.
  void backward(Tensor<T>& loss);

 private:
  std::vector<std::function<void()>> ops_;
};

// True when an op must record: a live tape plus at least one input that
// participates in differentiation.
template <typename T, typename... Ts>
bool wants_grad(const Tape<T>* tape, const Ts&... inputs) {
  return tape != nullptr && (... || (inputs.defined() && inputs.requires_grad()));
}

}  // namespace halsie::ad
