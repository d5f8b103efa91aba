#pragma once

#include <numbers>
#include <span>
#include <vector>

#include "halsie/autodiff/tensor.hpp"

namespace halsie::lif {

// Heaviside is the real forward pass. Relaxed swaps it for the smooth
// arctan sigmoid whose derivative is the surrogate, which makes the whole
// recurrence differentiable for finite-difference checks.
enum class SpikeMode { Heaviside, Relaxed };

struct SurrogateConfig {
  double gamma = 100.0;
  SpikeMode mode = SpikeMode::Heaviside;
};

inline constexpr double kMinThreshold = 0.01;

// Per-layer learnable threshold and leak, each a 1-element tensor.
template <typename T>
struct LifParams {
  ad::Tensor<T> v_th;
  ad::Tensor<T> leak;

  static LifParams make(T v_th = T(1.0), T leak = T(0.9), bool learnable = true) {
    return {ad::Tensor<T>::scalar(v_th, learnable), ad::Tensor<T>::scalar(leak, learnable)};
  }
  T threshold() const { return v_th[0]; }
  T leak_factor() const { return leak[0]; }
  // v_th >= 0.01, leak in [0, 1].
  void clamp();
};

// Undefined tensors stand for the all-zero reset state.
template <typename T>
struct LifState {
  ad::Tensor<T> u;
  ad::Tensor<T> o;

  void reset() { *this = LifState{}; }
  bool is_reset() const { return !u.defined(); }
};

// d o / d u pseudo-derivative: gamma / (2 (1 + (pi/2 * gamma * (u - v_th))^2)).
template <typename T>
T surrogate_grad(T u, T v_th, T gamma) {
  const T x = u - v_th;
  const T a = static_cast<T>(std::numbers::pi / 2) * gamma * x;
  return gamma / (T{2} * (T{1} + a * a));
}

template <typename T>
std::vector<T> surrogate_grad(std::span<const T> u, T v_th, T gamma) {
  std::vector<T> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = surrogate_grad(u[i], v_th, gamma);
  return out;
}

// Antiderivative of the surrogate: 1/2 + atan(pi/2 * gamma * (u - v_th)) / pi.
template <typename T>
T relaxed_spike(T u, T v_th, T gamma);

// u[t] = drive + leak * u[t-1] - v_th * o[t-1]
template <typename T>
ad::Tensor<T> membrane_update(ad::Tape<T>* tape, const ad::Tensor<T>& drive, const LifState<T>& state,
                              const LifParams<T>& params);

// o[t] = H(u[t] - v_th), surrogate gradient in backward.
template <typename T>
ad::Tensor<T> fire(ad::Tape<T>* tape, const ad::Tensor<T>& u, const LifParams<T>& params, const SurrogateConfig& cfg);

// One timestep: updates `state` in place and returns the spike map.
template <typename T>
ad::Tensor<T> lif_step(ad::Tape<T>* tape, LifState<T>& state, const ad::Tensor<T>& drive, const LifParams<T>& params,
                       const SurrogateConfig& cfg);

template <typename T>
struct SequenceResult {
  std::vector<ad::Tensor<T>> spikes;
  ad::Tensor<T> final_u;
};

// Runs all drives from a zero state; the state never outlives the call.
template <typename T>
SequenceResult<T> run_sequence(ad::Tape<T>* tape, std::span<const ad::Tensor<T>> drives, const LifParams<T>& params,
                               const SurrogateConfig& cfg);

}  // namespace halsie::lif
