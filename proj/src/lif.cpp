#include "halsie/lif.hpp"

#include <algorithm>
#include <cmath>

namespace halsie::lif {

template <typename T>
void LifParams<T>::clamp() {
  v_th.values()[0] = std::max(v_th[0], static_cast<T>(kMinThreshold));
  leak.values()[0] = std::clamp(leak[0], T{0}, T{1});
}

template <typename T>
T relaxed_spike(T u, T v_th, T gamma) {
  const T a = static_cast<T>(std::numbers::pi / 2) * gamma * (u - v_th);
  return T(0.5) + std::atan(a) / static_cast<T>(std::numbers::pi);
}

template <typename T>
ad::Tensor<T> membrane_update(ad::Tape<T>* tape, const ad::Tensor<T>& drive, const LifState<T>& state,
                              const LifParams<T>& params) {
  const bool has_prev = !state.is_reset();
  if (has_prev && (state.u.shape() != drive.shape() || state.o.shape() != drive.shape()))
    throw ShapeError("lif: drive shape " + ad::shape_string(drive.shape()) + " does not match state " +
                     ad::shape_string(state.u.shape()));
  const T leak = params.leak_factor();
  const T vth = params.threshold();
  ad::Tensor<T> u(drive.shape());
  for (std::size_t i = 0; i < drive.numel(); ++i) {
    T v = drive[i];
    if (has_prev) {
      v += leak * state.u[i];
      // Guarded so an infinite threshold with no prior spike stays finite.
      if (state.o[i] != T{0}) v -= vth * state.o[i];
    }
    u[i] = v;
  }

  const bool record = has_prev ? ad::wants_grad(tape, drive, state.u, state.o, params.leak, params.v_th)
                               : ad::wants_grad(tape, drive);
  if (record) {
    u.set_requires_grad(true);
    tape->record([drive, prev = state, params, u, has_prev]() mutable {
      if (!u.has_grad()) return;
      const auto gu = u.grad();
      if (drive.requires_grad()) {
        auto gd = drive.grad_buffer();
        for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += gu[i];
      }
      if (!has_prev) return;
      const T leak = params.leak_factor();
      const T vth = params.threshold();
      if (prev.u.requires_grad()) {
        auto g = prev.u.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += leak * gu[i];
      }
      if (prev.o.requires_grad() && std::isfinite(vth)) {
        auto g = prev.o.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= vth * gu[i];
      }
      if (params.leak.requires_grad()) {
        T acc{0};
        for (std::size_t i = 0; i < gu.size(); ++i) acc += gu[i] * prev.u[i];
        params.leak.grad_buffer()[0] += acc;
      }
      if (params.v_th.requires_grad()) {
        T acc{0};
        for (std::size_t i = 0; i < gu.size(); ++i) acc += gu[i] * prev.o[i];
        params.v_th.grad_buffer()[0] -= acc;
      }
    });
  }
  return u;
}

template <typename T>
ad::Tensor<T> fire(ad::Tape<T>* tape, const ad::Tensor<T>& u, const LifParams<T>& params, const SurrogateConfig& cfg) {
  const T vth = params.threshold();
  const auto gamma = static_cast<T>(cfg.gamma);
  ad::Tensor<T> o(u.shape());
  for (std::size_t i = 0; i < u.numel(); ++i)
    o[i] = cfg.mode == SpikeMode::Heaviside ? (u[i] >= vth ? T{1} : T{0}) : relaxed_spike(u[i], vth, gamma);

  if (ad::wants_grad(tape, u, params.v_th)) {
    o.set_requires_grad(true);
    tape->record([u, o, params, gamma]() mutable {
      if (!o.has_grad()) return;
      const auto go = o.grad();
      const T vth = params.threshold();
      T acc{0};
      std::span<T> gu = u.requires_grad() ? u.grad_buffer() : std::span<T>{};
      for (std::size_t i = 0; i < go.size(); ++i) {
        if (go[i] == T{0}) continue;
        const T sg = surrogate_grad(u[i], vth, gamma);
        if (sg == T{0}) continue;
        if (!gu.empty()) gu[i] += go[i] * sg;
        acc += go[i] * sg;
      }
      if (params.v_th.requires_grad()) params.v_th.grad_buffer()[0] -= acc;
    });
  }
  return o;
}

template <typename T>
ad::Tensor<T> lif_step(ad::Tape<T>* tape, LifState<T>& state, const ad::Tensor<T>& drive, const LifParams<T>& params,
                       const SurrogateConfig& cfg) {
  auto u = membrane_update(tape, drive, state, params);
  auto o = fire(tape, u, params, cfg);
  state.u = u;
  state.o = o;
  return o;
}

template <typename T>
SequenceResult<T> run_sequence(ad::Tape<T>* tape, std::span<const ad::Tensor<T>> drives, const LifParams<T>& params,
                               const SurrogateConfig& cfg) {
  if (drives.empty()) throw ConfigError("run_sequence needs at least one timestep");
  SequenceResult<T> out;
  LifState<T> state;
  for (const auto& d : drives) out.spikes.push_back(lif_step(tape, state, d, params, cfg));
  out.final_u = state.u;
  return out;
}

template struct LifParams<float>;
template struct LifParams<double>;
template float relaxed_spike(float, float, float);
template double relaxed_spike(double, double, double);
template ad::Tensor<float> membrane_update(ad::Tape<float>*, const ad::Tensor<float>&, const LifState<float>&,
                                           const LifParams<float>&);
template ad::Tensor<double> membrane_update(ad::Tape<double>*, const ad::Tensor<double>&, const LifState<double>&,
                                            const LifParams<double>&);
template ad::Tensor<float> fire(ad::Tape<float>*, const ad::Tensor<float>&, const LifParams<float>&,
                                const SurrogateConfig&);
template ad::Tensor<double> fire(ad::Tape<double>*, const ad::Tensor<double>&, const LifParams<double>&,
                                 const SurrogateConfig&);
template ad::Tensor<float> lif_step(ad::Tape<float>*, LifState<float>&, const ad::Tensor<float>&,
                                    const LifParams<float>&, const SurrogateConfig&);
template ad::Tensor<double> lif_step(ad::Tape<double>*, LifState<double>&, const ad::Tensor<double>&,
                                     const LifParams<double>&, const SurrogateConfig&);
template SequenceResult<float> run_sequence(ad::Tape<float>*, std::span<const ad::Tensor<float>>,
                                            const LifParams<float>&, const SurrogateConfig&);
template SequenceResult<double> run_sequence(ad::Tape<double>*, std::span<const ad::Tensor<double>>,
                                             const LifParams<double>&, const SurrogateConfig&);

}  // namespace halsie::lif
