#pragma once

// Central finite-difference checking for the tape engine, shared by the unit
// tests and the acceptance gate.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "halsie/autodiff/ops.hpp"
#include "halsie/lif.hpp"

namespace gradcheck {

using halsie::ad::Shape;
using halsie::ad::Tape;
using Tensor = halsie::ad::Tensor<double>;
using Fn = std::function<Tensor(Tape<double>*, std::vector<Tensor>&)>;

inline constexpr double kStep = 1e-5;

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1, double hi = 1,
                            double min_abs = 0.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(halsie::ad::numel_of(shape));
  for (auto& x : v) {
    do x = d(rng);
    while (std::abs(x) < min_abs);
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

struct Result {
  double max_rel_error = 0;
  std::size_t checked = 0;
};

// Loss = sum(w * f(inputs)) with fixed random w. Compares d loss / d input
// from the tape against (L(x + h) - L(x - h)) / 2h for every input element.
inline Result check(const Fn& f, std::vector<Tensor> inputs, std::mt19937_64& rng) {
  std::vector<double> w;
  {
    auto probe = f(nullptr, inputs);
    std::uniform_real_distribution<double> d(-1, 1);
    w.resize(probe.numel());
    for (auto& x : w) x = d(rng);
  }
  const auto loss_at = [&](std::vector<Tensor>& in) {
    const auto out = f(nullptr, in);
    double s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * out[i];
    return s;
  };

  Tape<double> tape;
  for (auto& t : inputs) t.zero_grad();
  auto out = f(&tape, inputs);
  auto loss = halsie::ad::weighted_sum<double>(&tape, out, w);
  tape.backward(loss);

  Result r;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double x0 = t[i];
      t[i] = x0 + kStep;
      const double up = loss_at(inputs);
      t[i] = x0 - kStep;
      const double down = loss_at(inputs);
      t[i] = x0;
      const double numeric = (up - down) / (2 * kStep);
      const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
      ++r.checked;
      if (scale < 1e-7) continue;
      r.max_rel_error = std::max(r.max_rel_error, std::abs(numeric - analytic[i]) / scale);
    }
  }
  return r;
}

struct OpReport {
  std::string op;
  std::size_t shapes = 0;
  double max_rel_error = 0;
};

using namespace halsie;

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// `shapes` randomized shapes per operation.
inline std::vector<OpReport> run_all(std::uint64_t seed, std::size_t shapes) {
  std::mt19937_64 rng(seed);
  std::vector<OpReport> out;
  const auto run = [&](const std::string& name, const std::function<Result()>& one) {
    OpReport rep{name, 0, 0};
    for (std::size_t s = 0; s < shapes; ++s) {
      const auto r = one();
      rep.max_rel_error = std::max(rep.max_rel_error, r.max_rel_error);
      ++rep.shapes;
    }
    out.push_back(rep);
  };

  run("conv2d", [&] {
    const std::size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
    const std::size_t kh = pick(rng, 1, 3), kw = pick(rng, 1, 3);
    ad::Conv2dOptions o;
    o.stride_h = pick(rng, 1, 2);
    o.stride_w = pick(rng, 1, 2);
    o.dilation_h = pick(rng, 1, 2);
    o.dilation_w = pick(rng, 1, 3);
    o.pad_h = pick(rng, 0, 2);
    o.pad_w = pick(rng, 0, 2);
    const std::size_t h = o.dilation_h * (kh - 1) + pick(rng, 1, 4), w = o.dilation_w * (kw - 1) + pick(rng, 1, 4);
    const bool bias = pick(rng, 0, 1) == 1;
    std::vector<Tensor> in{random_tensor(rng, {n, ci, h, w}), random_tensor(rng, {co, ci, kh, kw})};
    if (bias) in.push_back(random_tensor(rng, {co}));
    return check([o, bias](Tape<double>* t, std::vector<Tensor>& x) {
      return ad::conv2d(t, x[0], x[1], bias ? x[2] : Tensor{}, o);
    }, in, rng);
  });

  run("pointwise_conv", [&] {
    const std::size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 4), co = pick(rng, 1, 4);
    std::vector<Tensor> in{random_tensor(rng, {n, ci, pick(rng, 1, 4), pick(rng, 1, 4)}),
                           random_tensor(rng, {co, ci, 1, 1}), random_tensor(rng, {co})};
    return check([](Tape<double>* t, std::vector<Tensor>& x) { return ad::pointwise_conv(t, x[0], x[1], x[2]); }, in,
                 rng);
  });

  run("batch_norm_train", [&] {
    const std::size_t c = pick(rng, 1, 3);
    std::vector<Tensor> in{random_tensor(rng, {pick(rng, 2, 3), c, pick(rng, 1, 3), pick(rng, 2, 3)}),
                           random_tensor(rng, {c}, 0.5, 1.5), random_tensor(rng, {c})};
    return check([c](Tape<double>* t, std::vector<Tensor>& x) {
      ad::BatchNormStats<double> stats(c);
      return ad::batch_norm(t, x[0], x[1], x[2], stats, true);
    }, in, rng);
  });

  run("batch_norm_eval", [&] {
    const std::size_t c = pick(rng, 1, 3);
    ad::BatchNormStats<double> stats(c);
    std::uniform_real_distribution<double> d(0.2, 2.0);
    for (std::size_t i = 0; i < c; ++i) {
      stats.mean[i] = d(rng) - 1.0;
      stats.var[i] = d(rng);
    }
    std::vector<Tensor> in{random_tensor(rng, {pick(rng, 1, 2), c, pick(rng, 1, 3), pick(rng, 1, 3)}),
                           random_tensor(rng, {c}, 0.5, 1.5), random_tensor(rng, {c})};
    return check([stats](Tape<double>* t, std::vector<Tensor>& x) mutable {
      return ad::batch_norm(t, x[0], x[1], x[2], stats, false);
    }, in, rng);
  });

  run("leaky_relu", [&] {
    std::vector<Tensor> in{random_tensor(rng, {pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)},
                                         -1, 1, 1e-3)};
    return check([](Tape<double>* t, std::vector<Tensor>& x) { return ad::leaky_relu(t, x[0], 0.01); }, in, rng);
  });

  run("relu", [&] {
    std::vector<Tensor> in{random_tensor(rng, {pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)},
                                         -1, 1, 1e-3)};
    return check([](Tape<double>* t, std::vector<Tensor>& x) { return ad::relu(t, x[0]); }, in, rng);
  });

  run("upsample_bilinear", [&] {
    const std::size_t oh = pick(rng, 1, 7), ow = pick(rng, 1, 7);
    std::vector<Tensor> in{random_tensor(rng, {pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 4)})};
    return check([oh, ow](Tape<double>* t, std::vector<Tensor>& x) { return ad::upsample_bilinear(t, x[0], oh, ow); },
                 in, rng);
  });

  run("concat_channels", [&] {
    const std::size_t n = pick(rng, 1, 2), h = pick(rng, 1, 3), w = pick(rng, 1, 3), parts = pick(rng, 1, 3);
    std::vector<Tensor> in;
    for (std::size_t p = 0; p < parts; ++p) in.push_back(random_tensor(rng, {n, pick(rng, 1, 3), h, w}));
    return check([](Tape<double>* t, std::vector<Tensor>& x) { return ad::concat_channels(t, x); }, in, rng);
  });

  run("add", [&] {
    const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
    std::vector<Tensor> in{random_tensor(rng, s), random_tensor(rng, s)};
    return check([](Tape<double>* t, std::vector<Tensor>& x) { return ad::add(t, x[0], x[1]); }, in, rng);
  });

  run("scale", [&] {
    const double alpha = std::uniform_real_distribution<double>(-2, 2)(rng);
    std::vector<Tensor> in{random_tensor(rng, {pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)})};
    return check([alpha](Tape<double>* t, std::vector<Tensor>& x) { return ad::scale(t, x[0], alpha); }, in, rng);
  });

  run("sum", [&] {
    std::vector<Tensor> in{random_tensor(rng, {pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)})};
    return check([](Tape<double>* t, std::vector<Tensor>& x) { return ad::sum(t, x[0]); }, in, rng);
  });

  run("weighted_sum", [&] {
    std::vector<Tensor> in{random_tensor(rng, {pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)})};
    std::vector<double> w(in[0].numel());
    for (auto& v : w) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    return check([w](Tape<double>* t, std::vector<Tensor>& x) { return ad::weighted_sum<double>(t, x[0], w); }, in,
                 rng);
  });

  run("weighted_cross_entropy", [&] {
    const std::size_t n = pick(rng, 1, 2), k = pick(rng, 1, 4), h = pick(rng, 1, 3), w = pick(rng, 1, 3);
    std::vector<std::int32_t> targets(n * h * w);
    for (auto& t : targets) t = pick(rng, 0, 4) == 0 ? 255 : static_cast<std::int32_t>(pick(rng, 0, k - 1));
    std::vector<double> cw(k);
    for (auto& v : cw) v = std::uniform_real_distribution<double>(0.2, 2.0)(rng);
    std::vector<Tensor> in{random_tensor(rng, {n, k, h, w}, -2, 2)};
    return check([targets, cw](Tape<double>* t, std::vector<Tensor>& x) {
      return ad::weighted_cross_entropy<double>(t, x[0], targets, cw, 255);
    }, in, rng);
  });

  // Threshold far above any reachable membrane value: no spike ever fires,
  // so the recurrence is the smooth linear integrator.
  run("lif_membrane_recurrence", [&] {
    const std::size_t steps = pick(rng, 1, 5);
    const Shape s{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3)};
    std::vector<Tensor> in;
    for (std::size_t i = 0; i < steps; ++i) in.push_back(random_tensor(rng, s));
    in.push_back(Tensor::scalar(std::uniform_real_distribution<double>(0.1, 0.95)(rng), true));
    return check([steps](Tape<double>* t, std::vector<Tensor>& x) {
      lif::LifParams<double> p{Tensor::scalar(1e6, true), x[steps]};
      lif::LifState<double> state;
      Tensor acc;
      for (std::size_t i = 0; i < steps; ++i) {
        lif::lif_step(t, state, x[i], p, lif::SurrogateConfig{});
        acc = acc.defined() ? ad::add(t, acc, state.u) : state.u;
      }
      return acc;
    }, in, rng);
  });

  return out;
}

}  // namespace gradcheck
