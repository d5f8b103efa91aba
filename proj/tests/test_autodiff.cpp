#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "halsie/autodiff/ops.hpp"
#include "halsie/errors.hpp"

using namespace halsie;
using namespace halsie::ad;
using T = Tensor<double>;

namespace {

// Direct seven-loop cross-correlation.
std::vector<double> naive_conv(const T& x, const T& w, const T& b, const Conv2dOptions& o) {
  const auto n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const auto oh = conv_output_size(h, kh, o.stride_h, o.dilation_h, o.pad_h);
  const auto ow = conv_output_size(wd, kw, o.stride_w, o.dilation_w, o.pad_w);
  std::vector<double> out(n * co * oh * ow, 0.0);
  for (std::size_t b0 = 0; b0 < n; ++b0)
    for (std::size_t c = 0; c < co; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double s = b.defined() ? b[c] : 0.0;
          for (std::size_t k = 0; k < ci; ++k)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(y * o.stride_h + i * o.dilation_h) - static_cast<long>(o.pad_h);
                const long ix = static_cast<long>(xx * o.stride_w + j * o.dilation_w) - static_cast<long>(o.pad_w);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                s += x[((b0 * ci + k) * h + iy) * wd + ix] * w[((c * ci + k) * kh + i) * kw + j];
              }
          out[((b0 * co + c) * oh + y) * ow + xx] = s;
        }
  return out;
}

}  // namespace

TEST_CASE("conv output size") {
  CHECK(conv_output_size(192, 3, 2, 1, 1) == 96);
  CHECK(conv_output_size(5, 3, 2, 1, 1) == 3);
  CHECK(conv_output_size(8, 3, 1, 6, 6) == 8);
  CHECK(conv_output_size(7, 1, 1, 1, 0) == 7);
}

TEST_CASE("conv2d matches a direct loop") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    Conv2dOptions o;
    o.stride_h = gradcheck::pick(rng, 1, 3);
    o.stride_w = gradcheck::pick(rng, 1, 3);
    o.dilation_h = gradcheck::pick(rng, 1, 3);
    o.dilation_w = gradcheck::pick(rng, 1, 3);
    o.pad_h = gradcheck::pick(rng, 0, 4);
    o.pad_w = gradcheck::pick(rng, 0, 4);
    const std::size_t kh = gradcheck::pick(rng, 1, 3), kw = gradcheck::pick(rng, 1, 3);
    const auto x = gradcheck::random_tensor(rng, {2, 3, o.dilation_h * (kh - 1) + gradcheck::pick(rng, 1, 6),
                                                  o.dilation_w * (kw - 1) + gradcheck::pick(rng, 1, 6)});
    const auto w = gradcheck::random_tensor(rng, {4, 3, kh, kw});
    const auto b = trial % 2 ? gradcheck::random_tensor(rng, {4}) : T{};
    const auto y = conv2d<double>(nullptr, x, w, b, o);
    const auto ref = naive_conv(x, w, b, o);
    REQUIRE(y.numel() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("same padding keeps the size for dilated kernels") {
  std::mt19937_64 rng(2);
  const auto x = gradcheck::random_tensor(rng, {1, 2, 9, 11});
  const auto w = gradcheck::random_tensor(rng, {3, 2, 3, 3});
  const auto y = conv2d<double>(nullptr, x, w, T{}, Conv2dOptions::same(3, 3, 6, 21));
  CHECK(y.shape() == Shape{1, 3, 9, 11});
}

TEST_CASE("bilinear upsampling uses half-pixel centers") {
  const auto x = T::from({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto y = upsample_bilinear<double>(nullptr, x, 4, 4);
  const std::vector<double> expect{1.0, 1.25, 1.75, 2.0, 1.5, 1.75, 2.25, 2.5,
                                   2.5, 2.75, 3.25, 3.5, 3.0, 3.25, 3.75, 4.0};
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(y[i] == doctest::Approx(expect[i]));
  const auto same = upsample_bilinear<double>(nullptr, x, 2, 2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(same[i] == x[i]);
}

TEST_CASE("batch norm statistics") {
  const auto x = T::from({2, 1, 1, 2}, {1, 2, 3, 6});
  const auto g = T::from({1}, {2.0});
  const auto b = T::from({1}, {0.5});
  BatchNormStats<double> stats(1);
  const auto y = batch_norm<double>(nullptr, x, g, b, stats, true);
  const double mean = 3.0, var = (4 + 1 + 0 + 9) / 4.0;
  for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(2.0 * (x[i] - mean) / std::sqrt(var + 1e-5) + 0.5));
  CHECK(stats.mean[0] == doctest::Approx(0.1 * mean));
  CHECK(stats.var[0] == doctest::Approx(0.9 + 0.1 * (14.0 / 3.0)));

  const auto e = batch_norm<double>(nullptr, x, g, b, stats, false);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(e[i] == doctest::Approx(2.0 * (x[i] - stats.mean[0]) / std::sqrt(stats.var[0] + 1e-5) + 0.5));
}

TEST_CASE("cross entropy values") {
  // Equal logits: -log softmax = log K for every pixel.
  const auto z = T::from({1, 3, 1, 2}, {0, 0, 0, 0, 0, 0}, true);
  const std::vector<std::int32_t> targets{2, 255};
  const std::vector<double> w{1.0, 1.0, 3.0};
  const auto loss = weighted_cross_entropy<double>(nullptr, z, targets, w, 255);
  CHECK(loss.item() == doctest::Approx(3.0 * std::log(3.0)));
  const std::vector<std::int32_t> bad{3, 0};
  CHECK_THROWS_AS(weighted_cross_entropy<double>(nullptr, z, bad, w, 255), LabelError);
}

TEST_CASE("scaling class weights scales the gradient exactly") {
  std::mt19937_64 rng(4);
  const auto z = gradcheck::random_tensor(rng, {2, 3, 2, 2});
  std::vector<std::int32_t> targets(8);
  for (std::size_t i = 0; i < 8; ++i) targets[i] = static_cast<std::int32_t>(i % 3);
  const std::vector<double> w{0.5, 1.0, 1.5}, w2{1.0, 2.0, 3.0};
  const auto grad_for = [&](const std::vector<double>& weights) {
    auto x = z.clone();
    x.set_requires_grad(true);
    Tape<double> tape;
    auto loss = weighted_cross_entropy<double>(&tape, x, targets, weights, 255);
    tape.backward(loss);
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const auto g1 = grad_for(w), g2 = grad_for(w2);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == 2.0 * g1[i]);
}

TEST_CASE("tape accumulates shared inputs and rejects non-scalar roots") {
  auto x = T::from({1, 1, 1, 2}, {1.0, -2.0}, true);
  Tape<double> tape;
  auto y = add<double>(&tape, x, x);
  auto s = sum<double>(&tape, y);
  tape.backward(s);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
  CHECK_THROWS_AS(tape.backward(y), UsageError);

  auto z = scale<double>(nullptr, x, 3.0);
  CHECK(!z.requires_grad());
}

TEST_CASE("shape errors") {
  const T a({1, 2, 3, 3}), b({1, 2, 3, 4});
  CHECK_THROWS_AS(add<double>(nullptr, a, b), ShapeError);
  const T w({4, 3, 3, 3});
  CHECK_THROWS_AS(conv2d<double>(nullptr, a, w, T{}, Conv2dOptions{}), ShapeError);
  CHECK_THROWS_AS(concat_channels<double>(nullptr, std::vector<T>{a, b}), ShapeError);
}

TEST_CASE("float and double engines agree") {
  std::mt19937_64 rng(8);
  const auto xd = gradcheck::random_tensor(rng, {1, 2, 5, 5});
  const auto wd = gradcheck::random_tensor(rng, {3, 2, 3, 3});
  std::vector<float> xf(xd.values().begin(), xd.values().end()), wf(wd.values().begin(), wd.values().end());
  const auto yd = conv2d<double>(nullptr, xd, wd, T{}, Conv2dOptions::same(3, 3));
  const auto yf = conv2d<float>(nullptr, Tensor<float>::from(xd.shape(), xf), Tensor<float>::from(wd.shape(), wf),
                                Tensor<float>{}, Conv2dOptions::same(3, 3));
  for (std::size_t i = 0; i < yd.numel(); ++i) CHECK(yf[i] == doctest::Approx(yd[i]).epsilon(1e-5));
}

TEST_CASE("finite differences on randomized shapes") {
  for (const auto& r : gradcheck::run_all(20260101, 20)) {
    INFO(r.op);
    CHECK(r.shapes == 20);
    CHECK(r.max_rel_error < 1e-4);
  }
}
