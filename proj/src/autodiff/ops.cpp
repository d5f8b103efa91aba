#include "halsie/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace halsie::ad {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void require_rank4(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expected N x C x H x W input, got " + shape_string(s));
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, hout, wout;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t pixels() const { return hout * wout; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, const Conv2dOptions& o, T* col) {
  const std::size_t pixels = g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * pixels;
        const T* plane = x + c * g.h * g.w;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * o.stride_h + i * o.dilation_h) -
                          static_cast<std::ptrdiff_t>(o.pad_h);
          T* dst = row + oy * g.wout;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wout, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * o.stride_w + j * o.dilation_w) -
                            static_cast<std::ptrdiff_t>(o.pad_w);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T{0} : src[ix];
          }
        }
      }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, const Conv2dOptions& o, T* dx) {
  const std::size_t pixels = g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * pixels;
        T* plane = dx + c * g.h * g.w;
        for (std::size_t oy = 0; oy < g.hout; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * o.stride_h + i * o.dilation_h) -
                          static_cast<std::ptrdiff_t>(o.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const T* src = row + oy * g.wout;
          for (std::size_t ox = 0; ox < g.wout; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * o.stride_w + j * o.dilation_w) -
                            static_cast<std::ptrdiff_t>(o.pad_w);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
}

template <typename T>
void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Conv2dOptions Conv2dOptions::same(std::size_t kh, std::size_t kw, std::size_t dil_h, std::size_t dil_w) {
  Conv2dOptions o;
  o.dilation_h = dil_h;
  o.dilation_w = dil_w;
  o.pad_h = dil_h * (kh - 1) / 2;
  o.pad_w = dil_w * (kw - 1) / 2;
  return o;
}

Conv2dOptions Conv2dOptions::strided(std::size_t stride, std::size_t pad) {
  Conv2dOptions o;
  o.stride_h = o.stride_w = stride;
  o.pad_h = o.pad_w = pad;
  return o;
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t dilation,
                             std::size_t pad) {
  if (stride == 0 || dilation == 0) throw ShapeError("conv stride and dilation must be >= 1");
  const auto span = static_cast<std::ptrdiff_t>(dilation * (kernel - 1) + 1);
  const auto padded = static_cast<std::ptrdiff_t>(in + 2 * pad);
  if (padded < span) throw ShapeError("conv kernel footprint exceeds padded input");
  return static_cast<std::size_t>((padded - span) / static_cast<std::ptrdiff_t>(stride)) + 1;
}

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv2dOptions& opts) {
  require_rank4(input.shape(), "conv2d");
  if (weight.rank() != 4) throw ShapeError("conv2d: weight must be Cout x Cin x kh x kw");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2), weight.dim(3),
                 0, 0};
  if (weight.dim(1) != g.cin)
    throw ShapeError("conv2d: input has " + std::to_string(g.cin) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  if (bias.defined() && bias.numel() != g.cout) throw ShapeError("conv2d: bias length must equal Cout");
  g.hout = conv_output_size(g.h, g.kh, opts.stride_h, opts.dilation_h, opts.pad_h);
  g.wout = conv_output_size(g.w, g.kw, opts.stride_w, opts.dilation_w, opts.pad_w);

  Tensor<T> out({g.n, g.cout, g.hout, g.wout});
  std::vector<T> col(g.patch() * g.pixels());
  ConstMapMat<T> wmat(weight.values().data(), static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(g.patch()));
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(input.values().data() + n * g.cin * g.h * g.w, g, opts, col.data());
    ConstMapMat<T> cmat(col.data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.pixels()));
    MapMat<T> omat(out.values().data() + n * g.cout * g.pixels(), static_cast<Eigen::Index>(g.cout),
                   static_cast<Eigen::Index>(g.pixels()));
    omat.noalias() = wmat * cmat;
    if (bias.defined())
      for (std::size_t c = 0; c < g.cout; ++c) omat.row(static_cast<Eigen::Index>(c)).array() += bias[c];
  }

  if (wants_grad(tape, input, weight, bias)) {
    out.set_requires_grad(true);
    tape->record([input, weight, bias, out, g, opts]() mutable {
      if (!out.has_grad()) return;
      const auto dout = out.grad();
      std::vector<T> colbuf(g.patch() * g.pixels());
      ConstMapMat<T> wmat(weight.values().data(), static_cast<Eigen::Index>(g.cout),
                          static_cast<Eigen::Index>(g.patch()));
      for (std::size_t n = 0; n < g.n; ++n) {
        ConstMapMat<T> gmat(dout.data() + n * g.cout * g.pixels(), static_cast<Eigen::Index>(g.cout),
                            static_cast<Eigen::Index>(g.pixels()));
        if (weight.requires_grad()) {
          im2col(input.values().data() + n * g.cin * g.h * g.w, g, opts, colbuf.data());
          ConstMapMat<T> cmat(colbuf.data(), static_cast<Eigen::Index>(g.patch()),
                              static_cast<Eigen::Index>(g.pixels()));
          MapMat<T> dw(weight.grad_buffer().data(), static_cast<Eigen::Index>(g.cout),
                       static_cast<Eigen::Index>(g.patch()));
          dw.noalias() += gmat * cmat.transpose();
        }
        if (bias.defined() && bias.requires_grad()) {
          auto db = bias.grad_buffer();
          for (std::size_t c = 0; c < g.cout; ++c) db[c] += gmat.row(static_cast<Eigen::Index>(c)).sum();
        }
        if (input.requires_grad()) {
          MapMat<T> dcol(colbuf.data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.pixels()));
          dcol.noalias() = wmat.transpose() * gmat;
          col2im(colbuf.data(), g, opts, input.grad_buffer().data() + n * g.cin * g.h * g.w);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> pointwise_conv(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 4 || weight.dim(2) != 1 || weight.dim(3) != 1)
    throw ShapeError("pointwise_conv: weight must be Cout x Cin x 1 x 1");
  return conv2d(tape, input, weight, bias, Conv2dOptions{});
}

template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& running, bool training, T momentum, T eps) {
  require_rank4(input.shape(), "batch_norm");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (gamma.numel() != c || beta.numel() != c || running.mean.size() != c || running.var.size() != c)
    throw ShapeError("batch_norm: parameter length must equal channel count " + std::to_string(c));
  const std::size_t count = n * hw;

  Tensor<T> out(input.shape());
  std::vector<T> xhat(input.numel());
  std::vector<T> invstd(c);
  const auto x = input.values();
  auto y = out.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mean, var;
    if (training) {
      double s = 0, ss = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) s += x[(b * c + ch) * hw + i];
      const double m = s / static_cast<double>(count);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = x[(b * c + ch) * hw + i] - m;
          ss += d * d;
        }
      mean = static_cast<T>(m);
      var = static_cast<T>(ss / static_cast<double>(count));
      const T unbiased = count > 1 ? static_cast<T>(ss / static_cast<double>(count - 1)) : var;
      running.mean[ch] = (T{1} - momentum) * running.mean[ch] + momentum * mean;
      running.var[ch] = (T{1} - momentum) * running.var[ch] + momentum * unbiased;
    } else {
      mean = running.mean[ch];
      var = running.var[ch];
    }
    invstd[ch] = T{1} / std::sqrt(var + eps);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t k = (b * c + ch) * hw + i;
        xhat[k] = (x[k] - mean) * invstd[ch];
        y[k] = gamma[ch] * xhat[k] + beta[ch];
      }
  }

  if (wants_grad(tape, input, gamma, beta)) {
    out.set_requires_grad(true);
    tape->record([input, gamma, beta, out, xhat = std::move(xhat), invstd = std::move(invstd), n, c, hw, count,
                  training]() mutable {
      if (!out.has_grad()) return;
      const auto dy = out.grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        T sum_dy{0}, sum_dy_xhat{0};
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t i = 0; i < hw; ++i) {
            const std::size_t k = (b * c + ch) * hw + i;
            sum_dy += dy[k];
            sum_dy_xhat += dy[k] * xhat[k];
          }
        if (gamma.requires_grad()) gamma.grad_buffer()[ch] += sum_dy_xhat;
        if (beta.requires_grad()) beta.grad_buffer()[ch] += sum_dy;
        if (!input.requires_grad()) continue;
        auto dx = input.grad_buffer();
        const T g = gamma[ch];
        if (training) {
          const T inv_count = T{1} / static_cast<T>(count);
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t k = (b * c + ch) * hw + i;
              dx[k] += g * invstd[ch] * (dy[k] - inv_count * sum_dy - xhat[k] * inv_count * sum_dy_xhat);
            }
        } else {
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t k = (b * c + ch) * hw + i;
              dx[k] += g * invstd[ch] * dy[k];
            }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> leaky_relu(Tape<T>* tape, const Tensor<T>& input, T slope) {
  Tensor<T> out(input.shape());
  const auto x = input.values();
  auto y = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] >= T{0} ? x[i] : slope * x[i];
  if (wants_grad(tape, input)) {
    out.set_requires_grad(true);
    tape->record([input, out, slope]() mutable {
      if (!out.has_grad()) return;
      const auto dy = out.grad();
      const auto x = input.values();
      auto dx = input.grad_buffer();
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += x[i] >= T{0} ? dy[i] : slope * dy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& input) {
  return leaky_relu(tape, input, T{0});
}

template <typename T>
Tensor<T> upsample_bilinear(Tape<T>* tape, const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
  require_rank4(input.shape(), "upsample_bilinear");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (out_h == 0 || out_w == 0) throw ShapeError("upsample_bilinear: empty output size");

  struct Tap {
    std::size_t i0, i1;
    T l1;
  };
  const auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double src = std::max(0.0, (static_cast<double>(o) + 0.5) * ratio - 0.5);
      const auto i0 = std::min(static_cast<std::size_t>(src), in - 1);
      const auto i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, static_cast<T>(src - static_cast<double>(i0))};
    }
    return t;
  };
  auto ty = taps(h, out_h);
  auto tx = taps(w, out_w);

  Tensor<T> out({n, c, out_h, out_w});
  const auto x = input.values();
  auto y = out.values();
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = y.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const T top = (T{1} - b.l1) * src[a.i0 * w + b.i0] + b.l1 * src[a.i0 * w + b.i1];
        const T bot = (T{1} - b.l1) * src[a.i1 * w + b.i0] + b.l1 * src[a.i1 * w + b.i1];
        dst[oy * out_w + ox] = (T{1} - a.l1) * top + a.l1 * bot;
      }
    }
  }

  if (wants_grad(tape, input)) {
    out.set_requires_grad(true);
    tape->record([input, out, ty = std::move(ty), tx = std::move(tx), n, c, h, w, out_h, out_w]() mutable {
      if (!out.has_grad()) return;
      const auto dy = out.grad();
      auto dx = input.grad_buffer();
      for (std::size_t p = 0; p < n * c; ++p) {
        T* dst = dx.data() + p * h * w;
        const T* src = dy.data() + p * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto& a = ty[oy];
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto& b = tx[ox];
            const T g = src[oy * out_w + ox];
            dst[a.i0 * w + b.i0] += (T{1} - a.l1) * (T{1} - b.l1) * g;
            dst[a.i0 * w + b.i1] += (T{1} - a.l1) * b.l1 * g;
            dst[a.i1 * w + b.i0] += a.l1 * (T{1} - b.l1) * g;
            dst[a.i1 * w + b.i1] += a.l1 * b.l1 * g;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const std::vector<Tensor<T>>& inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  for (const auto& t : inputs) require_rank4(t.shape(), "concat_channels");
  const std::size_t n = inputs[0].dim(0), h = inputs[0].dim(2), w = inputs[0].dim(3);
  std::size_t total_c = 0;
  for (const auto& t : inputs) {
    if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w)
      throw ShapeError("concat_channels: mismatched shapes " + shape_string(inputs[0].shape()) + " vs " +
                       shape_string(t.shape()));
    total_c += t.dim(1);
  }
  Tensor<T> out({n, total_c, h, w});
  const std::size_t hw = h * w;
  std::size_t offset = 0;
  for (const auto& t : inputs) {
    const std::size_t c = t.dim(1);
    for (std::size_t b = 0; b < n; ++b)
      std::copy_n(t.values().data() + b * c * hw, c * hw, out.values().data() + (b * total_c + offset) * hw);
    offset += c;
  }

  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (tape != nullptr && any) {
    out.set_requires_grad(true);
    tape->record([inputs, out, n, total_c, hw]() mutable {
      if (!out.has_grad()) return;
      const auto dy = out.grad();
      std::size_t offset = 0;
      for (auto& t : inputs) {
        const std::size_t c = t.dim(1);
        if (t.requires_grad()) {
          auto dx = t.grad_buffer();
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < c * hw; ++i) dx[b * c * hw + i] += dy[(b * total_c + offset) * hw + i];
        }
        offset += c;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  if (wants_grad(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad()) accumulate<T>(a.grad_buffer(), out.grad());
      if (b.requires_grad()) accumulate<T>(b.grad_buffer(), out.grad());
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& input, T alpha) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) out[i] = alpha * input[i];
  if (wants_grad(tape, input)) {
    out.set_requires_grad(true);
    tape->record([input, out, alpha]() mutable {
      if (!out.has_grad()) return;
      const auto dy = out.grad();
      auto dx = input.grad_buffer();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += alpha * dy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& input) {
  T total{0};
  for (const T v : input.values()) total += v;
  auto out = Tensor<T>::scalar(total);
  if (wants_grad(tape, input)) {
    out.set_requires_grad(true);
    tape->record([input, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      for (auto& d : input.grad_buffer()) d += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> weighted_sum(Tape<T>* tape, const Tensor<T>& input, std::span<const T> weights) {
  if (weights.size() != input.numel()) throw ShapeError("weighted_sum: weight count mismatch");
  T total{0};
  for (std::size_t i = 0; i < weights.size(); ++i) total += weights[i] * input[i];
  auto out = Tensor<T>::scalar(total);
  if (wants_grad(tape, input)) {
    out.set_requires_grad(true);
    std::vector<T> wcopy(weights.begin(), weights.end());
    tape->record([input, out, wcopy = std::move(wcopy)]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      auto dx = input.grad_buffer();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * wcopy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> weighted_cross_entropy(Tape<T>* tape, const Tensor<T>& logits, std::span<const std::int32_t> targets,
                                 std::span<const T> class_weights, std::int32_t ignore_id) {
  require_rank4(logits.shape(), "weighted_cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  if (targets.size() != n * hw) throw ShapeError("weighted_cross_entropy: target count must be N*H*W");
  if (class_weights.size() != k) throw ShapeError("weighted_cross_entropy: need one weight per class");

  std::size_t valid = 0;
  for (const auto t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= k)
      throw LabelError("target class " + std::to_string(t) + " outside [0," + std::to_string(k) + ")");
    ++valid;
  }

  const auto z = logits.values();
  std::vector<T> probs(logits.numel(), T{0});
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p) {
      const auto t = targets[b * hw + p];
      if (t == ignore_id) continue;
      const std::size_t base = b * k * hw + p;
      T zmax = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < k; ++c) zmax = std::max(zmax, z[base + c * hw]);
      T denom{0};
      for (std::size_t c = 0; c < k; ++c) {
        probs[base + c * hw] = std::exp(z[base + c * hw] - zmax);
        denom += probs[base + c * hw];
      }
      for (std::size_t c = 0; c < k; ++c) probs[base + c * hw] /= denom;
      const T log_p = z[base + static_cast<std::size_t>(t) * hw] - zmax - std::log(denom);
      total += static_cast<double>(-class_weights[static_cast<std::size_t>(t)] * log_p);
    }
  const double norm = valid > 0 ? 1.0 / static_cast<double>(valid) : 0.0;
  auto out = Tensor<T>::scalar(static_cast<T>(total * norm));

  if (wants_grad(tape, logits)) {
    out.set_requires_grad(true);
    std::vector<std::int32_t> tcopy(targets.begin(), targets.end());
    std::vector<T> wcopy(class_weights.begin(), class_weights.end());
    tape->record([logits, out, probs = std::move(probs), tcopy = std::move(tcopy), wcopy = std::move(wcopy), n, k,
                  hw, norm, ignore_id]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0] * static_cast<T>(norm);
      auto dz = logits.grad_buffer();
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < hw; ++p) {
          const auto t = tcopy[b * hw + p];
          if (t == ignore_id) continue;
          const std::size_t base = b * k * hw + p;
          const T wt = wcopy[static_cast<std::size_t>(t)] * g;
          for (std::size_t c = 0; c < k; ++c) {
            const T indicator = c == static_cast<std::size_t>(t) ? T{1} : T{0};
            dz[base + c * hw] += wt * (probs[base + c * hw] - indicator);
          }
        }
    });
  }
  return out;
}

#define HALSIE_INSTANTIATE_OPS(T)                                                                                  \
  template Tensor<T> conv2d(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Conv2dOptions&); \
  template Tensor<T> pointwise_conv(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> batch_norm(Tape<T>*, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormStats<T>&, \
                                bool, T, T);                                                                       \
  template Tensor<T> leaky_relu(Tape<T>*, const Tensor<T>&, T);                                                    \
  template Tensor<T> relu(Tape<T>*, const Tensor<T>&);                                                             \
  template Tensor<T> upsample_bilinear(Tape<T>*, const Tensor<T>&, std::size_t, std::size_t);                      \
  template Tensor<T> concat_channels(Tape<T>*, const std::vector<Tensor<T>>&);                                     \
  template Tensor<T> add(Tape<T>*, const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> scale(Tape<T>*, const Tensor<T>&, T);                                                         \
  template Tensor<T> sum(Tape<T>*, const Tensor<T>&);                                                              \
  template Tensor<T> weighted_sum(Tape<T>*, const Tensor<T>&, std::span<const T>);                                 \
  template Tensor<T> weighted_cross_entropy(Tape<T>*, const Tensor<T>&, std::span<const std::int32_t>,             \
                                            std::span<const T>, std::int32_t);

HALSIE_INSTANTIATE_OPS(float)
HALSIE_INSTANTIATE_OPS(double)

}  // namespace halsie::ad
