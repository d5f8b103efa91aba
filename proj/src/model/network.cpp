#include <algorithm>
#include <cmath>

#include "halsie/errors.hpp"
#include "halsie/model.hpp"

namespace halsie::model {
namespace {

template <typename T>
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  // He-uniform weights, bias U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Conv<T> conv(std::string name, std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw,
               ad::Conv2dOptions opts, bool with_bias) {
    Conv<T> c;
    c.name = std::move(name);
    c.opts = opts;
    const double fan_in = static_cast<double>(cin * kh * kw);
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> wdist(-bound, bound);
    std::vector<T> w(cout * cin * kh * kw);
    for (auto& v : w) v = static_cast<T>(wdist(rng_));
    c.weight = ad::Tensor<T>::from({cout, cin, kh, kw}, std::move(w), true);
    if (with_bias) {
      const double bb = 1.0 / std::sqrt(fan_in);
      std::uniform_real_distribution<double> bdist(-bb, bb);
      std::vector<T> b(cout);
      for (auto& v : b) v = static_cast<T>(bdist(rng_));
      c.bias = ad::Tensor<T>::from({cout}, std::move(b), true);
    }
    return c;
  }

  static BatchNorm<T> bn(std::string name, std::size_t channels) {
    return {std::move(name), ad::Tensor<T>({channels}, T{1}, true), ad::Tensor<T>({channels}, T{0}, true),
            ad::BatchNormStats<T>(channels)};
  }

 private:
  std::mt19937_64 rng_;
};

double nonzero_density(std::span<const float> v) {
  std::size_t nz = 0;
  for (float x : v) nz += (x != 0.0f);
  return v.empty() ? 0.0 : static_cast<double>(nz) / static_cast<double>(v.size());
}
double nonzero_density(std::span<const double> v) {
  std::size_t nz = 0;
  for (double x : v) nz += (x != 0.0);
  return v.empty() ? 0.0 : static_cast<double>(nz) / static_cast<double>(v.size());
}

template <typename T>
double mean_of(std::span<const T> v) {
  double s = 0;
  for (T x : v) s += static_cast<double>(x);
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

template <typename T>
ad::Tensor<T> conv_bn_act(ad::Tape<T>* tape, ConvBnAct<T>& block, const ad::Tensor<T>& x, bool training, T slope) {
  auto y = block.conv(tape, x);
  y = ad::batch_norm(tape, y, block.bn.gamma, block.bn.beta, block.bn.stats, training);
  return slope == T{0} ? ad::relu(tape, y) : ad::leaky_relu(tape, y, slope);
}


template <typename T>
void check_geometry(const ad::Tensor<T>& t, std::size_t c, std::size_t h, std::size_t w, const char* what) {
  if (!t.defined()) throw ShapeError(std::string(what) + " input missing");
  if (t.rank() != 4 || t.dim(1) != c || t.dim(2) != h || t.dim(3) != w)
    throw ShapeError(std::string(what) + " has shape " + ad::shape_string(t.shape()) + ", expected N x " +
                     std::to_string(c) + " x " + std::to_string(h) + " x " + std::to_string(w));
}

}  // namespace

template <typename T>
HalsieModel<T>::HalsieModel(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Initializer<T> init(seed);
  const auto down = ad::Conv2dOptions::strided(2, 1);

  const auto add_tfe = [&](Source src, std::size_t in_channels) {
    TemporalEncoder<T> enc;
    enc.name = "tfe" + std::to_string(tfes_.size());
    std::size_t cin = in_channels;
    for (std::size_t s = 0; s < spec_.stages; ++s) {
      const auto cout = spec_.stage_channels(s);
      enc.convs.push_back(init.conv(enc.name + ".stage" + std::to_string(s) + ".conv", cin, cout, 3, 3, down, true));
      enc.lifs.push_back(lif::LifParams<T>::make(static_cast<T>(spec_.init_threshold), static_cast<T>(spec_.init_leak)));
      cin = cout;
    }
    tfes_.push_back(std::move(enc));
    tfe_sources_.push_back(src);
  };
  const auto add_sfe = [&](Source src, std::size_t in_channels) {
    SpatialEncoder<T> enc;
    enc.name = "sfe" + std::to_string(sfes_.size());
    std::size_t cin = in_channels;
    for (std::size_t s = 0; s < spec_.stages; ++s) {
      const auto cout = spec_.stage_channels(s);
      const auto base = enc.name + ".stage" + std::to_string(s);
      enc.blocks.push_back({init.conv(base + ".conv", cin, cout, 3, 3, down, false), init.bn(base + ".bn", cout)});
      cin = cout;
    }
    sfes_.push_back(std::move(enc));
    sfe_sources_.push_back(src);
  };

  const auto events_stacked = 2 * spec_.bins;
  switch (spec_.setting) {
    case Setting::A: add_sfe(Source::Frames, spec_.frame_channels); break;
    case Setting::B: add_sfe(Source::StackedEvents, events_stacked); break;
    case Setting::C: add_tfe(Source::Events, 2); break;
    case Setting::D:
      add_sfe(Source::Frames, spec_.frame_channels);
      add_sfe(Source::StackedEvents, events_stacked);
      break;
    case Setting::E:
      add_tfe(Source::Events, 2);
      add_tfe(Source::Frames, spec_.frame_channels);
      break;
    case Setting::H:
      add_tfe(Source::Events, 2);
      add_sfe(Source::Frames, spec_.frame_channels);
      break;
  }

  const auto wm = spec_.mixer_width;
  std::size_t cin = spec_.stage_channels(spec_.stages - 1);
  for (std::size_t g = 0; g < spec_.mixer_layout.size(); ++g) {
    const auto& group = spec_.mixer_layout[g];
    for (std::size_t r = 0; r < group.size(); ++r) {
      const auto base = "mmix.group" + std::to_string(g) + ".cell" + std::to_string(r);
      const auto opts = ad::Conv2dOptions::same(3, 3, group[r].h, group[r].w);
      mixer_cells_.push_back({init.conv(base + ".conv", cin, wm, 3, 3, opts, false), init.bn(base + ".bn", wm)});
    }
    if (group.size() > 1)
      mixer_reducers_.push_back(init.conv("mmix.group" + std::to_string(g) + ".reduce", group.size() * wm, wm, 1, 1,
                                          ad::Conv2dOptions{}, true));
    cin = wm;
  }
  high_mix_ = init.conv("mmix.high_mix", wm, wm, 1, 1, ad::Conv2dOptions{}, true);
  low_mix_ = init.conv("mmix.low_mix", spec_.stage_channels(0), spec_.low_width, 1, 1, ad::Conv2dOptions{}, true);

  const auto same3 = ad::Conv2dOptions::same(3, 3);
  head_blocks_.push_back(
      {init.conv("head.block0.conv", wm + spec_.low_width, spec_.head_width, 3, 3, same3, false),
       init.bn("head.block0.bn", spec_.head_width)});
  head_blocks_.push_back({init.conv("head.block1.conv", spec_.head_width, spec_.head_width, 3, 3, same3, false),
                          init.bn("head.block1.bn", spec_.head_width)});
  classifier_ = init.conv("head.classifier", spec_.head_width, spec_.classes, 1, 1, ad::Conv2dOptions{}, true);
}

template <typename T>
EncoderOutput<T> HalsieModel<T>::sfe_forward(ad::Tape<T>* tape, SpatialEncoder<T>& enc, const ad::Tensor<T>& x,
                                             bool training) {
  EncoderOutput<T> out;
  ad::Tensor<T> h = x;
  for (std::size_t s = 0; s < enc.blocks.size(); ++s) {
    h = conv_bn_act(tape, enc.blocks[s], h, training, static_cast<T>(spec_.leaky_slope));
    if (s == 0) out.low = h;
  }
  out.high = h;
  return out;
}

template <typename T>
EncoderOutput<T> HalsieModel<T>::tfe_forward(ad::Tape<T>* tape, const TemporalEncoder<T>& enc,
                                             std::span<const ad::Tensor<T>> drives, TemporalActivity* activity) const {
  if (drives.empty()) throw ShapeError("temporal encoder needs at least one timestep");
  const std::size_t stages = enc.convs.size();
  const lif::SurrogateConfig cfg{spec_.surrogate_gamma, spec_.spike_mode};
  std::vector<lif::LifState<T>> states(stages);
  std::vector<double> in_rate(stages, 0.0), out_rate(stages, 0.0);

  for (const auto& drive : drives) {
    ad::Tensor<T> x = drive;
    for (std::size_t s = 0; s < stages; ++s) {
      in_rate[s] += s == 0 ? nonzero_density(x.values()) : mean_of<T>(x.values());
      const auto pre = enc.convs[s](tape, x);
      x = lif::lif_step(tape, states[s], pre, enc.lifs[s], cfg);
      out_rate[s] += mean_of<T>(x.values());
    }
  }
  if (activity) {
    const auto steps = static_cast<double>(drives.size());
    activity->input_rate.resize(stages);
    activity->output_rate.resize(stages);
    for (std::size_t s = 0; s < stages; ++s) {
      activity->input_rate[s] = in_rate[s] / steps;
      activity->output_rate[s] = out_rate[s] / steps;
    }
  }
  // Temporal accumulator: membrane potential after the final bin.
  return {states.front().u, states.back().u};
}

template <typename T>
ad::Tensor<T> HalsieModel<T>::mmix_forward(ad::Tape<T>* tape, const ad::Tensor<T>& u_high, const ad::Tensor<T>& u_low,
                                           bool training) {
  if (u_high.rank() != 4 || u_low.rank() != 4 || u_high.dim(0) != u_low.dim(0))
    throw ShapeError("mmix: incompatible high/low maps " + ad::shape_string(u_high.shape()) + " and " +
                     ad::shape_string(u_low.shape()));
  const auto relu_slope = T{0};
  ad::Tensor<T> h = u_high;
  std::size_t cell = 0, reducer = 0;
  for (const auto& group : spec_.mixer_layout) {
    if (group.size() == 1) {
      h = conv_bn_act(tape, mixer_cells_[cell++], h, training, relu_slope);
      continue;
    }
    std::vector<ad::Tensor<T>> branches;
    for (std::size_t r = 0; r < group.size(); ++r)
      branches.push_back(conv_bn_act(tape, mixer_cells_[cell++], h, training, relu_slope));
    h = mixer_reducers_[reducer++](tape, ad::concat_channels(tape, branches));
  }
  h = ad::upsample_bilinear(tape, h, u_low.dim(2), u_low.dim(3));
  auto high = high_mix_(tape, h);
  auto low = low_mix_(tape, u_low);
  return ad::concat_channels(tape, std::vector<ad::Tensor<T>>{high, low});
}

template <typename T>
ad::Tensor<T> HalsieModel<T>::head_forward(ad::Tape<T>* tape, const ad::Tensor<T>& u_mix, bool training) {
  ad::Tensor<T> h = u_mix;
  for (auto& block : head_blocks_) h = conv_bn_act(tape, block, h, training, T{0});
  h = classifier_(tape, h);
  return ad::upsample_bilinear(tape, h, spec_.height, spec_.width);
}

template <typename T>
ForwardResult<T> HalsieModel<T>::forward(ad::Tape<T>* tape, const ModelInput<T>& input, bool training) {
  const bool needs_frame = std::find(sfe_sources_.begin(), sfe_sources_.end(), Source::Frames) != sfe_sources_.end() ||
                           std::find(tfe_sources_.begin(), tfe_sources_.end(), Source::Frames) != tfe_sources_.end();
  const bool needs_events = !(spec_.setting == Setting::A);
  if (needs_frame) check_geometry(input.frame, spec_.frame_channels, spec_.height, spec_.width, "frame");
  if (needs_events) {
    if (input.bins.size() != spec_.bins)
      throw ShapeError("event volume has " + std::to_string(input.bins.size()) + " bins, spec expects " +
                       std::to_string(spec_.bins));
    for (const auto& b : input.bins) check_geometry(b, 2, spec_.height, spec_.width, "event bin");
  }

  ForwardResult<T> result;
  std::vector<EncoderOutput<T>> parts;
  for (std::size_t i = 0; i < tfes_.size(); ++i) {
    TemporalActivity act;
    if (tfe_sources_[i] == Source::Events) {
      parts.push_back(tfe_forward(tape, tfes_[i], input.bins, &act));
    } else {
      const std::vector<ad::Tensor<T>> repeated(spec_.bins, input.frame);
      parts.push_back(tfe_forward(tape, tfes_[i], repeated, &act));
    }
    result.activity.push_back(std::move(act));
  }
  for (std::size_t i = 0; i < sfes_.size(); ++i) {
    const auto x = sfe_sources_[i] == Source::Frames ? input.frame : stack_bins<T>(input.bins);
    parts.push_back(sfe_forward(tape, sfes_[i], x, training));
  }

  // Mixing is element-wise addition of paired maps.
  EncoderOutput<T> fused = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    fused.low = ad::add(tape, fused.low, parts[i].low);
    fused.high = ad::add(tape, fused.high, parts[i].high);
  }
  result.fused = fused;
  result.mixed = mmix_forward(tape, fused.high, fused.low, training);
  result.logits = head_forward(tape, result.mixed, training);
  return result;
}

template <typename T>
std::vector<StateEntry<T>> HalsieModel<T>::state() {
  std::vector<StateEntry<T>> out;
  const auto tensor = [&](const std::string& name, ad::Tensor<T>& t) {
    out.push_back({name, t.shape(), t.values(), true});
  };
  const auto conv = [&](Conv<T>& c) {
    tensor(c.name + ".weight", c.weight);
    if (c.bias.defined()) tensor(c.name + ".bias", c.bias);
  };
  const auto block = [&](ConvBnAct<T>& b) {
    conv(b.conv);
    tensor(b.bn.name + ".gamma", b.bn.gamma);
    tensor(b.bn.name + ".beta", b.bn.beta);
    out.push_back({b.bn.name + ".running_mean", {b.bn.stats.mean.size()}, b.bn.stats.mean, false});
    out.push_back({b.bn.name + ".running_var", {b.bn.stats.var.size()}, b.bn.stats.var, false});
  };
  for (auto& enc : tfes_)
    for (std::size_t s = 0; s < enc.convs.size(); ++s) {
      conv(enc.convs[s]);
      const auto base = enc.name + ".stage" + std::to_string(s) + ".lif";
      tensor(base + ".v_th", enc.lifs[s].v_th);
      tensor(base + ".leak", enc.lifs[s].leak);
    }
  for (auto& enc : sfes_)
    for (auto& b : enc.blocks) block(b);
  for (auto& b : mixer_cells_) block(b);
  for (auto& r : mixer_reducers_) conv(r);
  conv(high_mix_);
  conv(low_mix_);
  for (auto& b : head_blocks_) block(b);
  conv(classifier_);
  return out;
}

template <typename T>
std::vector<ad::Tensor<T>> HalsieModel<T>::parameters() const {
  std::vector<ad::Tensor<T>> out;
  const auto conv = [&](const Conv<T>& c) {
    out.push_back(c.weight);
    if (c.bias.defined()) out.push_back(c.bias);
  };
  const auto block = [&](const ConvBnAct<T>& b) {
    conv(b.conv);
    out.push_back(b.bn.gamma);
    out.push_back(b.bn.beta);
  };
  for (const auto& enc : tfes_)
    for (std::size_t s = 0; s < enc.convs.size(); ++s) {
      conv(enc.convs[s]);
      out.push_back(enc.lifs[s].v_th);
      out.push_back(enc.lifs[s].leak);
    }
  for (const auto& enc : sfes_)
    for (const auto& b : enc.blocks) block(b);
  for (const auto& b : mixer_cells_) block(b);
  for (const auto& r : mixer_reducers_) conv(r);
  conv(high_mix_);
  conv(low_mix_);
  for (const auto& b : head_blocks_) block(b);
  conv(classifier_);
  return out;
}

template <typename T>
std::size_t HalsieModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

template <typename T>
void HalsieModel<T>::clamp_lif() {
  for (auto& enc : tfes_)
    for (auto& p : enc.lifs) p.clamp();
}

template <typename T>
std::vector<lif::LifParams<T>> HalsieModel<T>::lif_params() const {
  std::vector<lif::LifParams<T>> out;
  for (const auto& enc : tfes_) out.insert(out.end(), enc.lifs.begin(), enc.lifs.end());
  return out;
}

template <typename T>
std::vector<ConvLayerInfo> HalsieModel<T>::conv_layers() const {
  std::vector<ConvLayerInfo> out;
  const auto info = [&](const Conv<T>& c, std::size_t h, std::size_t w, bool spiking, std::size_t enc,
                        std::size_t stage) {
    ConvLayerInfo li;
    li.name = c.name;
    li.spiking = spiking;
    li.encoder_index = enc;
    li.stage = stage;
    li.out_channels = c.weight.dim(0);
    li.in_channels = c.weight.dim(1);
    li.kernel_h = c.weight.dim(2);
    li.kernel_w = c.weight.dim(3);
    li.out_h = h;
    li.out_w = w;
    out.push_back(li);
  };
  for (std::size_t e = 0; e < tfes_.size(); ++e)
    for (std::size_t s = 0; s < tfes_[e].convs.size(); ++s)
      info(tfes_[e].convs[s], spec_.stage_height(s), spec_.stage_width(s), true, e, s);
  for (const auto& enc : sfes_)
    for (std::size_t s = 0; s < enc.blocks.size(); ++s)
      info(enc.blocks[s].conv, spec_.stage_height(s), spec_.stage_width(s), false, 0, s);
  const auto hh = spec_.stage_height(spec_.stages - 1), hw = spec_.stage_width(spec_.stages - 1);
  const auto lh = spec_.stage_height(0), lw = spec_.stage_width(0);
  for (const auto& b : mixer_cells_) info(b.conv, hh, hw, false, 0, 0);
  for (const auto& r : mixer_reducers_) info(r, hh, hw, false, 0, 0);
  info(high_mix_, lh, lw, false, 0, 0);
  info(low_mix_, lh, lw, false, 0, 0);
  for (const auto& b : head_blocks_) info(b.conv, lh, lw, false, 0, 0);
  info(classifier_, lh, lw, false, 0, 0);
  return out;
}

std::size_t count_params(const NetworkSpec& spec) { return HalsieModel<float>(spec, 0).parameter_count(); }

template <typename T>
ad::Tensor<T> stack_bins(std::span<const ad::Tensor<T>> bins) {
  if (bins.empty()) throw ShapeError("stack_bins: no bins");
  const std::size_t n = bins[0].dim(0), c = bins[0].dim(1), h = bins[0].dim(2), w = bins[0].dim(3);
  const std::size_t per = c * h * w;
  ad::Tensor<T> out({n, c * bins.size(), h, w});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t b = 0; b < bins.size(); ++b) {
      if (bins[b].shape() != bins[0].shape()) throw ShapeError("stack_bins: bins differ in shape");
      std::copy_n(bins[b].values().data() + s * per, per, out.values().data() + (s * bins.size() + b) * per);
    }
  return out;
}

template <typename T>
std::vector<std::uint8_t> argmax_classes(const ad::Tensor<T>& logits) {
  if (logits.rank() != 4) throw ShapeError("argmax_classes expects N x K x H x W logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  std::vector<std::uint8_t> out(n * hw);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p) {
      std::size_t best = 0;
      T best_v = logits[b * k * hw + p];
      for (std::size_t c = 1; c < k; ++c) {
        const T v = logits[(b * k + c) * hw + p];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out[b * hw + p] = static_cast<std::uint8_t>(best);
    }
  return out;
}

template class HalsieModel<float>;
template class HalsieModel<double>;
template ad::Tensor<float> stack_bins(std::span<const ad::Tensor<float>>);
template ad::Tensor<double> stack_bins(std::span<const ad::Tensor<double>>);
template std::vector<std::uint8_t> argmax_classes(const ad::Tensor<float>&);
template std::vector<std::uint8_t> argmax_classes(const ad::Tensor<double>&);

}  // namespace halsie::model
