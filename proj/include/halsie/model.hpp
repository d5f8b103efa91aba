#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "halsie/autodiff/ops.hpp"
#include "halsie/autodiff/tensor.hpp"
#include "halsie/kv_config.hpp"
#include "halsie/lif.hpp"

namespace halsie::model {

// Modality/encoder variants: A = SFE on frames, B = SFE on events (bins as
// channels), C = TFE on events, D = SFE on both, E = TFE on both, H = TFE on
// events + SFE on frames.
enum class Setting { A, B, C, D, E, H };

Setting parse_setting(const std::string& id);
char setting_id(Setting s);

struct DilationRate {
  std::size_t h = 1;
  std::size_t w = 1;
  friend bool operator==(const DilationRate&, const DilationRate&) = default;
};

// Mixer cell groups in order. A group of one rate is a single cascaded cell;
// a larger group runs its cells in parallel, then concatenates and
// pointwise-mixes them back to the mixer width.
using MixerLayout = std::vector<std::vector<DilationRate>>;

// "1x6,[6x21,18x15,1x1],6x3"
MixerLayout parse_mixer_layout(const std::string& text);
std::string format_mixer_layout(const MixerLayout& layout);

struct NetworkSpec {
  std::size_t height = 192;
  std::size_t width = 192;
  std::size_t bins = 10;
  std::size_t stages = 4;
  std::size_t base_channels = 16;
  std::size_t classes = 6;
  std::size_t frame_channels = 1;
  std::size_t mixer_width = 176;
  std::size_t low_width = 48;
  std::size_t head_width = 64;
  MixerLayout mixer_layout = {{{1, 6}}, {{6, 21}, {18, 15}, {1, 1}}, {{6, 3}}};
  Setting setting = Setting::H;
  double leaky_slope = 0.01;
  double surrogate_gamma = 100.0;
  lif::SpikeMode spike_mode = lif::SpikeMode::Heaviside;
  double init_threshold = 1.0;
  double init_leak = 0.9;

  std::size_t stage_channels(std::size_t s) const { return base_channels << s; }
  // Spatial size after `s + 1` stride-2 stages: ceil(n / 2^(s+1)).
  std::size_t stage_height(std::size_t s) const;
  std::size_t stage_width(std::size_t s) const;

  void validate() const;
  static NetworkSpec from_config(const KeyValueConfig& cfg);
  static NetworkSpec load(const std::string& path);
  std::string to_text() const;
};

template <typename T>
struct Conv {
  std::string name;
  ad::Tensor<T> weight;
  ad::Tensor<T> bias;  // undefined when followed by batch-norm
  ad::Conv2dOptions opts;

  ad::Tensor<T> operator()(ad::Tape<T>* tape, const ad::Tensor<T>& x) const {
    return ad::conv2d(tape, x, weight, bias, opts);
  }
};

template <typename T>
struct BatchNorm {
  std::string name;
  ad::Tensor<T> gamma;
  ad::Tensor<T> beta;
  ad::BatchNormStats<T> stats;
};

// Conv -> BN -> activation.
template <typename T>
struct ConvBnAct {
  Conv<T> conv;
  BatchNorm<T> bn;
};

template <typename T>
struct EncoderOutput {
  ad::Tensor<T> low;   // stage 0
  ad::Tensor<T> high;  // stage S-1
};

// Spiking branch: per stage a stride-2 3x3 conv feeding a LIF layer.
template <typename T>
struct TemporalEncoder {
  std::string name;
  std::vector<Conv<T>> convs;
  std::vector<lif::LifParams<T>> lifs;
};

// Dense branch: per stage stride-2 3x3 conv -> BN -> LeakyReLU.
template <typename T>
struct SpatialEncoder {
  std::string name;
  std::vector<ConvBnAct<T>> blocks;
};

struct TemporalActivity {
  // input_rate[s]: mean activity arriving at stage s per neuron per timestep.
  // Stage 0 measures the non-zero density of its drive; later stages measure
  // the spikes of the stage before.
  std::vector<double> input_rate;
  std::vector<double> output_rate;
};

template <typename T>
struct ModelInput {
  ad::Tensor<T> frame;              // N x Cf x H x W, values in [0, 1]
  std::vector<ad::Tensor<T>> bins;  // B tensors of N x 2 x H x W
};

template <typename T>
struct ForwardResult {
  ad::Tensor<T> logits;
  ad::Tensor<T> mixed;  // u_mix
  EncoderOutput<T> fused;
  std::vector<TemporalActivity> activity;  // one per temporal encoder, in conv_layers() order
};

// Flat view of one stored tensor for serialization.
template <typename T>
struct StateEntry {
  std::string name;
  ad::Shape shape;
  std::span<T> data;
  bool learnable = true;
};

struct ConvLayerInfo {
  std::string name;
  bool spiking = false;
  std::size_t encoder_index = 0;  // which temporal encoder, when spiking
  std::size_t stage = 0;
  std::size_t in_channels = 0, out_channels = 0;
  std::size_t kernel_h = 0, kernel_w = 0;
  std::size_t out_h = 0, out_w = 0;
};

template <typename T>
class HalsieModel {
 public:
  explicit HalsieModel(NetworkSpec spec, std::uint64_t seed = 0);

  const NetworkSpec& spec() const { return spec_; }

  ForwardResult<T> forward(ad::Tape<T>* tape, const ModelInput<T>& input, bool training);

  EncoderOutput<T> sfe_forward(ad::Tape<T>* tape, SpatialEncoder<T>& enc, const ad::Tensor<T>& x, bool training);
  EncoderOutput<T> tfe_forward(ad::Tape<T>* tape, const TemporalEncoder<T>& enc,
                               std::span<const ad::Tensor<T>> drives, TemporalActivity* activity) const;
  ad::Tensor<T> mmix_forward(ad::Tape<T>* tape, const ad::Tensor<T>& u_high, const ad::Tensor<T>& u_low,
                             bool training);
  ad::Tensor<T> head_forward(ad::Tape<T>* tape, const ad::Tensor<T>& u_mix, bool training);

  std::vector<ad::Tensor<T>> parameters() const;
  std::vector<StateEntry<T>> state();
  std::size_t parameter_count() const;
  void clamp_lif();
  std::vector<lif::LifParams<T>> lif_params() const;
  std::vector<ConvLayerInfo> conv_layers() const;

  // Component access for tests and tooling.
  std::vector<TemporalEncoder<T>>& temporal_encoders() { return tfes_; }
  std::vector<SpatialEncoder<T>>& spatial_encoders() { return sfes_; }
  std::vector<ConvBnAct<T>>& mixer_cells() { return mixer_cells_; }
  std::vector<Conv<T>>& mixer_reducers() { return mixer_reducers_; }
  Conv<T>& high_mixer() { return high_mix_; }
  Conv<T>& low_mixer() { return low_mix_; }
  std::vector<ConvBnAct<T>>& head_blocks() { return head_blocks_; }
  Conv<T>& classifier() { return classifier_; }

 private:
  enum class Source { Frames, Events, StackedEvents };

  NetworkSpec spec_;
  std::vector<TemporalEncoder<T>> tfes_;
  std::vector<Source> tfe_sources_;
  std::vector<SpatialEncoder<T>> sfes_;
  std::vector<Source> sfe_sources_;
  std::vector<ConvBnAct<T>> mixer_cells_;  // flattened over groups
  std::vector<Conv<T>> mixer_reducers_;    // one per parallel group
  Conv<T> high_mix_;
  Conv<T> low_mix_;
  std::vector<ConvBnAct<T>> head_blocks_;
  Conv<T> classifier_;
};

// Exact learnable scalar count: conv weights and biases, BN gamma/beta and
// one threshold plus one leak per LIF layer.
std::size_t count_params(const NetworkSpec& spec);

// Stacks a sample's B bins into one 2B-channel tensor (bin-major).
template <typename T>
ad::Tensor<T> stack_bins(std::span<const ad::Tensor<T>> bins);

// Per-pixel argmax over N x K x H x W logits; the lowest class id wins ties.
template <typename T>
std::vector<std::uint8_t> argmax_classes(const ad::Tensor<T>& logits);

}  // namespace halsie::model
