#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "halsie/dataset.hpp"
#include "halsie/kv_config.hpp"
#include "halsie/model.hpp"

namespace halsie::train {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  double lr = 8e-4;
  double lr_decay = 0.7;
  std::size_t lr_step = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 10.0;
  bool augment = true;
  double flip_prob = 0.5;
  std::vector<double> class_weights;  // empty = inverse frequency
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  static TrainConfig from_config(const KeyValueConfig& cfg);
  static TrainConfig load(const std::string& path);
  void validate() const;
};

// lr0 * decay^floor(epoch / step)
double lr_at(std::size_t epoch, const TrainConfig& cfg);

class Adam {
 public:
  Adam(std::vector<ad::Tensor<float>> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  // Parameters without a gradient buffer take a zero-gradient step.
  void step(double lr);
  std::size_t steps() const { return t_; }

 private:
  std::vector<ad::Tensor<float>> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// Rescales all gradients when their joint L2 norm exceeds max_norm; returns
// the norm before clipping.
double clip_grad_norm(std::span<const ad::Tensor<float>> params, double max_norm);

// Applied as flip, then rotation by 90*quarter_turns degrees
// counter-clockwise, then a crop.
struct GeometricTransform {
  bool flip = false;
  int quarter_turns = 0;
  std::int32_t x0 = 0, y0 = 0;
  std::int32_t crop_w = 0, crop_h = 0;  // 0 keeps the full extent
};

GeometricTransform draw_transform(std::mt19937_64& rng, std::int32_t width, std::int32_t height,
                                  std::int32_t crop_w, std::int32_t crop_h, double flip_prob);
Sample apply_transform(const Sample& s, const GeometricTransform& t);
Sample augment(const Sample& s, std::mt19937_64& rng, std::int32_t crop_w, std::int32_t crop_h,
               double flip_prob = 0.5);
Sample center_crop(const Sample& s, std::int32_t crop_w, std::int32_t crop_h);

// Inverse pixel frequency over labeled pixels, normalized to mean 1 over the
// classes that occur; absent classes get 0.
std::vector<double> inverse_frequency_weights(const Dataset& data, std::size_t classes);

struct MetricsReport {
  std::size_t classes = 0;
  std::vector<std::uint64_t> confusion;  // row = ground truth, column = prediction
  double accuracy = 0;
  std::vector<double> iou;  // NaN where the class is absent from the ground truth
  double miou = 0;

  std::uint64_t at(std::size_t gt, std::size_t pred) const { return confusion[gt * classes + pred]; }
};

MetricsReport metrics_from_confusion(std::vector<std::uint64_t> confusion, std::size_t classes);
// Accumulates one prediction/label pair into a K x K matrix. Ground-truth
// pixels equal to kIgnoreLabel are skipped.
void accumulate_confusion(std::vector<std::uint64_t>& confusion, std::size_t classes,
                          std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);
void write_metrics_csv(std::ostream& out, const MetricsReport& report);

MetricsReport evaluate(model::HalsieModel<float>& net, const Dataset& data, std::size_t batch_size = 8,
                       std::size_t threads = 1);
std::vector<GrayImage> predict(model::HalsieModel<float>& net, const Dataset& data, std::size_t batch_size = 8);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_accuracy = 0;
  double val_miou = 0;
};

void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const EpochLog& row);

struct TrainResult {
  std::vector<EpochLog> log;
  std::vector<double> class_weights;
};

// Samples larger than the network geometry are cropped to it (randomly in
// training, centered for validation). `log` receives one CSV row per epoch.
TrainResult train(model::HalsieModel<float>& net, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg, std::ostream* log = nullptr);

// HALSIE_THREADS, default 1.
std::size_t env_threads();

}  // namespace halsie::train
