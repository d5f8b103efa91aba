#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "halsie/evio.hpp"
#include "halsie/image.hpp"
#include "halsie/model.hpp"
#include "halsie/synth.hpp"

namespace halsie::train {

inline constexpr std::uint8_t kIgnoreLabel = 255;

struct Sample {
  GrayImage frame;
  evio::EventVolume volume;
  GrayImage label;

  std::int32_t width() const { return frame.width; }
  std::int32_t height() const { return frame.height; }
};

using Dataset = std::vector<Sample>;

Sample make_sample(const evio::SceneSample& scene, std::size_t bins);

// `scenes` scenes seeded seed, seed+1, ...; every scene contributes its
// `frames` samples in order.
Dataset synth_dataset(const evio::SceneConfig& config, std::size_t scenes, std::size_t bins);

// Directory layout: sample_NNNNN_frame.pgm, sample_NNNNN_events.csv,
// sample_NNNNN_label.pgm.
std::string sample_stem(const std::string& dir, std::size_t index);
void write_scene_sample(const std::string& dir, std::size_t index, const evio::SceneSample& scene);
// Loads every complete triple in index order; the label file is optional
// when `require_labels` is false.
Dataset load_dataset(const std::string& dir, std::size_t bins, bool require_labels = true);

struct Batch {
  model::ModelInput<float> input;
  std::vector<std::int32_t> targets;  // N*H*W, kIgnoreLabel kept as is
};

// Frames scaled to [0,1]; volumes as raw counts.
Batch make_batch(std::span<const Sample> samples);
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace halsie::train
