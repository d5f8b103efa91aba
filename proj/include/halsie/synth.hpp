#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "halsie/evio.hpp"
#include "halsie/image.hpp"
#include "halsie/kv_config.hpp"

namespace halsie::evio {

// Moving-rectangles scene. Objects get a class id in [1, classes); odd ids move
// at `velocity_px` per frame along an axis direction (bouncing off the
// borders), even ids stay put. Frames, events and labels are rendered from the
// same object state, so only the event stream tells moving from static.
struct SceneConfig {
  std::int32_t width = 64;
  std::int32_t height = 64;
  std::int32_t num_objects = 3;
  std::int32_t classes = 3;
  double velocity_px = 2.0;
  double noise_rate_hz = 0.0;  // per pixel
  std::int32_t frames = 5;
  std::int64_t frame_dt_us = 50'000;
  std::uint64_t seed = 1;
  std::int32_t min_size = 10;
  std::int32_t max_size = 24;

  static SceneConfig from_config(const KeyValueConfig& cfg);
  static SceneConfig load(const std::string& path);
  void validate() const;
};

struct SceneSample {
  GrayImage frame;      // rendered at the end of the event window
  EventWindow events;   // changes since the previous frame
  GrayImage label;      // class id per pixel, 0 = background
};

std::vector<SceneSample> synth_scene(const SceneConfig& config, std::uint64_t seed);

}  // namespace halsie::evio
