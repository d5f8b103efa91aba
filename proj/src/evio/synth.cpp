#include "halsie/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "halsie/errors.hpp"

namespace halsie::evio {
namespace {

struct MovingRect {
  double x = 0, y = 0;    // top-left, pixels
  double vx = 0, vy = 0;  // pixels per frame
  std::int32_t w = 0, h = 0;
  std::uint8_t intensity = 0;
  std::uint8_t class_id = 0;
};

void advance(MovingRect& r, double fraction, std::int32_t width, std::int32_t height) {
  const double max_x = width - r.w;
  const double max_y = height - r.h;
  r.x += r.vx * fraction;
  r.y += r.vy * fraction;
  if (r.x < 0) { r.x = -r.x; r.vx = -r.vx; }
  if (r.x > max_x) { r.x = 2 * max_x - r.x; r.vx = -r.vx; }
  if (r.y < 0) { r.y = -r.y; r.vy = -r.vy; }
  if (r.y > max_y) { r.y = 2 * max_y - r.y; r.vy = -r.vy; }
  r.x = std::clamp(r.x, 0.0, max_x);
  r.y = std::clamp(r.y, 0.0, max_y);
}

void render(const std::vector<MovingRect>& objects, std::uint8_t background, GrayImage& frame, GrayImage* label) {
  std::fill(frame.pixels.begin(), frame.pixels.end(), background);
  if (label) std::fill(label->pixels.begin(), label->pixels.end(), 0);
  for (const auto& r : objects) {
    const auto x0 = static_cast<std::int32_t>(std::lround(r.x));
    const auto y0 = static_cast<std::int32_t>(std::lround(r.y));
    for (std::int32_t y = std::max(0, y0); y < std::min(frame.height, y0 + r.h); ++y)
      for (std::int32_t x = std::max(0, x0); x < std::min(frame.width, x0 + r.w); ++x) {
        frame.at(x, y) = r.intensity;
        if (label) label->at(x, y) = r.class_id;
      }
  }
}

}  // namespace

SceneConfig SceneConfig::from_config(const KeyValueConfig& cfg) {
  cfg.require_known({"width", "height", "num_objects", "classes", "velocity_px", "noise_rate_hz", "frames",
                     "frame_dt_us", "seed", "min_size", "max_size"});
  SceneConfig c;
  c.width = static_cast<std::int32_t>(cfg.get_int("width"));
  c.height = static_cast<std::int32_t>(cfg.get_int("height"));
  c.num_objects = static_cast<std::int32_t>(cfg.get_int("num_objects"));
  c.classes = static_cast<std::int32_t>(cfg.get_int("classes"));
  c.velocity_px = cfg.get_double("velocity_px");
  c.noise_rate_hz = cfg.get_double("noise_rate_hz");
  c.frames = static_cast<std::int32_t>(cfg.get_int("frames"));
  c.frame_dt_us = cfg.get_int("frame_dt_us");
  c.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  c.min_size = static_cast<std::int32_t>(cfg.get_int("min_size", c.min_size));
  c.max_size = static_cast<std::int32_t>(cfg.get_int("max_size", c.max_size));
  c.validate();
  return c;
}

SceneConfig SceneConfig::load(const std::string& path) { return from_config(KeyValueConfig::load(path)); }

void SceneConfig::validate() const {
  if (width <= 0 || height <= 0) throw ConfigError("scene geometry must have non-zero area");
  if (classes < 2 || classes > 255) throw ConfigError("classes must be in [2, 255]");
  if (num_objects < 0) throw ConfigError("num_objects must be >= 0");
  if (frames < 1) throw ConfigError("frames must be >= 1");
  if (frame_dt_us <= 0) throw ConfigError("frame_dt_us must be > 0");
  if (velocity_px < 0) throw ConfigError("velocity_px must be >= 0");
  if (noise_rate_hz < 0) throw ConfigError("noise_rate_hz must be >= 0");
  if (min_size < 1 || max_size < min_size) throw ConfigError("object sizes must satisfy 1 <= min_size <= max_size");
  if (max_size > width || max_size > height) throw ConfigError("max_size exceeds scene geometry");
}

std::vector<SceneSample> synth_scene(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const auto uniform_int = [&rng](std::int32_t lo, std::int32_t hi) {
    return std::uniform_int_distribution<std::int32_t>(lo, hi)(rng);
  };
  const auto uniform_real = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  const auto background = static_cast<std::uint8_t>(uniform_int(30, 70));
  std::vector<MovingRect> objects(static_cast<std::size_t>(config.num_objects));
  for (auto& r : objects) {
    r.w = uniform_int(config.min_size, config.max_size);
    r.h = uniform_int(config.min_size, config.max_size);
    r.x = uniform_int(0, config.width - r.w);
    r.y = uniform_int(0, config.height - r.h);
    r.intensity = static_cast<std::uint8_t>(uniform_int(140, 240));
    r.class_id = static_cast<std::uint8_t>(uniform_int(1, config.classes - 1));
    if (r.class_id % 2 == 1) {
      static constexpr int dx[4] = {1, -1, 0, 0};
      static constexpr int dy[4] = {0, 0, 1, -1};
      const int dir = uniform_int(0, 3);
      r.vx = dx[dir] * config.velocity_px;
      r.vy = dy[dir] * config.velocity_px;
    }
  }

  // Sub-steps keep every object moving at most one pixel between renders, so
  // events trace the edge sweep in time order.
  const auto substeps = std::max<std::int32_t>(1, static_cast<std::int32_t>(std::ceil(config.velocity_px)));
  const double sub_dt = static_cast<double>(config.frame_dt_us) / substeps;
  const double expected_noise =
      config.noise_rate_hz * config.width * config.height * (static_cast<double>(config.frame_dt_us) * 1e-6);

  GrayImage prev(config.width, config.height);
  GrayImage cur(config.width, config.height);
  render(objects, background, prev, nullptr);

  std::vector<SceneSample> out;
  out.reserve(static_cast<std::size_t>(config.frames));
  for (std::int32_t k = 1; k <= config.frames; ++k) {
    SceneSample s;
    s.events.width = config.width;
    s.events.height = config.height;
    s.events.t_start = (k - 1) * config.frame_dt_us;
    s.events.t_end = k * config.frame_dt_us;

    for (std::int32_t j = 1; j <= substeps; ++j) {
      for (auto& r : objects) advance(r, 1.0 / substeps, config.width, config.height);
      render(objects, background, cur, nullptr);
      const double t_lo = s.events.t_start + (j - 1) * sub_dt;
      for (std::int32_t y = 0; y < config.height; ++y)
        for (std::int32_t x = 0; x < config.width; ++x) {
          const auto a = prev.at(x, y);
          const auto b = cur.at(x, y);
          if (a == b) continue;
          const double t = t_lo + uniform_real(0.0, sub_dt);
          Event e;
          e.t = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(t)), s.events.t_start, s.events.t_end);
          e.x = x;
          e.y = y;
          e.p = b > a ? 1 : 0;
          s.events.events.push_back(e);
        }
      std::swap(prev, cur);
    }

    if (expected_noise > 0) {
      const auto n_noise = std::poisson_distribution<std::int64_t>(expected_noise)(rng);
      for (std::int64_t i = 0; i < n_noise; ++i) {
        Event e;
        e.t = std::uniform_int_distribution<std::int64_t>(s.events.t_start, s.events.t_end)(rng);
        e.x = uniform_int(0, config.width - 1);
        e.y = uniform_int(0, config.height - 1);
        e.p = static_cast<std::uint8_t>(uniform_int(0, 1));
        s.events.events.push_back(e);
      }
    }
    std::stable_sort(s.events.events.begin(), s.events.events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });

    s.frame = prev;
    s.label = GrayImage(config.width, config.height);
    GrayImage scratch(config.width, config.height);
    render(objects, background, scratch, &s.label);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace halsie::evio
