#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace halsie::evio {

struct Event {
  std::int64_t t = 0;  // microseconds
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::uint8_t p = 0;  // 0 = OFF, 1 = ON

  friend bool operator==(const Event&, const Event&) = default;
};

// Events sorted non-decreasing by t, all inside [t_start, t_end] and inside
// the width x height sensor.
struct EventWindow {
  std::vector<Event> events;
  std::int32_t width = 0;
  std::int32_t height = 0;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
  std::size_t count_polarity(std::uint8_t p) const;
};

// B x 2 x H x W, row-major, channel 0 = OFF and channel 1 = ON.
class EventVolume {
 public:
  EventVolume() = default;
  EventVolume(std::size_t bins, std::size_t height, std::size_t width);

  std::size_t bins() const { return bins_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t bin_size() const { return 2 * height_ * width_; }

  float& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((b * 2 + c) * height_ + y) * width_ + x];
  }
  float at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((b * 2 + c) * height_ + y) * width_ + x];
  }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::span<const float> bin(std::size_t b) const {
    return std::span<const float>(data_).subspan(b * bin_size(), bin_size());
  }

  double channel_mass(std::size_t c) const;

  friend bool operator==(const EventVolume&, const EventVolume&) = default;

 private:
  std::size_t bins_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> data_;
};

struct BinningPolicy {
  enum class Mode { ConstantIntegrationTime, ConstantEventDensity };
  Mode mode = Mode::ConstantEventDensity;
  double duration_ms = 0.0;  // CIT
  std::size_t count = 0;     // CED

  static BinningPolicy cit(double duration_ms);
  static BinningPolicy ced(std::size_t count);
  // "cit:<ms>" or "ced:<count>"
  static BinningPolicy parse(const std::string& text);
};

// CSV with header `t_us,x,y,p`. Rows are validated against the sensor
// geometry and stably sorted by timestamp.
EventWindow parse_events(std::istream& in, std::int32_t width, std::int32_t height);
EventWindow load_events(const std::string& path, std::int32_t width, std::int32_t height);
void write_events(std::ostream& out, const EventWindow& window);
void save_events(const std::string& path, const EventWindow& window);

std::vector<EventWindow> slice_windows(const EventWindow& stream, const BinningPolicy& policy);

// t* = (B-1)(t_i - t_1)/(t_N - t_1); all zeros when t_N == t_1.
std::vector<double> normalize_timestamps(const EventWindow& window, std::size_t bins);

inline double bilinear_kernel(double a) {
  const double v = 1.0 - (a < 0 ? -a : a);
  return v > 0.0 ? v : 0.0;
}

// Adds the temporal kernel weights of `events` (with their normalized
// timestamps) into `volume`. Linear in the event set.
void accumulate_volume(EventVolume& volume, std::span<const Event> events,
                       std::span<const double> normalized_t);

EventVolume voxelize(const EventWindow& window, std::size_t bins);

// EVOL0001, u32 B, 2, H, W, little-endian f32 payload.
void write_volume(std::ostream& out, const EventVolume& volume);
void save_volume(const std::string& path, const EventVolume& volume);
EventVolume read_volume(std::istream& in);
EventVolume load_volume(const std::string& path);

}  // namespace halsie::evio
