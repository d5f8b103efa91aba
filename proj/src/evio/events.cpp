#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "halsie/binary_io.hpp"
#include "halsie/errors.hpp"
#include "halsie/evio.hpp"

namespace halsie::evio {
namespace {

std::int64_t parse_field(const std::string& s, const char* name, std::size_t line) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw ParseError(std::string(name) + " is not an integer", line);
  return v;
}

}  // namespace

std::size_t EventWindow::count_polarity(std::uint8_t p) const {
  return static_cast<std::size_t>(
      std::count_if(events.begin(), events.end(), [p](const Event& e) { return e.p == p; }));
}

BinningPolicy BinningPolicy::cit(double duration_ms) {
  if (!(duration_ms > 0)) throw ConfigError("CIT duration must be > 0");
  BinningPolicy p;
  p.mode = Mode::ConstantIntegrationTime;
  p.duration_ms = duration_ms;
  return p;
}

BinningPolicy BinningPolicy::ced(std::size_t count) {
  if (count == 0) throw ConfigError("CED count must be > 0");
  BinningPolicy p;
  p.mode = Mode::ConstantEventDensity;
  p.count = count;
  return p;
}

BinningPolicy BinningPolicy::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("policy must be cit:<ms> or ced:<count>");
  const auto kind = text.substr(0, colon);
  const auto arg = text.substr(colon + 1);
  try {
    std::size_t used = 0;
    if (kind == "cit") {
      const double ms = std::stod(arg, &used);
      if (used != arg.size()) throw std::invalid_argument(arg);
      return cit(ms);
    }
    if (kind == "ced") {
      const long long n = std::stoll(arg, &used);
      if (used != arg.size() || n <= 0) throw std::invalid_argument(arg);
      return ced(static_cast<std::size_t>(n));
    }
  } catch (const std::logic_error&) {
    throw ConfigError("bad policy argument '" + text + "'");
  }
  throw ConfigError("unknown binning policy '" + kind + "'");
}

EventWindow parse_events(std::istream& in, std::int32_t width, std::int32_t height) {
  if (width <= 0 || height <= 0) throw ConfigError("sensor geometry must be positive");
  EventWindow w;
  w.width = width;
  w.height = height;

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) return w;
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t_us,x,y,p") throw ParseError("expected header 't_us,x,y,p'", line_no);

  std::array<std::string, 4> fields;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t n = 0;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      if (n == fields.size()) throw ParseError("wrong field count", line_no);
      fields[n++] = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (n != fields.size()) throw ParseError("wrong field count", line_no);

    Event e;
    e.t = parse_field(fields[0], "t_us", line_no);
    const auto x = parse_field(fields[1], "x", line_no);
    const auto y = parse_field(fields[2], "y", line_no);
    const auto p = parse_field(fields[3], "p", line_no);
    if (e.t < 0) throw ParseError("t_us negative", line_no);
    if (x < 0 || x >= width) throw ParseError("x out of range", line_no);
    if (y < 0 || y >= height) throw ParseError("y out of range", line_no);
    if (p != 0 && p != 1) throw ParseError("polarity not in {0,1}", line_no);
    e.x = static_cast<std::int32_t>(x);
    e.y = static_cast<std::int32_t>(y);
    e.p = static_cast<std::uint8_t>(p);
    w.events.push_back(e);
  }

  std::stable_sort(w.events.begin(), w.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  if (!w.events.empty()) {
    w.t_start = w.events.front().t;
    w.t_end = w.events.back().t;
  }
  return w;
}

EventWindow load_events(const std::string& path, std::int32_t width, std::int32_t height) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open event file '" + path + "'");
  return parse_events(in, width, height);
}

void write_events(std::ostream& out, const EventWindow& window) {
  out << "t_us,x,y,p\n";
  for (const auto& e : window.events)
    out << e.t << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.p) << '\n';
}

void save_events(const std::string& path, const EventWindow& window) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write event file '" + path + "'");
  write_events(out, window);
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<EventWindow> slice_windows(const EventWindow& stream, const BinningPolicy& policy) {
  std::vector<EventWindow> out;
  const auto make = [&](std::size_t begin, std::size_t end) {
    EventWindow w;
    w.width = stream.width;
    w.height = stream.height;
    w.events.assign(stream.events.begin() + static_cast<std::ptrdiff_t>(begin),
                    stream.events.begin() + static_cast<std::ptrdiff_t>(end));
    return w;
  };

  if (policy.mode == BinningPolicy::Mode::ConstantEventDensity) {
    if (policy.count == 0) throw ConfigError("CED count must be > 0");
    const std::size_t n_windows = stream.size() / policy.count;
    for (std::size_t k = 0; k < n_windows; ++k) {
      auto w = make(k * policy.count, (k + 1) * policy.count);
      w.t_start = w.events.front().t;
      w.t_end = w.events.back().t;
      out.push_back(std::move(w));
    }
    return out;
  }

  if (!(policy.duration_ms > 0)) throw ConfigError("CIT duration must be > 0");
  if (stream.empty()) return out;
  const auto duration_us = static_cast<std::int64_t>(std::llround(policy.duration_ms * 1000.0));
  if (duration_us <= 0) throw ConfigError("CIT duration below 1 us");
  const std::int64_t origin = stream.events.front().t;
  const std::int64_t span = stream.events.back().t - origin;
  // Half-open slots [origin + kT, origin + (k+1)T); the last slot also takes t_end.
  const std::int64_t n_windows = std::max<std::int64_t>(1, (span + duration_us - 1) / duration_us);
  std::size_t cursor = 0;
  for (std::int64_t k = 0; k < n_windows; ++k) {
    const std::int64_t lo = origin + k * duration_us;
    const std::int64_t hi = lo + duration_us;
    std::size_t end = cursor;
    if (k + 1 == n_windows) {
      end = stream.size();
    } else {
      while (end < stream.size() && stream.events[end].t < hi) ++end;
    }
    auto w = make(cursor, end);
    w.t_start = lo;
    w.t_end = hi;
    out.push_back(std::move(w));
    cursor = end;
  }
  return out;
}

std::vector<double> normalize_timestamps(const EventWindow& window, std::size_t bins) {
  if (bins < 2) throw ConfigError("normalize_timestamps needs B >= 2");
  std::vector<double> out(window.size(), 0.0);
  if (window.empty()) return out;
  const std::int64_t t1 = window.events.front().t;
  const std::int64_t tn = window.events.back().t;
  if (tn == t1) return out;
  const double scale = static_cast<double>(bins - 1) / static_cast<double>(tn - t1);
  for (std::size_t i = 0; i < window.size(); ++i)
    out[i] = static_cast<double>(window.events[i].t - t1) * scale;
  return out;
}

EventVolume::EventVolume(std::size_t bins, std::size_t height, std::size_t width)
    : bins_(bins), height_(height), width_(width), data_(bins * 2 * height * width, 0.0f) {}

double EventVolume::channel_mass(std::size_t c) const {
  double total = 0.0;
  for (std::size_t b = 0; b < bins_; ++b)
    for (std::size_t y = 0; y < height_; ++y)
      for (std::size_t x = 0; x < width_; ++x) total += at(b, c, y, x);
  return total;
}

void accumulate_volume(EventVolume& volume, std::span<const Event> events,
                       std::span<const double> normalized_t) {
  if (events.size() != normalized_t.size())
    throw ShapeError("accumulate_volume: events and timestamps differ in length");
  const auto bins = static_cast<std::int64_t>(volume.bins());
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    const double ts = normalized_t[i];
    const auto b0 = static_cast<std::int64_t>(std::floor(ts));
    // Spatial kernels are 1 at the integral event pixel; only time is interpolated.
    for (std::int64_t b = b0; b <= b0 + 1; ++b) {
      if (b < 0 || b >= bins) continue;
      const double wgt = bilinear_kernel(static_cast<double>(b) - ts);
      if (wgt > 0.0)
        volume.at(static_cast<std::size_t>(b), e.p, static_cast<std::size_t>(e.y),
                  static_cast<std::size_t>(e.x)) += static_cast<float>(wgt);
    }
  }
}

EventVolume voxelize(const EventWindow& window, std::size_t bins) {
  if (bins < 2) throw ConfigError("voxelize needs B >= 2");
  EventVolume v(bins, static_cast<std::size_t>(window.height), static_cast<std::size_t>(window.width));
  if (window.empty()) return v;
  const auto ts = normalize_timestamps(window, bins);
  accumulate_volume(v, window.events, ts);
  return v;
}

void write_volume(std::ostream& out, const EventVolume& volume) {
  binio::write_magic(out, "EVOL0001");
  binio::write_u32(out, static_cast<std::uint32_t>(volume.bins()));
  binio::write_u32(out, 2);
  binio::write_u32(out, static_cast<std::uint32_t>(volume.height()));
  binio::write_u32(out, static_cast<std::uint32_t>(volume.width()));
  for (float f : volume.data()) binio::write_f32(out, f);
}

void save_volume(const std::string& path, const EventVolume& volume) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write volume file '" + path + "'");
  write_volume(out, volume);
  if (!out) throw IoError("write failed for '" + path + "'");
}

EventVolume read_volume(std::istream& in) {
  binio::expect_magic(in, "EVOL0001");
  const auto bins = binio::read_u32(in);
  const auto channels = binio::read_u32(in);
  const auto h = binio::read_u32(in);
  const auto w = binio::read_u32(in);
  if (channels != 2) throw ShapeError("volume must have 2 polarity channels");
  EventVolume v(bins, h, w);
  for (float& f : v.data()) f = binio::read_f32(in);
  return v;
}

EventVolume load_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open volume file '" + path + "'");
  return read_volume(in);
}

}  // namespace halsie::evio
