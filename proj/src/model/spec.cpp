#include <sstream>

#include "halsie/errors.hpp"
#include "halsie/model.hpp"

namespace halsie::model {
namespace {

DilationRate parse_rate(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used_h = 0, used_w = 0;
    const auto hs = text.substr(0, x);
    const auto ws = text.substr(x + 1);
    const long h = std::stol(hs, &used_h);
    const long w = std::stol(ws, &used_w);
    if (used_h != hs.size() || used_w != ws.size() || h < 1 || w < 1) throw std::invalid_argument(text);
    return {static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
  } catch (const std::logic_error&) {
    throw ConfigError("bad dilation rate '" + text + "', expected <h>x<w>");
  }
}

}  // namespace

Setting parse_setting(const std::string& id) {
  if (id == "A") return Setting::A;
  if (id == "B") return Setting::B;
  if (id == "C") return Setting::C;
  if (id == "D") return Setting::D;
  if (id == "E") return Setting::E;
  if (id == "H") return Setting::H;
  throw ConfigError("unknown ablation setting '" + id + "' (expected one of A,B,C,D,E,H)");
}

char setting_id(Setting s) {
  switch (s) {
    case Setting::A: return 'A';
    case Setting::B: return 'B';
    case Setting::C: return 'C';
    case Setting::D: return 'D';
    case Setting::E: return 'E';
    case Setting::H: return 'H';
  }
  return '?';
}

MixerLayout parse_mixer_layout(const std::string& text) {
  MixerLayout layout;
  std::string compact;
  for (char c : text)
    if (c != ' ' && c != '\t') compact.push_back(c);
  std::size_t i = 0;
  while (i < compact.size()) {
    std::vector<DilationRate> group;
    if (compact[i] == '[') {
      const auto close = compact.find(']', i);
      if (close == std::string::npos) throw ConfigError("unterminated '[' in mixer layout");
      std::stringstream inner(compact.substr(i + 1, close - i - 1));
      std::string item;
      while (std::getline(inner, item, ',')) group.push_back(parse_rate(item));
      i = close + 1;
    } else {
      auto comma = compact.find(',', i);
      if (comma == std::string::npos) comma = compact.size();
      group.push_back(parse_rate(compact.substr(i, comma - i)));
      i = comma;
    }
    if (group.empty()) throw ConfigError("empty group in mixer layout");
    layout.push_back(std::move(group));
    if (i < compact.size()) {
      if (compact[i] != ',') throw ConfigError("expected ',' in mixer layout");
      ++i;
    }
  }
  if (layout.empty()) throw ConfigError("mixer layout is empty");
  return layout;
}

std::string format_mixer_layout(const MixerLayout& layout) {
  std::ostringstream os;
  for (std::size_t g = 0; g < layout.size(); ++g) {
    if (g) os << ',';
    const bool bracket = layout[g].size() > 1;
    if (bracket) os << '[';
    for (std::size_t r = 0; r < layout[g].size(); ++r) os << (r ? "," : "") << layout[g][r].h << 'x' << layout[g][r].w;
    if (bracket) os << ']';
  }
  return os.str();
}

std::size_t NetworkSpec::stage_height(std::size_t s) const {
  std::size_t n = height;
  for (std::size_t i = 0; i <= s; ++i) n = (n + 1) / 2;
  return n;
}

std::size_t NetworkSpec::stage_width(std::size_t s) const {
  std::size_t n = width;
  for (std::size_t i = 0; i <= s; ++i) n = (n + 1) / 2;
  return n;
}

void NetworkSpec::validate() const {
  if (height == 0 || width == 0) throw ConfigError("network input geometry must be non-zero");
  if (stages < 2) throw ConfigError("network needs at least 2 encoder stages");
  if (bins < 1) throw ConfigError("network needs at least 1 event bin");
  if (base_channels == 0 || classes == 0 || frame_channels == 0 || mixer_width == 0 || low_width == 0 ||
      head_width == 0)
    throw ConfigError("channel widths and class count must be non-zero");
  if (classes > 255) throw ConfigError("at most 255 classes are supported");
  if (mixer_layout.empty()) throw ConfigError("mixer layout is empty");
  if (!(surrogate_gamma > 0)) throw ConfigError("surrogate_gamma must be > 0");
  if (!(init_threshold > 0) || init_leak < 0 || init_leak > 1) throw ConfigError("bad LIF initialization");
}

NetworkSpec NetworkSpec::from_config(const KeyValueConfig& cfg) {
  cfg.require_known({"height", "width", "bins", "stages", "base_channels", "classes", "frame_channels", "mixer_width",
                     "low_width", "head_width", "mixer_rates", "setting", "leaky_slope", "surrogate_gamma",
                     "spike_mode", "init_threshold", "init_leak"});
  NetworkSpec s;
  const auto size = [&](const char* key, std::size_t fallback) {
    const auto v = cfg.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(std::string(key) + " must be >= 0");
    return static_cast<std::size_t>(v);
  };
  s.height = size("height", s.height);
  s.width = size("width", s.width);
  s.bins = size("bins", s.bins);
  s.stages = size("stages", s.stages);
  s.base_channels = size("base_channels", s.base_channels);
  s.classes = size("classes", s.classes);
  s.frame_channels = size("frame_channels", s.frame_channels);
  s.mixer_width = size("mixer_width", s.mixer_width);
  s.low_width = size("low_width", s.low_width);
  s.head_width = size("head_width", s.head_width);
  if (cfg.has("mixer_rates")) s.mixer_layout = parse_mixer_layout(cfg.raw("mixer_rates"));
  if (cfg.has("setting")) s.setting = parse_setting(cfg.raw("setting"));
  s.leaky_slope = cfg.get_double("leaky_slope", s.leaky_slope);
  s.surrogate_gamma = cfg.get_double("surrogate_gamma", s.surrogate_gamma);
  const auto mode = cfg.get_string("spike_mode", "heaviside");
  if (mode == "heaviside") s.spike_mode = lif::SpikeMode::Heaviside;
  else if (mode == "relaxed") s.spike_mode = lif::SpikeMode::Relaxed;
  else throw ConfigError("spike_mode must be heaviside or relaxed");
  s.init_threshold = cfg.get_double("init_threshold", s.init_threshold);
  s.init_leak = cfg.get_double("init_leak", s.init_leak);
  s.validate();
  return s;
}

NetworkSpec NetworkSpec::load(const std::string& path) { return from_config(KeyValueConfig::load(path)); }

std::string NetworkSpec::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "height = " << height << '\n'
     << "width = " << width << '\n'
     << "bins = " << bins << '\n'
     << "stages = " << stages << '\n'
     << "base_channels = " << base_channels << '\n'
     << "classes = " << classes << '\n'
     << "frame_channels = " << frame_channels << '\n'
     << "mixer_width = " << mixer_width << '\n'
     << "low_width = " << low_width << '\n'
     << "head_width = " << head_width << '\n'
     << "mixer_rates = " << format_mixer_layout(mixer_layout) << '\n'
     << "setting = " << setting_id(setting) << '\n'
     << "leaky_slope = " << leaky_slope << '\n'
     << "surrogate_gamma = " << surrogate_gamma << '\n'
     << "spike_mode = " << (spike_mode == lif::SpikeMode::Heaviside ? "heaviside" : "relaxed") << '\n'
     << "init_threshold = " << init_threshold << '\n'
     << "init_leak = " << init_leak << '\n';
  return os.str();
}

}  // namespace halsie::model
