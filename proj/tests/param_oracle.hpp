#pragma once

#include "halsie/model.hpp"

namespace param_oracle {

using halsie::model::NetworkSpec;
using halsie::model::Setting;

// Learnable scalars counted straight from the layer list.
inline std::size_t hand_count(const NetworkSpec& s) {
  const auto conv = [](std::size_t ci, std::size_t co, std::size_t k, bool bias) { return ci * co * k * k + (bias ? co : 0); };
  const auto bn = [](std::size_t c) { return 2 * c; };
  const std::size_t events = 2, stacked = 2 * s.bins, frames = s.frame_channels;
  const auto tfe = [&](std::size_t in) {
    std::size_t n = 0;
    for (std::size_t st = 0; st < s.stages; ++st) {
      n += conv(st ? s.stage_channels(st - 1) : in, s.stage_channels(st), 3, true) + 2;
    }
    return n;
  };
  const auto sfe = [&](std::size_t in) {
    std::size_t n = 0;
    for (std::size_t st = 0; st < s.stages; ++st)
      n += conv(st ? s.stage_channels(st - 1) : in, s.stage_channels(st), 3, false) + bn(s.stage_channels(st));
    return n;
  };
  std::size_t enc = 0;
  switch (s.setting) {
    case Setting::A: enc = sfe(frames); break;
    case Setting::B: enc = sfe(stacked); break;
    case Setting::C: enc = tfe(events); break;
    case Setting::D: enc = sfe(frames) + sfe(stacked); break;
    case Setting::E: enc = tfe(events) + tfe(frames); break;
    case Setting::H: enc = tfe(events) + sfe(frames); break;
  }
  std::size_t mix = 0, cin = s.stage_channels(s.stages - 1);
  for (const auto& g : s.mixer_layout) {
    for (std::size_t r = 0; r < g.size(); ++r) mix += conv(cin, s.mixer_width, 3, false) + bn(s.mixer_width);
    if (g.size() > 1) mix += conv(g.size() * s.mixer_width, s.mixer_width, 1, true);
    cin = s.mixer_width;
  }
  mix += conv(s.mixer_width, s.mixer_width, 1, true) + conv(s.stage_channels(0), s.low_width, 1, true);
  const std::size_t head = conv(s.mixer_width + s.low_width, s.head_width, 3, false) + bn(s.head_width) +
                           conv(s.head_width, s.head_width, 3, false) + bn(s.head_width) +
                           conv(s.head_width, s.classes, 1, true);
  return enc + mix + head;
}

}  // namespace param_oracle
