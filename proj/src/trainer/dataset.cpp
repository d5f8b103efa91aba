#include "halsie/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <regex>
#include <set>

#include "halsie/errors.hpp"

namespace halsie::train {

namespace fs = std::filesystem;

Sample make_sample(const evio::SceneSample& scene, std::size_t bins) {
  return {scene.frame, evio::voxelize(scene.events, bins), scene.label};
}

Dataset synth_dataset(const evio::SceneConfig& config, std::size_t scenes, std::size_t bins) {
  Dataset out;
  for (std::size_t i = 0; i < scenes; ++i)
    for (const auto& s : evio::synth_scene(config, config.seed + i)) out.push_back(make_sample(s, bins));
  return out;
}

std::string sample_stem(const std::string& dir, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu", index);
  return (fs::path(dir) / buf).string();
}

void write_scene_sample(const std::string& dir, std::size_t index, const evio::SceneSample& scene) {
  const auto stem = sample_stem(dir, index);
  write_pgm(stem + "_frame.pgm", scene.frame);
  evio::save_events(stem + "_events.csv", scene.events);
  write_pgm(stem + "_label.pgm", scene.label);
}

Dataset load_dataset(const std::string& dir, std::size_t bins, bool require_labels) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  static const std::regex pattern(R"(sample_(\d+)_frame\.pgm)");
  std::set<std::size_t> indices;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) indices.insert(std::stoul(m[1].str()));
  }
  if (indices.empty()) throw IoError("no sample_*_frame.pgm files in " + dir);
  Dataset out;
  for (auto i : indices) {
    const auto stem = sample_stem(dir, i);
    Sample s;
    s.frame = read_pgm(stem + "_frame.pgm");
    s.volume = evio::voxelize(evio::load_events(stem + "_events.csv", s.frame.width, s.frame.height), bins);
    if (fs::exists(stem + "_label.pgm")) {
      s.label = read_pgm(stem + "_label.pgm");
      if (s.label.width != s.frame.width || s.label.height != s.frame.height)
        throw ShapeError(stem + ": label and frame sizes differ");
    } else if (require_labels) {
      throw IoError("missing " + stem + "_label.pgm");
    }
    out.push_back(std::move(s));
  }
  return out;
}

Batch make_batch(std::span<const Sample> samples) {
  if (samples.empty()) throw ShapeError("empty batch");
  const auto w = static_cast<std::size_t>(samples[0].width());
  const auto h = static_cast<std::size_t>(samples[0].height());
  const std::size_t n = samples.size(), bins = samples[0].volume.bins(), hw = h * w;
  Batch b;
  b.input.frame = ad::Tensor<float>({n, 1, h, w});
  for (std::size_t t = 0; t < bins; ++t) b.input.bins.emplace_back(ad::Shape{n, 2, h, w});
  b.targets.assign(n * hw, kIgnoreLabel);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[i];
    if (static_cast<std::size_t>(s.width()) != w || static_cast<std::size_t>(s.height()) != h ||
        s.volume.bins() != bins || s.volume.width() != w || s.volume.height() != h)
      throw ShapeError("batch samples differ in geometry");
    auto f = b.input.frame.values();
    for (std::size_t p = 0; p < hw; ++p) f[i * hw + p] = static_cast<float>(s.frame.pixels[p]) / 255.0f;
    for (std::size_t t = 0; t < bins; ++t) {
      const auto src = s.volume.bin(t);
      std::copy(src.begin(), src.end(), b.input.bins[t].values().begin() + static_cast<std::ptrdiff_t>(i * 2 * hw));
    }
    if (!s.label.pixels.empty())
      for (std::size_t p = 0; p < hw; ++p) b.targets[i * hw + p] = s.label.pixels[p];
  }
  return b;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<Sample> picked;
  picked.reserve(indices.size());
  for (auto i : indices) picked.push_back(data.at(i));
  return make_batch(picked);
}

}  // namespace halsie::train
