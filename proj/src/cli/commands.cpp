#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "halsie/binary_io.hpp"
#include "halsie/checkpoint.hpp"
#include "halsie/cli.hpp"
#include "halsie/energy.hpp"
#include "halsie/trainer.hpp"

namespace halsie::cli {

namespace fs = std::filesystem;

namespace {

constexpr char kLogitsMagic[9] = "LGTS0001";

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  return f;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir);
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
}

model::NetworkSpec resolve_spec(const std::string& spec_path, const std::string& checkpoint) {
  if (!spec_path.empty()) return model::NetworkSpec::load(spec_path);
  const auto sidecar = model::spec_sidecar_path(checkpoint);
  if (!fs::exists(sidecar)) throw IoError("no --spec given and " + sidecar + " does not exist");
  return model::NetworkSpec::load(sidecar);
}

struct SynthArgs {
  std::string config, out;
  std::size_t scenes = 1;
  std::int64_t seed = -1;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  auto cfg = evio::SceneConfig::load(a.config);
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  ensure_dir(a.out);
  std::size_t index = 0;
  for (std::size_t s = 0; s < a.scenes; ++s)
    for (const auto& sample : evio::synth_scene(cfg, cfg.seed + s)) train::write_scene_sample(a.out, index++, sample);
  out << "wrote " << index << " samples to " << a.out << '\n';
  return kOk;
}

struct VoxelizeArgs {
  std::string events, out, policy;
  std::int32_t width = 0, height = 0;
  std::size_t bins = 10;
};

int cmd_voxelize(const VoxelizeArgs& a, std::ostream& out) {
  const auto stream = evio::load_events(a.events, a.width, a.height);
  if (a.policy.empty()) {
    ensure_parent(a.out);
    evio::save_volume(a.out, evio::voxelize(stream, a.bins));
    out << "wrote " << a.out << " (" << stream.size() << " events)\n";
    return kOk;
  }
  const auto windows = evio::slice_windows(stream, evio::BinningPolicy::parse(a.policy));
  ensure_dir(a.out);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "window_%05zu.evol", i);
    evio::save_volume((fs::path(a.out) / name).string(), evio::voxelize(windows[i], a.bins));
  }
  out << "wrote " << windows.size() << " volumes to " << a.out << '\n';
  return kOk;
}

struct TrainArgs {
  std::string data, val, spec, config, out, log, setting;
  double val_fraction = 0.2;
  std::int64_t seed = -1;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  auto spec = model::NetworkSpec::load(a.spec);
  if (!a.setting.empty()) spec.setting = model::parse_setting(a.setting);
  auto cfg = train::TrainConfig::load(a.config);
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (a.val_fraction < 0 || a.val_fraction >= 1) throw UsageError("--val-fraction must lie in [0, 1)");

  auto data = train::load_dataset(a.data, spec.bins);
  train::Dataset val;
  if (!a.val.empty()) {
    val = train::load_dataset(a.val, spec.bins);
  } else {
    const auto n_val = static_cast<std::size_t>(static_cast<double>(data.size()) * a.val_fraction);
    val.assign(data.end() - static_cast<std::ptrdiff_t>(n_val), data.end());
    data.resize(data.size() - n_val);
  }

  model::HalsieModel<float> net(spec, cfg.seed);
  ensure_parent(a.out);
  const auto log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
  auto log = open_out(log_path);
  out << "setting " << model::setting_id(spec.setting) << ", " << net.parameter_count() << " parameters, "
      << data.size() << " train / " << val.size() << " val samples\n";
  const auto result = train::train(net, data, val, cfg, &log);
  model::save_checkpoint(a.out, net);
  open_out(model::spec_sidecar_path(a.out)) << spec.to_text();
  if (!result.log.empty()) {
    const auto& last = result.log.back();
    out << "final train_loss " << last.train_loss << ", val accuracy " << last.val_accuracy << ", val mIoU "
        << last.val_miou << '\n';
  }
  out << "wrote " << a.out << " and " << log_path << '\n';
  return kOk;
}

struct InferArgs {
  std::string checkpoint, spec, frame, events, out, logits, classes_out, label;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const auto spec = resolve_spec(a.spec, a.checkpoint);
  model::HalsieModel<float> net(spec);
  model::load_checkpoint(a.checkpoint, net);

  train::Sample s;
  s.frame = read_pgm(a.frame);
  s.volume = evio::voxelize(evio::load_events(a.events, s.frame.width, s.frame.height), spec.bins);
  if (!a.label.empty()) s.label = read_pgm(a.label);
  s = train::center_crop(s, static_cast<std::int32_t>(spec.width), static_cast<std::int32_t>(spec.height));

  const std::vector<train::Sample> one{s};
  const auto batch = train::make_batch(one);
  const auto logits = net.forward(nullptr, batch.input, false).logits;
  GrayImage map(static_cast<std::int32_t>(spec.width), static_cast<std::int32_t>(spec.height));
  map.pixels = model::argmax_classes(logits);

  ensure_parent(a.out);
  write_ppm(a.out, colorize(map));
  const auto logits_path = a.logits.empty() ? a.out + ".logits" : a.logits;
  save_logits(logits_path, logits);
  if (!a.classes_out.empty()) write_pgm(a.classes_out, map);
  out << "wrote " << a.out << " and " << logits_path << '\n';
  if (!a.label.empty()) {
    std::vector<std::uint64_t> cm;
    train::accumulate_confusion(cm, spec.classes, map.pixels, s.label.pixels);
    const auto m = train::metrics_from_confusion(std::move(cm), spec.classes);
    out << "accuracy " << m.accuracy << ", mIoU " << m.miou << '\n';
  }
  return kOk;
}

struct ProfileArgs {
  std::string checkpoint, spec, samples, csv;
  std::size_t limit = 0;
};

int cmd_profile(const ProfileArgs& a, std::ostream& out) {
  const auto spec = resolve_spec(a.spec, a.checkpoint);
  model::HalsieModel<float> net(spec);
  model::load_checkpoint(a.checkpoint, net);
  auto data = train::load_dataset(a.samples, spec.bins, false);
  if (a.limit > 0 && data.size() > a.limit) data.resize(a.limit);
  std::vector<model::ModelInput<float>> inputs;
  for (const auto& s : data) {
    const std::vector<train::Sample> one{
        train::center_crop(s, static_cast<std::int32_t>(spec.width), static_cast<std::int32_t>(spec.height))};
    inputs.push_back(train::make_batch(one).input);
  }
  const auto report =
      energy::profile_model<float>(net, inputs, spec.bins, std::to_string(inputs.size()) + " samples from " + a.samples);
  ensure_parent(a.csv);
  auto csv = open_out(a.csv);
  energy::write_csv(csv, report);
  energy::write_table(out, report);
  return kOk;
}

struct MetricsArgs {
  std::string pred, gt, out;
  std::size_t classes = 0;
};

int cmd_metrics(const MetricsArgs& a, std::ostream& out) {
  if (!fs::is_directory(a.pred)) throw IoError("not a directory: " + a.pred);
  if (!fs::is_directory(a.gt)) throw IoError("not a directory: " + a.gt);
  std::map<std::string, std::pair<GrayImage, GrayImage>> pairs;
  for (const auto& entry : fs::directory_iterator(a.pred)) {
    if (entry.path().extension() != ".pgm") continue;
    const auto name = entry.path().filename().string();
    const auto gt_path = fs::path(a.gt) / name;
    if (!fs::exists(gt_path)) throw IoError("no ground truth for " + name + " in " + a.gt);
    pairs[name] = {read_pgm(entry.path().string()), read_pgm(gt_path.string())};
  }
  if (pairs.empty()) throw IoError("no .pgm predictions in " + a.pred);
  std::size_t k = a.classes;
  if (k == 0)
    for (const auto& [name, p] : pairs) {
      for (auto v : p.first.pixels) k = std::max<std::size_t>(k, v + 1u);
      for (auto v : p.second.pixels)
        if (v != train::kIgnoreLabel) k = std::max<std::size_t>(k, v + 1u);
    }
  std::vector<std::uint64_t> cm(k * k, 0);
  for (const auto& [name, p] : pairs) {
    if (p.first.width != p.second.width || p.first.height != p.second.height)
      throw ShapeError(name + ": prediction and ground truth sizes differ");
    train::accumulate_confusion(cm, k, p.first.pixels, p.second.pixels);
  }
  const auto report = train::metrics_from_confusion(std::move(cm), k);
  if (a.out.empty()) {
    train::write_metrics_csv(out, report);
  } else {
    ensure_parent(a.out);
    auto f = open_out(a.out);
    train::write_metrics_csv(f, report);
    out << "accuracy " << report.accuracy << ", mIoU " << report.miou << " over " << pairs.size() << " maps\n";
  }
  return kOk;
}

}  // namespace

void save_logits(const std::string& path, const ad::Tensor<float>& logits) {
  if (logits.rank() != 4) throw ShapeError("logits must be N x K x H x W");
  auto f = open_out(path);
  binio::write_magic(f, kLogitsMagic);
  for (std::size_t i = 0; i < 4; ++i) binio::write_u32(f, static_cast<std::uint32_t>(logits.dim(i)));
  for (float v : logits.values()) binio::write_f32(f, v);
  if (!f) throw IoError("failed writing " + path);
}

ad::Tensor<float> load_logits(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  binio::expect_magic(f, kLogitsMagic);
  ad::Shape shape(4);
  for (auto& d : shape) d = binio::read_u32(f);
  ad::Tensor<float> t(shape);
  for (auto& v : t.values()) v = binio::read_f32(f);
  return t;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hybrid event/frame segmentation toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Render a synthetic moving-shapes dataset");
  c_synth->add_option("--config", synth.config, "scene config file")->required();
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--scenes", synth.scenes, "number of scenes (seeds seed, seed+1, ...)")->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "overrides the config seed");

  VoxelizeArgs vox;
  auto* c_vox = app.add_subcommand("voxelize", "Turn an event CSV into EVOL0001 volumes");
  c_vox->add_option("--events", vox.events, "event CSV")->required();
  c_vox->add_option("--width", vox.width, "sensor width")->required();
  c_vox->add_option("--height", vox.height, "sensor height")->required();
  c_vox->add_option("--bins", vox.bins, "temporal bins")->capture_default_str();
  c_vox->add_option("--policy", vox.policy, "cit:<ms> or ced:<count>; writes one volume per window into --out");
  c_vox->add_option("--out", vox.out, "volume file, or directory with --policy")->required();

  TrainArgs tr;
  const auto add_train_opts = [&tr](CLI::App* c) {
    c->add_option("--data", tr.data, "dataset directory")->required();
    c->add_option("--val", tr.val, "validation directory (default: split off --data)");
    c->add_option("--val-fraction", tr.val_fraction, "tail fraction of --data used for validation")
        ->capture_default_str();
    c->add_option("--spec", tr.spec, "network spec file")->required();
    c->add_option("--config", tr.config, "training config file")->required();
    c->add_option("--out", tr.out, "checkpoint path")->required();
    c->add_option("--log", tr.log, "training log CSV (default <out>.log.csv)");
    c->add_option("--seed", tr.seed, "overrides the config seed");
  };
  auto* c_train = app.add_subcommand("train", "Train a model");
  add_train_opts(c_train);
  auto* c_ablate = app.add_subcommand("ablate", "Train one encoder/modality variant");
  add_train_opts(c_ablate);
  c_ablate->add_option("--setting", tr.setting, "A, B, C, D, E or H")->required();

  InferArgs inf;
  auto* c_infer = app.add_subcommand("infer", "Segment one frame/event pair");
  c_infer->add_option("--checkpoint", inf.checkpoint)->required();
  c_infer->add_option("--spec", inf.spec, "network spec (default <checkpoint>.spec.txt)");
  c_infer->add_option("--frame", inf.frame, "grayscale PGM")->required();
  c_infer->add_option("--events", inf.events, "event CSV")->required();
  c_infer->add_option("--out", inf.out, "colorized PPM")->required();
  c_infer->add_option("--logits", inf.logits, "logits file (default <out>.logits)");
  c_infer->add_option("--classes-out", inf.classes_out, "class-id PGM");
  c_infer->add_option("--label", inf.label, "ground-truth PGM; prints accuracy");

  ProfileArgs prof;
  auto* c_prof = app.add_subcommand("profile", "FLOPs and energy estimate with measured firing rates");
  c_prof->add_option("--checkpoint", prof.checkpoint)->required();
  c_prof->add_option("--spec", prof.spec, "network spec (default <checkpoint>.spec.txt)");
  c_prof->add_option("--samples", prof.samples, "dataset directory")->required();
  c_prof->add_option("--csv", prof.csv, "energy CSV output")->required();
  c_prof->add_option("--limit", prof.limit, "use at most this many samples (0 = all)");

  MetricsArgs met;
  auto* c_met = app.add_subcommand("metrics", "Confusion matrix, accuracy and mIoU of class-id maps");
  c_met->add_option("--pred", met.pred, "directory of predicted PGMs")->required();
  c_met->add_option("--gt", met.gt, "directory with same-named ground-truth PGMs")->required();
  c_met->add_option("--classes", met.classes, "class count (default: inferred)");
  c_met->add_option("--out", met.out, "CSV output (default stdout)");

  // CLI11 consumes arguments from the back and without the program name.
  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth, out);
    if (c_vox->parsed()) return cmd_voxelize(vox, out);
    if (c_train->parsed() || c_ablate->parsed()) return cmd_train(tr, out);
    if (c_infer->parsed()) return cmd_infer(inf, out);
    if (c_prof->parsed()) return cmd_profile(prof, out);
    if (c_met->parsed()) return cmd_metrics(met, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  }
  return kUsage;
}

}  // namespace halsie::cli
