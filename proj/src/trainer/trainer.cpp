#include "halsie/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <thread>

#include "halsie/errors.hpp"

namespace halsie::train {

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg) {
  cfg.require_known({"epochs", "batch_size", "lr", "lr_decay", "lr_step", "beta1", "beta2", "eps", "clip_norm",
                     "augment", "flip_prob", "class_weights", "seed", "threads"});
  TrainConfig c;
  const auto count = [&](const char* key, std::size_t fallback) {
    const auto v = cfg.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(std::string(key) + " must be >= 0");
    return static_cast<std::size_t>(v);
  };
  c.epochs = count("epochs", c.epochs);
  c.batch_size = count("batch_size", c.batch_size);
  c.lr = cfg.get_double("lr", c.lr);
  c.lr_decay = cfg.get_double("lr_decay", c.lr_decay);
  c.lr_step = count("lr_step", c.lr_step);
  c.beta1 = cfg.get_double("beta1", c.beta1);
  c.beta2 = cfg.get_double("beta2", c.beta2);
  c.eps = cfg.get_double("eps", c.eps);
  c.clip_norm = cfg.get_double("clip_norm", c.clip_norm);
  c.augment = cfg.get_bool("augment", c.augment);
  c.flip_prob = cfg.get_double("flip_prob", c.flip_prob);
  if (cfg.has("class_weights") && cfg.raw("class_weights") != "auto") c.class_weights = cfg.get_doubles("class_weights");
  c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  c.threads = count("threads", env_threads());
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) { return from_config(KeyValueConfig::load(path)); }

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (!(lr_decay > 0 && lr_decay < 1)) throw ConfigError("lr_decay must lie in (0, 1)");
  if (lr_step == 0) throw ConfigError("lr_step must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0)) throw ConfigError("bad ADAM constants");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be > 0");
  if (flip_prob < 0 || flip_prob > 1) throw ConfigError("flip_prob must lie in [0, 1]");
  for (double w : class_weights)
    if (!(w >= 0)) throw ConfigError("class weights must be non-negative");
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_step));
}

Adam::Adam(std::vector<ad::Tensor<float>> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    const auto g = p.has_grad() ? p.grad() : std::span<const float>{};
    auto w = p.values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      m[i] = beta1_ * m[i] + (1 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1 - beta2_) * gi * gi;
      const double step = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      w[i] = static_cast<float>(static_cast<double>(w[i]) - step);
    }
  }
}

double clip_grad_norm(std::span<const ad::Tensor<float>> params, double max_norm) {
  double sq = 0;
  for (const auto& p : params)
    if (p.has_grad())
      for (float g : p.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const auto s = static_cast<float>(max_norm / (norm + 1e-12));
    for (const auto& p : params)
      if (p.has_grad())
        for (auto& g : p.grad_buffer()) g *= s;
  }
  return norm;
}

namespace {

struct Geometry {
  std::int32_t w, h;
};

// Maps a destination pixel of the transformed image back to the source.
class Remap {
 public:
  Remap(const GeometricTransform& t, std::int32_t w, std::int32_t h) : t_(t), w_(w), h_(h) {
    const bool swap = (t.quarter_turns & 1) != 0;
    rot_ = swap ? Geometry{h, w} : Geometry{w, h};
    out_ = {t.crop_w > 0 ? t.crop_w : rot_.w, t.crop_h > 0 ? t.crop_h : rot_.h};
    if (t.x0 < 0 || t.y0 < 0 || t.x0 + out_.w > rot_.w || t.y0 + out_.h > rot_.h)
      throw ShapeError("crop window exceeds the " + std::to_string(rot_.w) + "x" + std::to_string(rot_.h) +
                       " input");
  }
  Geometry out() const { return out_; }

  std::size_t source(std::int32_t x, std::int32_t y) const {
    x += t_.x0;
    y += t_.y0;
    // Undo each counter-clockwise quarter turn: dest(x, y) = src(ws - 1 - y, x).
    Geometry d = rot_;
    for (int k = 0; k < t_.quarter_turns; ++k) {
      const Geometry s{d.h, d.w};
      const std::int32_t sx = s.w - 1 - y, sy = x;
      x = sx;
      y = sy;
      d = s;
    }
    if (t_.flip) x = w_ - 1 - x;
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(w_) + static_cast<std::size_t>(x);
  }

 private:
  GeometricTransform t_;
  std::int32_t w_, h_;
  Geometry rot_{}, out_{};
};

template <typename V>
void remap_plane(const Remap& r, const V* src, V* dst) {
  const auto o = r.out();
  for (std::int32_t y = 0; y < o.h; ++y)
    for (std::int32_t x = 0; x < o.w; ++x) dst[static_cast<std::size_t>(y) * o.w + x] = src[r.source(x, y)];
}

GrayImage remap_image(const Remap& r, const GrayImage& img) {
  if (img.pixels.empty()) return img;
  GrayImage out(r.out().w, r.out().h);
  remap_plane(r, img.pixels.data(), out.pixels.data());
  return out;
}

}  // namespace

GeometricTransform draw_transform(std::mt19937_64& rng, std::int32_t width, std::int32_t height,
                                  std::int32_t crop_w, std::int32_t crop_h, double flip_prob) {
  GeometricTransform t;
  t.flip = std::bernoulli_distribution(flip_prob)(rng);
  // Quarter turns would change the geometry of non-square inputs.
  t.quarter_turns = std::uniform_int_distribution<int>(0, 3)(rng);
  if (width != height) t.quarter_turns &= 2;
  const bool swap = (t.quarter_turns & 1) != 0;
  const auto rw = swap ? height : width, rh = swap ? width : height;
  t.crop_w = crop_w > 0 ? crop_w : rw;
  t.crop_h = crop_h > 0 ? crop_h : rh;
  if (t.crop_w > rw || t.crop_h > rh)
    throw ShapeError("input " + std::to_string(width) + "x" + std::to_string(height) + " is smaller than the crop");
  t.x0 = std::uniform_int_distribution<std::int32_t>(0, rw - t.crop_w)(rng);
  t.y0 = std::uniform_int_distribution<std::int32_t>(0, rh - t.crop_h)(rng);
  return t;
}

Sample apply_transform(const Sample& s, const GeometricTransform& t) {
  const Remap r(t, s.width(), s.height());
  Sample out;
  out.frame = remap_image(r, s.frame);
  out.label = remap_image(r, s.label);
  const auto o = r.out();
  out.volume = evio::EventVolume(s.volume.bins(), static_cast<std::size_t>(o.h), static_cast<std::size_t>(o.w));
  const std::size_t in_plane = s.volume.height() * s.volume.width();
  const std::size_t out_plane = static_cast<std::size_t>(o.w) * static_cast<std::size_t>(o.h);
  if (s.volume.width() != static_cast<std::size_t>(s.width()) ||
      s.volume.height() != static_cast<std::size_t>(s.height()))
    throw ShapeError("volume and frame sizes differ");
  for (std::size_t plane = 0; plane < 2 * s.volume.bins(); ++plane)
    remap_plane(r, s.volume.data().data() + plane * in_plane, out.volume.data().data() + plane * out_plane);
  return out;
}

Sample augment(const Sample& s, std::mt19937_64& rng, std::int32_t crop_w, std::int32_t crop_h, double flip_prob) {
  return apply_transform(s, draw_transform(rng, s.width(), s.height(), crop_w, crop_h, flip_prob));
}

Sample center_crop(const Sample& s, std::int32_t crop_w, std::int32_t crop_h) {
  if (crop_w == s.width() && crop_h == s.height()) return s;
  if (crop_w > s.width() || crop_h > s.height()) throw ShapeError("input is smaller than the network geometry");
  GeometricTransform t;
  t.crop_w = crop_w;
  t.crop_h = crop_h;
  t.x0 = (s.width() - crop_w) / 2;
  t.y0 = (s.height() - crop_h) / 2;
  return apply_transform(s, t);
}

std::vector<double> inverse_frequency_weights(const Dataset& data, std::size_t classes) {
  std::vector<std::uint64_t> counts(classes, 0);
  for (const auto& s : data)
    for (auto v : s.label.pixels) {
      if (v == kIgnoreLabel) continue;
      if (v >= classes) throw LabelError("label " + std::to_string(v) + " outside [0," + std::to_string(classes) + ")");
      ++counts[v];
    }
  std::vector<double> w(classes, 0.0);
  double sum = 0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < classes; ++k)
    if (counts[k] > 0) {
      w[k] = 1.0 / static_cast<double>(counts[k]);
      sum += w[k];
      ++present;
    }
  if (present == 0) throw LabelError("training labels contain no valid pixels");
  for (auto& v : w) v *= static_cast<double>(present) / sum;
  return w;
}

MetricsReport metrics_from_confusion(std::vector<std::uint64_t> confusion, std::size_t classes) {
  if (confusion.size() != classes * classes) throw ShapeError("confusion matrix must be K x K");
  MetricsReport r;
  r.classes = classes;
  r.confusion = std::move(confusion);
  std::uint64_t total = 0, correct = 0;
  for (std::size_t i = 0; i < classes; ++i)
    for (std::size_t j = 0; j < classes; ++j) {
      total += r.at(i, j);
      if (i == j) correct += r.at(i, j);
    }
  r.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  r.iou.assign(classes, std::numeric_limits<double>::quiet_NaN());
  double sum = 0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    std::uint64_t gt = 0, pred = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      gt += r.at(k, j);
      pred += r.at(j, k);
    }
    if (gt == 0) continue;
    const auto tp = r.at(k, k);
    r.iou[k] = static_cast<double>(tp) / static_cast<double>(gt + pred - tp);
    sum += r.iou[k];
    ++present;
  }
  r.miou = present ? sum / static_cast<double>(present) : 0.0;
  return r;
}

void accumulate_confusion(std::vector<std::uint64_t>& confusion, std::size_t classes,
                          std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw ShapeError("prediction and label sizes differ");
  if (confusion.size() != classes * classes) confusion.assign(classes * classes, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == kIgnoreLabel) continue;
    if (gt[i] >= classes || pred[i] >= classes)
      throw LabelError("class id " + std::to_string(std::max(gt[i], pred[i])) + " outside [0," +
                       std::to_string(classes) + ")");
    ++confusion[gt[i] * classes + pred[i]];
  }
}

void write_metrics_csv(std::ostream& out, const MetricsReport& r) {
  out << "gt\\pred";
  for (std::size_t k = 0; k < r.classes; ++k) out << ',' << k;
  out << '\n';
  for (std::size_t i = 0; i < r.classes; ++i) {
    out << i;
    for (std::size_t j = 0; j < r.classes; ++j) out << ',' << r.at(i, j);
    out << '\n';
  }
  out << std::setprecision(6) << std::fixed;
  out << "accuracy," << r.accuracy << '\n';
  out << "miou," << r.miou << '\n';
  for (std::size_t k = 0; k < r.classes; ++k) {
    out << "iou_" << k << ',';
    if (std::isnan(r.iou[k])) out << "absent";
    else out << r.iou[k];
    out << '\n';
  }
  out << std::defaultfloat;
}

namespace {

std::vector<std::vector<std::size_t>> chunk_indices(std::size_t n, std::size_t batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) {
    std::vector<std::size_t> b;
    for (std::size_t j = i; j < std::min(n, i + batch); ++j) b.push_back(j);
    out.push_back(std::move(b));
  }
  return out;
}

Dataset fit_geometry(const Dataset& data, const model::NetworkSpec& spec) {
  Dataset out;
  out.reserve(data.size());
  for (const auto& s : data)
    out.push_back(center_crop(s, static_cast<std::int32_t>(spec.width), static_cast<std::int32_t>(spec.height)));
  return out;
}

}  // namespace

std::vector<GrayImage> predict(model::HalsieModel<float>& net, const Dataset& data, std::size_t batch_size) {
  const auto fitted = fit_geometry(data, net.spec());
  std::vector<GrayImage> out;
  const auto w = static_cast<std::int32_t>(net.spec().width), h = static_cast<std::int32_t>(net.spec().height);
  for (const auto& idx : chunk_indices(fitted.size(), batch_size)) {
    const auto batch = make_batch(fitted, idx);
    const auto classes = model::argmax_classes(net.forward(nullptr, batch.input, false).logits);
    const std::size_t hw = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      GrayImage img(w, h);
      std::copy_n(classes.begin() + static_cast<std::ptrdiff_t>(i * hw), hw, img.pixels.begin());
      out.push_back(std::move(img));
    }
  }
  return out;
}

MetricsReport evaluate(model::HalsieModel<float>& net, const Dataset& data, std::size_t batch_size,
                       std::size_t threads) {
  if (data.empty()) throw ConfigError("evaluation set is empty");
  const std::size_t k = net.spec().classes;
  const auto fitted = fit_geometry(data, net.spec());
  const auto batches = chunk_indices(fitted.size(), batch_size);
  threads = std::max<std::size_t>(1, std::min(threads, batches.size()));
  // Eval-mode forward passes only read the model, so workers can share it.
  std::vector<std::vector<std::uint64_t>> partial(threads, std::vector<std::uint64_t>(k * k, 0));
  const auto work = [&](std::size_t worker) {
    for (std::size_t b = worker; b < batches.size(); b += threads) {
      const auto batch = make_batch(fitted, batches[b]);
      const auto pred = model::argmax_classes(net.forward(nullptr, batch.input, false).logits);
      std::vector<std::uint8_t> gt(batch.targets.begin(), batch.targets.end());
      accumulate_confusion(partial[worker], k, pred, gt);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& t : pool) t.join();
  }
  std::vector<std::uint64_t> total(k * k, 0);
  for (const auto& p : partial)
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += p[i];
  return metrics_from_confusion(std::move(total), k);
}

void write_log_header(std::ostream& out) { out << "epoch,lr,train_loss,val_accuracy,val_miou\n"; }

void write_log_row(std::ostream& out, const EpochLog& row) {
  out << row.epoch << ',' << std::setprecision(9) << row.lr << ',' << row.train_loss << ',' << row.val_accuracy << ','
      << row.val_miou << '\n'
      << std::flush;
}

TrainResult train(model::HalsieModel<float>& net, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  const auto& spec = net.spec();
  if (train_set.size() < cfg.batch_size)
    throw ConfigError("training set has " + std::to_string(train_set.size()) + " samples, fewer than one batch");
  TrainResult result;
  result.class_weights = cfg.class_weights.empty() ? inverse_frequency_weights(train_set, spec.classes)
                                                   : cfg.class_weights;
  if (result.class_weights.size() != spec.classes)
    throw ConfigError("class_weights lists " + std::to_string(result.class_weights.size()) + " values for " +
                      std::to_string(spec.classes) + " classes");
  const std::vector<float> weights(result.class_weights.begin(), result.class_weights.end());

  std::mt19937_64 rng(cfg.seed);
  const auto params = net.parameters();
  Adam adam(params, cfg.beta1, cfg.beta2, cfg.eps);
  const auto cw = static_cast<std::int32_t>(spec.width), ch = static_cast<std::int32_t>(spec.height);

  if (log) write_log_header(*log);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t steps = 0;
    // The trailing partial batch is dropped.
    for (std::size_t start = 0; start + cfg.batch_size <= order.size(); start += cfg.batch_size) {
      std::vector<Sample> picked;
      for (std::size_t j = start; j < start + cfg.batch_size; ++j) {
        const auto& s = train_set[order[j]];
        picked.push_back(cfg.augment ? augment(s, rng, cw, ch, cfg.flip_prob) : center_crop(s, cw, ch));
      }
      const auto batch = make_batch(picked);
      ad::Tape<float> tape;
      auto out = net.forward(&tape, batch.input, true);
      auto loss = ad::weighted_cross_entropy<float>(&tape, out.logits, batch.targets, weights, std::int32_t{kIgnoreLabel});
      tape.backward(loss);
      clip_grad_norm(params, cfg.clip_norm);
      adam.step(lr);
      net.clamp_lif();
      for (auto p : params) p.zero_grad();
      loss_sum += static_cast<double>(loss.item());
      ++steps;
    }
    EpochLog row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_sum / static_cast<double>(steps);
    if (!val_set.empty()) {
      const auto m = evaluate(net, val_set, cfg.batch_size, cfg.threads);
      row.val_accuracy = m.accuracy;
      row.val_miou = m.miou;
    }
    if (log) write_log_row(*log, row);
    result.log.push_back(row);
  }
  return result;
}

std::size_t env_threads() {
  const char* v = std::getenv("HALSIE_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError(std::string("HALSIE_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

}  // namespace halsie::train
