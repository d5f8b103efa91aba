#include <doctest.h>

#include <cmath>
#include <sstream>

#include "gradcheck.hpp"
#include "param_oracle.hpp"
#include "toy.hpp"
#include "halsie/checkpoint.hpp"
#include "halsie/errors.hpp"
#include "halsie/model.hpp"

using namespace halsie;
using namespace halsie::model;

using param_oracle::hand_count;

TEST_CASE("spec text round trip and validation") {
  NetworkSpec s = toy::spec16(Setting::E);
  s.spike_mode = lif::SpikeMode::Relaxed;
  const auto back = NetworkSpec::from_config(KeyValueConfig::parse_string(s.to_text()));
  CHECK(back.to_text() == s.to_text());
  CHECK(format_mixer_layout(NetworkSpec{}.mixer_layout) == "1x6,[6x21,18x15,1x1],6x3");
  CHECK(parse_mixer_layout("1x6, [6x21, 18x15, 1x1], 6x3") == NetworkSpec{}.mixer_layout);
  CHECK_THROWS_AS(parse_mixer_layout("1x6,[2x2"), ConfigError);
  CHECK_THROWS_AS(parse_mixer_layout("0x3"), ConfigError);
  s.stages = 1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK_THROWS_AS(parse_setting("G"), ConfigError);
  CHECK_THROWS_AS(NetworkSpec::from_config(KeyValueConfig::parse_string("depth = 3\n")), ConfigError);
}

TEST_CASE("stage geometry") {
  NetworkSpec s;
  CHECK(s.stage_channels(0) == 16);
  CHECK(s.stage_channels(3) == 128);
  CHECK(s.stage_height(0) == 96);
  CHECK(s.stage_height(3) == 12);
  s.height = 13;
  CHECK(s.stage_height(0) == 7);
  CHECK(s.stage_height(1) == 4);
}

TEST_CASE("parameter counts are exact") {
  for (auto setting : {Setting::A, Setting::B, Setting::C, Setting::D, Setting::E, Setting::H}) {
    const auto s = toy::spec16(setting);
    CHECK(count_params(s) == hand_count(s));
  }
  const NetworkSpec full;
  CHECK(count_params(full) == hand_count(full));
  CHECK(count_params(full) >= 1'000'000);
  CHECK(count_params(full) <= 2'500'000);

  // A single 3x3 conv 2 -> 4 with bias holds 76 scalars.
  HalsieModel<float> m(toy::spec16(Setting::C));
  const auto& first = m.temporal_encoders()[0].convs[0];
  CHECK(first.weight.numel() + first.bias.numel() == 2 * 2 * 9 + 2);

  // One more stage adds one LIF layer (2 scalars) besides its conv.
  auto c2 = toy::spec16(Setting::C), c3 = c2;
  c3.stages = 3;
  const std::size_t extra_conv = 3 * 3 * c3.stage_channels(1) * c3.stage_channels(2) + c3.stage_channels(2);
  const std::size_t mixer_first_delta =
      9 * c3.mixer_width * (c3.stage_channels(2) - c2.stage_channels(1));
  CHECK(count_params(c3) - count_params(c2) == extra_conv + 2 + mixer_first_delta);

  auto wide = NetworkSpec{};
  wide.base_channels *= 2;
  const double ratio = static_cast<double>(HalsieModel<float>(wide).temporal_encoders()[0].convs[3].weight.numel()) /
                       static_cast<double>(HalsieModel<float>(NetworkSpec{}).temporal_encoders()[0].convs[3].weight.numel());
  CHECK(ratio == 4.0);
}

TEST_CASE("forward shapes for every setting") {
  for (auto setting : {Setting::A, Setting::B, Setting::C, Setting::D, Setting::E, Setting::H}) {
    const auto s = toy::spec16(setting);
    HalsieModel<float> m(s, 3);
    const auto r = m.forward(nullptr, toy::random_input<float>(s, 1), true);
    CHECK(r.logits.shape() == ad::Shape{2, 3, 16, 16});
    CHECK(r.mixed.shape() == ad::Shape{2, s.mixer_width + s.low_width, s.stage_height(0), s.stage_width(0)});
    CHECK(r.fused.low.shape() == ad::Shape{2, s.stage_channels(0), 8, 8});
    CHECK(r.fused.high.shape() == ad::Shape{2, s.stage_channels(1), 4, 4});
  }
  auto s = toy::spec16();
  s.classes = 1;
  HalsieModel<float> one(s);
  CHECK(one.forward(nullptr, toy::random_input<float>(s, 2), false).logits.dim(1) == 1);
}

TEST_CASE("geometry mismatch is rejected") {
  const auto s = toy::spec16();
  HalsieModel<float> m(s);
  auto in = toy::random_input<float>(s, 1);
  in.bins.pop_back();
  CHECK_THROWS_AS(m.forward(nullptr, in, false), ShapeError);
  auto in2 = toy::random_input<float>(s, 1);
  in2.frame = ad::Tensor<float>({2, 1, 16, 15});
  CHECK_THROWS_AS(m.forward(nullptr, in2, false), ShapeError);
}

TEST_CASE("zero inputs give zero encoder features") {
  const auto s = toy::spec16();
  HalsieModel<double> m(s, 4);
  auto in = toy::random_input<double>(s, 1);
  for (auto& v : in.frame.values()) v = 0;
  for (auto& b : in.bins)
    for (auto& v : b.values()) v = 0;
  // Zero the biases of the temporal convs so a silent input stays silent.
  for (auto& c : m.temporal_encoders()[0].convs)
    for (auto& v : c.bias.values()) v = 0;
  model::TemporalActivity act;
  const auto t = m.tfe_forward(nullptr, m.temporal_encoders()[0], in.bins, &act);
  for (double v : t.low.values()) CHECK(v == 0.0);
  for (double v : t.high.values()) CHECK(v == 0.0);
  for (double r : act.input_rate) CHECK(r == 0.0);
  for (double r : act.output_rate) CHECK(r == 0.0);
  // BN with beta = 0 maps a constant-zero batch to zero.
  const auto sp = m.sfe_forward(nullptr, m.spatial_encoders()[0], in.frame, true);
  for (double v : sp.low.values()) CHECK(v == 0.0);
  for (double v : sp.high.values()) CHECK(v == 0.0);
}

TEST_CASE("temporal accumulator integrates repeated bins") {
  auto s = toy::spec16(Setting::C);
  HalsieModel<double> m(s, 5);
  auto& enc = m.temporal_encoders()[0];
  for (auto& p : enc.lifs) {
    p.v_th.values()[0] = std::numeric_limits<double>::infinity();
    p.leak.values()[0] = 1.0;
  }
  const auto in = toy::random_input<double>(s, 7);
  const std::vector<ad::Tensor<double>> one{in.bins[0]}, two{in.bins[0], in.bins[0]};
  const auto a = m.tfe_forward(nullptr, enc, one, nullptr);
  const auto b = m.tfe_forward(nullptr, enc, two, nullptr);
  for (std::size_t i = 0; i < a.low.numel(); ++i) CHECK(b.low[i] == doctest::Approx(2 * a.low[i]).epsilon(1e-12));
}

TEST_CASE("single bin is one feedforward LIF step") {
  auto s = toy::spec16(Setting::C);
  s.bins = 1;
  HalsieModel<double> m(s, 6);
  const auto in = toy::random_input<double>(s, 8, 1, 0.6);
  auto& enc = m.temporal_encoders()[0];
  const auto a = m.tfe_forward(nullptr, enc, in.bins, nullptr);
  // Manual feedforward: conv -> membrane = drive -> spike -> next stage.
  auto u0 = enc.convs[0](nullptr, in.bins[0]);
  ad::Tensor<double> o0(u0.shape());
  for (std::size_t i = 0; i < u0.numel(); ++i) o0[i] = u0[i] >= enc.lifs[0].threshold() ? 1.0 : 0.0;
  auto u1 = enc.convs[1](nullptr, o0);
  for (std::size_t i = 0; i < u0.numel(); ++i) CHECK(a.low[i] == u0[i]);
  for (std::size_t i = 0; i < u1.numel(); ++i) CHECK(a.high[i] == u1[i]);
}

TEST_CASE("mixer with zero branches keeps only the low pathway") {
  const auto s = toy::spec16();
  HalsieModel<double> m(s, 9);
  for (auto& c : m.mixer_cells()) {
    for (auto& v : c.conv.weight.values()) v = 0;
    for (auto& v : c.bn.gamma.values()) v = 0;
  }
  for (auto& r : m.mixer_reducers()) {
    for (auto& v : r.weight.values()) v = 0;
    for (auto& v : r.bias.values()) v = 0;
  }
  for (auto& v : m.high_mixer().bias.values()) v = 0;
  auto& low = m.low_mixer();
  std::fill(low.weight.values().begin(), low.weight.values().end(), 0.0);
  for (std::size_t c = 0; c < s.low_width; ++c) low.weight.values()[c * s.stage_channels(0) + c] = 1.0;
  std::fill(low.bias.values().begin(), low.bias.values().end(), 0.0);
  std::mt19937_64 rng(2);
  const auto uh = gradcheck::random_tensor(rng, {1, s.stage_channels(1), 4, 4});
  const auto ul = gradcheck::random_tensor(rng, {1, s.stage_channels(0), 8, 8});
  const auto mix = m.mmix_forward(nullptr, uh, ul, false);
  CHECK(mix.shape() == ad::Shape{1, s.mixer_width + s.low_width, 8, 8});
  const std::size_t hw = 64;
  for (std::size_t c = 0; c < s.mixer_width; ++c)
    for (std::size_t p = 0; p < hw; ++p) CHECK(mix[c * hw + p] == 0.0);
  for (std::size_t c = 0; c < s.low_width; ++c)
    for (std::size_t p = 0; p < hw; ++p) CHECK(mix[(s.mixer_width + c) * hw + p] == ul[c * hw + p]);
}

TEST_CASE("encoder outputs are mixed by addition") {
  const auto s = toy::spec16();
  HalsieModel<double> m(s, 10);
  const auto in = toy::random_input<double>(s, 3);
  const auto r = m.forward(nullptr, in, false);
  const auto t = m.tfe_forward(nullptr, m.temporal_encoders()[0], in.bins, nullptr);
  const auto f = m.sfe_forward(nullptr, m.spatial_encoders()[0], in.frame, false);
  for (std::size_t i = 0; i < t.low.numel(); ++i) CHECK(r.fused.low[i] == t.low[i] + f.low[i]);
  for (std::size_t i = 0; i < t.high.numel(); ++i) CHECK(r.fused.high[i] == t.high[i] + f.high[i]);
}

TEST_CASE("modality invariance of single-input settings") {
  for (auto [setting, swap_events] : {std::pair{Setting::A, true}, std::pair{Setting::C, false}}) {
    const auto s = toy::spec16(setting);
    HalsieModel<float> m(s, 11);
    auto in = toy::random_input<float>(s, 1);
    const auto base = m.forward(nullptr, in, false).logits;
    const auto other = toy::random_input<float>(s, 99);
    if (swap_events) in.bins = other.bins;
    else in.frame = other.frame;
    const auto again = m.forward(nullptr, in, false).logits;
    CHECK(std::equal(base.values().begin(), base.values().end(), again.values().begin()));
  }
}

TEST_CASE("every learnable receives a gradient") {
  const auto s = toy::spec16();
  HalsieModel<float> m(s, 12);
  const auto in = toy::random_input<float>(s, 4, 2, 0.5);
  ad::Tape<float> tape;
  auto r = m.forward(&tape, in, true);
  std::vector<std::int32_t> targets(2 * 16 * 16);
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<std::int32_t>(i % 3);
  const std::vector<float> w{1, 1, 1};
  auto loss = ad::weighted_cross_entropy<float>(&tape, r.logits, targets, w, 255);
  tape.backward(loss);
  for (const auto& p : m.parameters()) CHECK(p.has_grad());
  bool lif_moved = false;
  for (const auto& p : m.lif_params()) lif_moved |= p.v_th.grad()[0] != 0.0f || p.leak.grad()[0] != 0.0f;
  double spikes = 0;
  for (const auto& a : r.activity) spikes += a.output_rate[0];
  if (spikes > 0) CHECK(lif_moved);
}

TEST_CASE("end-to-end finite differences on the relaxed toy network") {
  auto s = toy::spec16();
  s.spike_mode = lif::SpikeMode::Relaxed;
  s.surrogate_gamma = 2.0;
  s.leaky_slope = 0.1;
  HalsieModel<double> m(s, 13);
  const auto in = toy::random_input<double>(s, 5);
  std::mt19937_64 rng(14);
  // Perturb a sample of scalars from every tensor rather than all of them.
  const auto params = m.parameters();
  std::vector<double> w;
  const auto loss_value = [&] {
    const auto out = m.forward(nullptr, in, true).logits;
    if (w.empty()) {
      w.resize(out.numel());
      for (auto& v : w) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    }
    double l = 0;
    for (std::size_t i = 0; i < w.size(); ++i) l += w[i] * out[i];
    return l;
  };
  loss_value();
  ad::Tape<double> tape;
  auto out = m.forward(&tape, in, true).logits;
  auto loss = ad::weighted_sum<double>(&tape, out, w);
  tape.backward(loss);
  double worst = 0;
  std::size_t checked = 0;
  for (auto p : params) {
    for (int k = 0; k < 3; ++k) {
      const auto i = gradcheck::pick(rng, 0, p.numel() - 1);
      const double x0 = p[i];
      p[i] = x0 + 1e-6;
      const double up = loss_value();
      p[i] = x0 - 1e-6;
      const double down = loss_value();
      p[i] = x0;
      const double numeric = (up - down) / 2e-6;
      const double analytic = p.grad()[i];
      const double scale = std::max(std::abs(numeric), std::abs(analytic));
      if (scale < 1e-6) continue;
      worst = std::max(worst, std::abs(numeric - analytic) / scale);
      ++checked;
    }
  }
  CHECK(checked > 50);
  CHECK(worst < 1e-4);
}

TEST_CASE("determinism and checkpoint round trip") {
  const auto s = toy::spec16();
  HalsieModel<float> a(s, 21), b(s, 21), c(s, 22);
  const auto in = toy::random_input<float>(s, 6);
  const auto la = a.forward(nullptr, in, false).logits, lb = b.forward(nullptr, in, false).logits;
  CHECK(std::equal(la.values().begin(), la.values().end(), lb.values().begin()));

  // Training mode moves the running statistics so the round trip covers them.
  a.forward(nullptr, in, true);
  std::stringstream first;
  write_checkpoint(first, a);
  read_checkpoint(first, c);
  std::stringstream second;
  write_checkpoint(second, c);
  CHECK(first.str() == second.str());
  CHECK(first.str().substr(0, 8) == "HALSIE01");
  const auto l1 = a.forward(nullptr, in, false).logits, l2 = c.forward(nullptr, in, false).logits;
  CHECK(std::equal(l1.values().begin(), l1.values().end(), l2.values().begin()));

  HalsieModel<float> other(toy::spec16(Setting::A));
  std::stringstream again(first.str());
  CHECK_THROWS_AS(read_checkpoint(again, other), ShapeError);
  std::stringstream junk("NOTACKPT");
  CHECK_THROWS_AS(read_checkpoint(junk, c), IoError);
}

TEST_CASE("argmax breaks ties toward the lowest id") {
  const auto logits = ad::Tensor<float>::from({1, 3, 1, 3}, {0, 1, 2, 0, 1, 5, 0, 0, 5});
  CHECK(argmax_classes(logits) == std::vector<std::uint8_t>{0, 0, 1});
}
