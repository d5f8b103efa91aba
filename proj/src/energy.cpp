#include "halsie/energy.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace halsie::energy {

const char* kind_name(LayerKind k) { return k == LayerKind::ANN ? "ANN" : "SNN"; }

void LayerProfile::validate() const {
  if (kind == LayerKind::ANN && rate != 1.0) throw ConfigError("ANN layer '" + name + "' must have F = 1");
  if (!(rate >= 0.0) || !std::isfinite(rate)) throw ConfigError("layer '" + name + "' has invalid rate");
}

double layer_flops(const LayerProfile& profile, std::size_t timesteps) {
  profile.validate();
  const double mc = static_cast<double>(profile.neurons) * static_cast<double>(profile.connections);
  if (profile.kind == LayerKind::ANN) return mc;
  if (timesteps < 1) throw ConfigError("spiking layers need at least one timestep");
  return static_cast<double>(timesteps) * mc * profile.rate;
}

EnergyReport estimate_energy(double flops_ann, double flops_snn) {
  if (flops_ann < 0 || flops_snn < 0) throw ConfigError("FLOP counts must be non-negative");
  EnergyReport r;
  r.flops_ann = static_cast<std::uint64_t>(std::llround(flops_ann));
  r.flops_snn = static_cast<std::uint64_t>(std::llround(flops_snn));
  r.energy_tenth_pj = r.flops_ann * kMacTenths + r.flops_snn * kAcTenths;
  return r;
}

EnergyReport estimate_energy(std::span<const LayerProfile> profiles, std::size_t timesteps) {
  double ann = 0, snn = 0;
  std::vector<LayerCost> layers;
  for (const auto& p : profiles) {
    const double f = layer_flops(p, timesteps);
    (p.kind == LayerKind::ANN ? ann : snn) += f;
    layers.push_back({p, f});
  }
  auto r = estimate_energy(ann, snn);
  r.timesteps = timesteps;
  r.layers = std::move(layers);
  return r;
}

template <typename T>
std::vector<double> measure_firing_rates(model::HalsieModel<T>& net, std::span<const model::ModelInput<T>> samples) {
  if (samples.empty()) throw ConfigError("firing rates need at least one sample");
  std::vector<double> sums;
  for (const auto& s : samples) {
    const auto result = net.forward(nullptr, s, false);
    std::size_t k = 0;
    for (const auto& act : result.activity)
      for (double rate : act.input_rate) {
        if (sums.size() <= k) sums.push_back(0.0);
        sums[k++] += rate;
      }
  }
  for (auto& v : sums) v /= static_cast<double>(samples.size());
  return sums;
}

template <typename T>
EnergyReport profile_model(model::HalsieModel<T>& net, std::span<const model::ModelInput<T>> samples,
                           std::size_t timesteps, std::string sample_set) {
  if (timesteps == 0) timesteps = net.spec().bins;
  const auto layers = net.conv_layers();
  bool any_spiking = false;
  for (const auto& l : layers) any_spiking |= l.spiking;
  std::vector<double> rates;
  if (any_spiking) rates = measure_firing_rates(net, samples);

  std::vector<LayerProfile> profiles;
  std::size_t k = 0;
  for (const auto& l : layers) {
    LayerProfile p;
    p.name = l.name;
    p.kind = l.spiking ? LayerKind::SNN : LayerKind::ANN;
    p.neurons = l.out_h * l.out_w * l.out_channels;
    p.connections = l.kernel_h * l.kernel_w * l.in_channels;
    p.rate = l.spiking ? rates.at(k++) : 1.0;
    profiles.push_back(std::move(p));
  }
  auto report = estimate_energy(profiles, timesteps);
  report.sample_set = std::move(sample_set);
  return report;
}

void write_csv(std::ostream& out, const EnergyReport& report) {
  out << "layer,kind,M,C,F,flops\n";
  out << std::setprecision(10);
  for (const auto& l : report.layers)
    out << l.profile.name << ',' << kind_name(l.profile.kind) << ',' << l.profile.neurons << ','
        << l.profile.connections << ',' << l.profile.rate << ',' << std::fixed << std::setprecision(1) << l.flops
        << std::defaultfloat << std::setprecision(10) << '\n';
  out << "total_ann,ANN,,,," << report.flops_ann << '\n';
  out << "total_snn,SNN,,,," << report.flops_snn << '\n';
  out << "total,,,,," << report.flops_ann + report.flops_snn << '\n';
}

void write_table(std::ostream& out, const EnergyReport& report) {
  std::size_t width = 5;
  for (const auto& l : report.layers) width = std::max(width, l.profile.name.size());
  const auto flags = out.flags();
  out << std::left << std::setw(static_cast<int>(width)) << "layer" << "  kind  " << std::right << std::setw(10)
      << "M" << std::setw(8) << "C" << std::setw(10) << "F" << std::setw(16) << "FLOPs" << '\n';
  for (const auto& l : report.layers)
    out << std::left << std::setw(static_cast<int>(width)) << l.profile.name << "  " << kind_name(l.profile.kind)
        << "   " << std::right << std::setw(10) << l.profile.neurons << std::setw(8) << l.profile.connections
        << std::setw(10) << std::fixed << std::setprecision(5) << l.profile.rate << std::setw(16)
        << std::setprecision(0) << l.flops << '\n';
  out << std::defaultfloat;
  out << "timesteps: " << report.timesteps << '\n';
  if (!report.sample_set.empty()) out << "rates measured on: " << report.sample_set << '\n';
  out << "FLOPs ANN: " << std::setprecision(4) << static_cast<double>(report.flops_ann) / 1e9 << " G\n";
  out << "FLOPs SNN: " << static_cast<double>(report.flops_snn) / 1e9 << " G\n";
  out << "energy:    " << std::fixed << std::setprecision(4) << report.energy_mj() << " mJ\n";
  out.flags(flags);
}

template std::vector<double> measure_firing_rates(model::HalsieModel<float>&,
                                                  std::span<const model::ModelInput<float>>);
template std::vector<double> measure_firing_rates(model::HalsieModel<double>&,
                                                  std::span<const model::ModelInput<double>>);
template EnergyReport profile_model(model::HalsieModel<float>&, std::span<const model::ModelInput<float>>,
                                    std::size_t, std::string);
template EnergyReport profile_model(model::HalsieModel<double>&, std::span<const model::ModelInput<double>>,
                                    std::size_t, std::string);

}  // namespace halsie::energy
