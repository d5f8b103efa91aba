#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "halsie/model.hpp"

namespace halsie::energy {

// 45nm CMOS costs per operation.
inline constexpr double kMacPicojoules = 4.6;
inline constexpr double kAcPicojoules = 0.9;
// The same constants in tenths of a pJ, so energy totals stay integral.
inline constexpr std::uint64_t kMacTenths = 46;
inline constexpr std::uint64_t kAcTenths = 9;

enum class LayerKind { ANN, SNN };

const char* kind_name(LayerKind k);

struct LayerProfile {
  std::string name;
  LayerKind kind = LayerKind::ANN;
  std::uint64_t neurons = 0;      // M = H_out * W_out * C_out
  std::uint64_t connections = 0;  // C = k_h * k_w * C_in
  double rate = 1.0;              // F, mean input activity per timestep; 1 for ANN layers

  void validate() const;
};

// ANN: M*C. SNN: N*M*C*F.
double layer_flops(const LayerProfile& profile, std::size_t timesteps);

struct LayerCost {
  LayerProfile profile;
  double flops = 0;
};

struct EnergyReport {
  std::uint64_t flops_ann = 0;
  std::uint64_t flops_snn = 0;
  std::uint64_t energy_tenth_pj = 0;
  std::size_t timesteps = 1;
  std::vector<LayerCost> layers;
  std::string sample_set;  // description of what F was measured on

  double energy_pj() const { return static_cast<double>(energy_tenth_pj) / 10.0; }
  double energy_mj() const { return static_cast<double>(energy_tenth_pj) * 1e-10; }
};

// Rounds both totals to whole operations before pricing them.
EnergyReport estimate_energy(double flops_ann, double flops_snn);
EnergyReport estimate_energy(std::span<const LayerProfile> profiles, std::size_t timesteps);

// Mean input activity F for every spiking conv, in conv_layers() order.
template <typename T>
std::vector<double> measure_firing_rates(model::HalsieModel<T>& net, std::span<const model::ModelInput<T>> samples);

// Profiles every conv (BN, activations and upsampling are free) and prices
// them with the measured rates. timesteps = 0 means the spec's bin count.
template <typename T>
EnergyReport profile_model(model::HalsieModel<T>& net, std::span<const model::ModelInput<T>> samples,
                           std::size_t timesteps = 0, std::string sample_set = {});

void write_csv(std::ostream& out, const EnergyReport& report);
void write_table(std::ostream& out, const EnergyReport& report);

}  // namespace halsie::energy
