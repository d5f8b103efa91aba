#pragma once

#include <iosfwd>
#include <string>

#include "halsie/model.hpp"

namespace halsie::model {

// HALSIE01 | u32 count | { u32 name_len, name, u32 rank, u32 dims..., f32 data... }
// Running BN statistics are stored alongside the learnables so eval-mode
// inference round-trips exactly.
template <typename T>
void write_checkpoint(std::ostream& out, HalsieModel<T>& model);
template <typename T>
void save_checkpoint(const std::string& path, HalsieModel<T>& model);

// Names, order and shapes must match the model exactly.
template <typename T>
void read_checkpoint(std::istream& in, HalsieModel<T>& model);
template <typename T>
void load_checkpoint(const std::string& path, HalsieModel<T>& model);

// Sidecar spec file written next to checkpoints by the trainer.
std::string spec_sidecar_path(const std::string& checkpoint_path);

}  // namespace halsie::model
