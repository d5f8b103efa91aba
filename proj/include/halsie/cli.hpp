#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "halsie/autodiff/tensor.hpp"

namespace halsie::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kInvalid = 3 };

// Full command line including argv[0]. Normal output goes to `out`,
// diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// LGTS0001 | u32 N, K, H, W | f32 data
void save_logits(const std::string& path, const ad::Tensor<float>& logits);
ad::Tensor<float> load_logits(const std::string& path);

}  // namespace halsie::cli
