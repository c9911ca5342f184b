#pragma once

// Encoder-decoder loss evaluated by the 64-bit build of the tensor core, for
// finite differences of the 32-bit model without float rounding noise.

#include <map>
#include <string>
#include <vector>

#include "nmt/config.hpp"

namespace nmt::testing {

// Summed label-smoothed cross-entropy of the batch built from src/tgt.
double model_loss_f64(const std::map<std::string, std::vector<double>>& params, const ModelConfig& cfg,
                      const std::vector<std::vector<int>>& src, const std::vector<std::vector<int>>& tgt,
                      double smoothing);

}  // namespace nmt::testing
