#pragma once

#include <cstdint>
#include <vector>

#include "voxelcycle/autograd.hpp"

namespace voxelcycle {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moments for one parameter list, in the list's order.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

// One bias-corrected Adam update of `params` from their `grad` buffers.
// Moments are created lazily (zero) on the first call.
void adam_step(std::vector<Parameter>& params, AdamState& state, double lr, const AdamConfig& config);

}  // namespace voxelcycle
