#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "voxelcycle/autograd.hpp"

namespace voxelcycle {

// Maps tape variables (one per input tensor) to an output of any shape.
using GradCheckFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckCase {
  std::string op;
  double max_rel_error = 0.0;
  std::size_t trials = 0;
  std::size_t elements = 0;  // input elements perturbed across all trials
};

// Central finite differences of sum(f(inputs) * r) for a fixed random
// projection r, against the tape gradient. The relative error of one element
// is |analytic - numeric| / max(|analytic|, |numeric|, floor).
double gradcheck(const GradCheckFn& f, const std::vector<Tensor>& inputs, std::uint64_t seed, double h = 1e-4,
                 double floor = 1e-6, std::size_t* elements = nullptr);

// Every differentiable operation of the engine on random small inputs,
// `trials` seeds each. Inputs avoid kinks (ReLU at 0, maxpool ties, L1 at
// equality) by more than 2h.
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, std::size_t trials = 20, double h = 1e-4);

}  // namespace voxelcycle
