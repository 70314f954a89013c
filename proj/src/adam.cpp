#include "voxelcycle/adam.hpp"

#include <cmath>

#include "voxelcycle/errors.hpp"

namespace voxelcycle {

void adam_step(std::vector<Parameter>& params, AdamState& state, double lr, const AdamConfig& config) {
  if (!(lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.dims());
      state.v.emplace_back(p.value.dims());
    }
  }
  if (state.m.size() != params.size()) throw ConfigError("adam: state does not match parameter list");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (p.grad.dims() != p.value.dims()) p.zero_grad();
    require_finite(p.grad, "adam gradient");
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    auto x = p.value.data();
    auto g = p.grad.data();
    for (std::size_t k = 0; k < x.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      x[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.eps);
    }
  }
}

}  // namespace voxelcycle
