#include "voxelcycle/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "voxelcycle/ops.hpp"
#include "voxelcycle/phantom.hpp"

namespace voxelcycle {
namespace {

Tensor random_tensor(const Dims& d, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(d);
  for (auto& x : t.data()) x = u(rng);
  return t;
}

// Uniform in [-1, 1] with |x| >= gap.
Tensor away_from_zero(const Dims& d, std::mt19937_64& rng, double gap) {
  std::uniform_real_distribution<double> mag(gap, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor t(d);
  for (auto& x : t.data()) x = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

// Distinct values spaced `gap` apart in random order.
Tensor distinct_values(const Dims& d, std::mt19937_64& rng, double gap) {
  Tensor t(d);
  std::vector<std::size_t> order(t.numel());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < order.size(); ++i) {
    t[i] = (static_cast<double>(order[i]) - 0.5 * static_cast<double>(order.size())) * gap;
  }
  return t;
}

Var project(Tape& tape, Var out, const Tensor& r) {
  const Tensor& v = out.value();
  double s = 0.0;
  for (std::size_t i = 0; i < v.numel(); ++i) s += v[i] * r[i];
  return tape.record(Tensor::scalar(s), {out}, [r](BackwardContext& ctx) {
    if (ctx.in_grads[0] == nullptr) return;
    const double g = ctx.out_grad[0];
    Tensor& gi = *ctx.in_grads[0];
    for (std::size_t i = 0; i < gi.numel(); ++i) gi[i] += g * r[i];
  });
}

double evaluate(const GradCheckFn& f, const std::vector<Tensor>& inputs, const Tensor& r) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  const Tensor& v = f(tape, vars).value();
  double s = 0.0;
  for (std::size_t i = 0; i < v.numel(); ++i) s += v[i] * r[i];
  return s;
}

}  // namespace

double gradcheck(const GradCheckFn& f, const std::vector<Tensor>& inputs, std::uint64_t seed, double h, double floor,
                 std::size_t* elements) {
  std::mt19937_64 rng(seed);
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  Var out = f(tape, vars);
  const Tensor r = random_tensor(out.dims(), rng);
  tape.backward(project(tape, out, r));

  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& analytic = tape.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      const double x = inputs[k][i];
      probe[k][i] = x + h;
      const double up = evaluate(f, probe, r);
      probe[k][i] = x - h;
      const double down = evaluate(f, probe, r);
      probe[k][i] = x;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    if (elements) *elements += inputs[k].numel();
  }
  return worst;
}

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed, std::size_t trials, double h) {
  struct Spec {
    std::string op;
    std::function<std::pair<GradCheckFn, std::vector<Tensor>>(std::mt19937_64&)> make;
  };
  const double gap = 4.0 * h;
  const std::vector<Spec> specs = {
      {"conv3d(stride=1,pad=1)",
       [](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return conv3d(v[0], v[1], v[2], 1, 1); }),
                          std::vector<Tensor>{random_tensor({2, 2, 4, 4, 4}, g), random_tensor({3, 2, 3, 3, 3}, g),
                                              random_tensor({3}, g)}};
       }},
      {"conv3d(stride=2,pad=1)",
       [](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return conv3d(v[0], v[1], v[2], 2, 1); }),
                          std::vector<Tensor>{random_tensor({1, 2, 4, 5, 4}, g), random_tensor({3, 2, 3, 3, 3}, g),
                                              random_tensor({3}, g)}};
       }},
      {"conv3d(kernel=1)",
       [](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return conv3d(v[0], v[1], v[2], 1, 0); }),
                          std::vector<Tensor>{random_tensor({1, 3, 2, 3, 2}, g), random_tensor({2, 3, 1, 1, 1}, g),
                                              random_tensor({2}, g)}};
       }},
      {"maxpool3d",
       [gap](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return maxpool3d(v[0]); }),
                          std::vector<Tensor>{distinct_values({1, 2, 4, 4, 4}, g, gap)}};
       }},
      {"upsample_nearest3d",
       [](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return upsample_nearest3d(v[0]); }),
                          std::vector<Tensor>{random_tensor({1, 2, 2, 3, 2}, g)}};
       }},
      {"instance_norm",
       [](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return instance_norm(v[0], v[1], v[2]); }),
                          std::vector<Tensor>{random_tensor({2, 3, 2, 3, 3}, g), random_tensor({3}, g, 0.5, 1.5),
                                              random_tensor({3}, g)}};
       }},
      {"relu",
       [gap](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return relu(v[0]); }),
                          std::vector<Tensor>{away_from_zero({1, 2, 3, 3, 3}, g, gap)}};
       }},
      {"leaky_relu",
       [gap](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return leaky_relu(v[0], 0.2); }),
                          std::vector<Tensor>{away_from_zero({1, 2, 3, 3, 3}, g, gap)}};
       }},
      {"tanh",
       [](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return tanh(v[0]); }),
                          std::vector<Tensor>{random_tensor({1, 2, 3, 3, 3}, g, -2.0, 2.0)}};
       }},
      {"softmax_cross_entropy",
       [](std::mt19937_64& g) {
         std::uniform_int_distribution<int> cls(0, 3);
         std::vector<std::uint8_t> labels(2 * 2 * 3 * 2);
         for (auto& l : labels) l = static_cast<std::uint8_t>(cls(g));
         return std::pair{GradCheckFn([labels](Tape&, const std::vector<Var>& v) {
                            return softmax_cross_entropy(v[0], labels);
                          }),
                          std::vector<Tensor>{random_tensor({2, 4, 2, 3, 2}, g, -3.0, 3.0)}};
       }},
      {"l1_loss",
       [gap](std::mt19937_64& g) {
         Tensor a = random_tensor({1, 1, 3, 3, 3}, g);
         Tensor d = away_from_zero(a.dims(), g, gap);
         Tensor b = a;
         for (std::size_t i = 0; i < b.numel(); ++i) b[i] = a[i] + d[i];
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return l1_loss(v[0], v[1]); }),
                          std::vector<Tensor>{a, b}};
       }},
      {"mse_loss",
       [](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return mse_loss(v[0], 0.3); }),
                          std::vector<Tensor>{random_tensor({1, 2, 2, 2, 3}, g)}};
       }},
      {"concat_channels",
       [](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return concat_channels(v[0], v[1]); }),
                          std::vector<Tensor>{random_tensor({2, 1, 2, 2, 2}, g), random_tensor({2, 3, 2, 2, 2}, g)}};
       }},
      {"add",
       [](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); }),
                          std::vector<Tensor>{random_tensor({1, 2, 2, 2, 2}, g), random_tensor({1, 2, 2, 2, 2}, g)}};
       }},
      {"scale",
       [](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return scale(v[0], -1.7); }),
                          std::vector<Tensor>{random_tensor({1, 2, 2, 2, 2}, g)}};
       }},
      {"sum",
       [](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return sum(v[0]); }),
                          std::vector<Tensor>{random_tensor({1, 2, 2, 3, 2}, g)}};
       }},
      {"mean",
       [](std::mt19937_64& g) {
         return std::pair{GradCheckFn([](Tape&, const std::vector<Var>& v) { return mean(v[0]); }),
                          std::vector<Tensor>{random_tensor({1, 2, 2, 3, 2}, g)}};
       }},
      {"gather_voxels",
       [](std::mt19937_64& g) {
         std::vector<std::size_t> source(2 * 3 * 2);
         std::iota(source.begin(), source.end(), 0);
         std::shuffle(source.begin(), source.end(), g);
         return std::pair{GradCheckFn([source](Tape&, const std::vector<Var>& v) {
                            return gather_voxels(v[0], source);
                          }),
                          std::vector<Tensor>{random_tensor({2, 2, 2, 3, 2}, g)}};
       }},
  };

  std::vector<GradCheckCase> out;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    GradCheckCase c;
    c.op = specs[k].op;
    for (std::size_t t = 0; t < trials; ++t) {
      std::mt19937_64 rng(mix_seed(mix_seed(seed, k), t));
      auto [f, inputs] = specs[k].make(rng);
      c.max_rel_error = std::max(c.max_rel_error, gradcheck(f, inputs, rng(), h, 1e-6, &c.elements));
      ++c.trials;
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace voxelcycle
