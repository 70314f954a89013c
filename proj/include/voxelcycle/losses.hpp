#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "voxelcycle/autograd.hpp"
#include "voxelcycle/networks.hpp"

namespace voxelcycle {

// Differentiable maps recorded on a tape. Real networks are adapted with
// bind_*(); tests substitute closed-form doubles.
using Translator = std::function<Var(Tape&, Var)>;
using Critic = std::function<Var(Tape&, Var)>;
using Segmenter = std::function<Var(Tape&, Var)>;

Translator bind_translator(GeneratorNet& net, bool trainable);
Critic bind_critic(DiscriminatorNet& net, bool trainable);
Segmenter bind_segmenter(SegmentorNet& net, bool trainable);

struct LossWeights {
  double lambda = 10.0;  // cycle
  double gamma = 1.0;    // shape

  void validate() const;
};

// Per-step scalar values of every objective term.
struct LossReport {
  double gan_g_A = 0.0;
  double gan_g_B = 0.0;
  double gan_d_A = 0.0;
  double gan_d_B = 0.0;
  double cycle = 0.0;
  double shape = 0.0;
  double seg_A = 0.0;
  double seg_B = 0.0;
  double total = 0.0;

  // "step,gan_g_A,...,total"
  static std::string csv_header();
  std::string csv_row(std::uint64_t step) const;
};

// Least-squares adversarial terms.
Var gan_loss_generator(Var d_out_on_fake);
Var gan_loss_discriminator(Var d_out_real, Var d_out_fake);

// G_B maps A -> B, G_A maps B -> A.
// l1(G_A(G_B(x_A)), x_A) + l1(G_B(G_A(x_B)), x_B)
Var cycle_loss(Tape& tape, const Translator& g_a, const Translator& g_b, Var x_a, Var x_b);

// CE(S_A(G_A(x_B)), y_B) + CE(S_B(G_B(x_A)), y_A): the source label
// supervises the translated volume.
Var shape_loss(Tape& tape, const Segmenter& s_a, const Segmenter& s_b, const Translator& g_a, const Translator& g_b,
               Var x_a, std::span<const std::uint8_t> y_a, Var x_b, std::span<const std::uint8_t> y_b);

// Mean cross-entropy of `s` over a stacked batch.
Var segmentation_loss(Tape& tape, const Segmenter& s, Var volumes, std::span<const std::uint8_t> labels);

struct TranslationModels {
  Translator g_a, g_b;
  Critic d_a, d_b;
  Segmenter s_a, s_b;
};

// Generator-side objective with every intermediate kept for reuse.
struct GeneratorObjective {
  Var fake_a, fake_b;  // G_A(x_B), G_B(x_A)
  Var rec_a, rec_b;    // G_A(G_B(x_A)), G_B(G_A(x_B))
  Var gan_g_a, gan_g_b, cycle, shape;  // shape is invalid when gamma == 0
  Var total;
  LossReport report;  // generator fields and total filled in
};

// total = gan_g_A + gan_g_B + lambda * cycle + gamma * shape. With gamma == 0
// the shape term is neither evaluated nor reported, so no gradient reaches the
// segmentors.
GeneratorObjective full_objective(Tape& tape, const TranslationModels& m, Var x_a, std::span<const std::uint8_t> y_a,
                                  Var x_b, std::span<const std::uint8_t> y_b, const LossWeights& w);

}  // namespace voxelcycle
