#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "voxelcycle/errors.hpp"
#include "voxelcycle/gradcheck.hpp"
#include "voxelcycle/losses.hpp"
#include "voxelcycle/ops.hpp"

using namespace voxelcycle;

namespace {

const Translator kIdentity = [](Tape&, Var x) { return x; };
const Translator kZero = [](Tape&, Var x) { return scale(x, 0.0); };

// C-channel logits that do not depend on the input.
Segmenter constant_logits(std::vector<double> per_class) {
  return [per_class](Tape& t, Var x) {
    const Dims& d = x.dims();
    Tensor y({d[0], per_class.size(), d[2], d[3], d[4]});
    const std::size_t vox = d[2] * d[3] * d[4];
    for (std::size_t n = 0; n < d[0]; ++n)
      for (std::size_t c = 0; c < per_class.size(); ++c)
        for (std::size_t i = 0; i < vox; ++i) y[(n * per_class.size() + c) * vox + i] = per_class[c];
    return t.constant(std::move(y));
  };
}

// Logit of +20 for the true label and -20 elsewhere, read from a label map
// captured at construction.
Segmenter saturated_oracle(std::vector<std::uint8_t> labels, std::size_t classes) {
  return [labels, classes](Tape& t, Var x) {
    const Dims& d = x.dims();
    const std::size_t vox = d[2] * d[3] * d[4];
    Tensor y({d[0], classes, d[2], d[3], d[4]}, -20.0);
    for (std::size_t n = 0; n < d[0]; ++n)
      for (std::size_t i = 0; i < vox; ++i) y[(n * classes + labels[n * vox + i]) * vox + i] = 20.0;
    return t.constant(std::move(y));
  };
}

const Critic kFooled = [](Tape& t, Var x) {
  const Dims& d = x.dims();
  return t.constant(Tensor({d[0], 1, 1, 1, 1}, 1.0));
};

// Tiny smooth stand-ins for networks, with trainable parameters as inputs.
Translator affine_translator(Var w, Var b) {
  return [w, b](Tape&, Var x) { return tanh(conv3d(x, w, b, 1, 1)); };
}

Segmenter conv_segmenter(Var w, Var b) {
  return [w, b](Tape&, Var x) { return conv3d(x, w, b, 1, 1); };
}

std::vector<std::uint8_t> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::vector<std::uint8_t> l(n);
  for (auto& v : l) v = static_cast<std::uint8_t>(oracle::pick(rng, 0, classes - 1));
  return l;
}

}  // namespace

TEST(GanLoss, GeneratorExamples) {
  Tape t;
  EXPECT_EQ(gan_loss_generator(t.constant(Tensor({1, 1, 2, 2, 2}, 1.0))).value().item(), 0.0);
  EXPECT_EQ(gan_loss_generator(t.constant(Tensor({1, 1, 2, 2, 2}, 0.0))).value().item(), 1.0);
  std::mt19937_64 rng(1);
  for (int it = 0; it < 50; ++it) {
    const Tensor d = oracle::random_tensor({2, 1, 2, 1, 3}, rng, -2, 2);
    double s = 0.0;
    for (double v : d.data()) s += (v - 1) * (v - 1);
    EXPECT_NEAR(gan_loss_generator(t.constant(d)).value().item(), s / d.numel(), 1e-12);
  }
}

TEST(GanLoss, DiscriminatorExamples) {
  Tape t;
  const Tensor ones({1, 1, 2, 2, 2}, 1.0), zeros({1, 1, 2, 2, 2}, 0.0);
  EXPECT_EQ(gan_loss_discriminator(t.constant(ones), t.constant(zeros)).value().item(), 0.0);
  EXPECT_EQ(gan_loss_discriminator(t.constant(zeros), t.constant(ones)).value().item(), 1.0);
  std::mt19937_64 rng(2);
  for (int it = 0; it < 50; ++it) {
    const Tensor r = oracle::random_tensor({1, 1, 2, 2, 2}, rng, -2, 2), f = oracle::random_tensor({1, 1, 2, 2, 2}, rng, -2, 2);
    double sr = 0.0, sf = 0.0;
    for (double v : r.data()) sr += (v - 1) * (v - 1);
    for (double v : f.data()) sf += v * v;
    EXPECT_NEAR(gan_loss_discriminator(t.constant(r), t.constant(f)).value().item(), 0.5 * (sr + sf) / 8.0, 1e-12);
  }
}

TEST(CycleLoss, IdentityGeneratorsGiveZero) {
  std::mt19937_64 rng(3);
  Tape t;
  Var xa = t.constant(oracle::random_tensor({2, 1, 2, 2, 2}, rng));
  Var xb = t.constant(oracle::random_tensor({2, 1, 2, 2, 2}, rng));
  EXPECT_EQ(cycle_loss(t, kIdentity, kIdentity, xa, xb).value().item(), 0.0);
}

TEST(CycleLoss, ZeroGeneratorGivesMeanAbs) {
  std::mt19937_64 rng(4);
  const Tensor a = oracle::random_tensor({1, 1, 2, 3, 2}, rng);
  double s = 0.0;
  for (double v : a.data()) s += std::abs(v);
  Tape t;
  Var xa = t.constant(a);
  Var xb = t.constant(Tensor(a.dims()));  // zero input: the B->A->B term vanishes
  EXPECT_NEAR(cycle_loss(t, kZero, kIdentity, xa, xb).value().item(), s / a.numel(), 1e-14);
}

TEST(CycleLoss, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(5);
  const GradCheckFn f = [](Tape& t, const std::vector<Var>& v) {
    return cycle_loss(t, affine_translator(v[2], v[3]), affine_translator(v[4], v[5]), v[0], v[1]);
  };
  const std::vector<Tensor> inputs = {
      oracle::random_tensor({1, 1, 3, 3, 3}, rng), oracle::random_tensor({1, 1, 3, 3, 3}, rng),
      oracle::random_tensor({1, 1, 3, 3, 3}, rng, -0.3, 0.3), oracle::random_tensor({1}, rng),
      oracle::random_tensor({1, 1, 3, 3, 3}, rng, -0.3, 0.3), oracle::random_tensor({1}, rng)};
  EXPECT_LT(gradcheck(f, inputs, 6), 1e-4);
}

TEST(ShapeLoss, UniformLogitsGiveTwoLogC) {
  std::mt19937_64 rng(6);
  Tape t;
  Var xa = t.constant(oracle::random_tensor({1, 1, 2, 2, 2}, rng));
  Var xb = t.constant(oracle::random_tensor({1, 1, 2, 2, 2}, rng));
  const auto ya = random_labels(8, 5, rng), yb = random_labels(8, 5, rng);
  const Segmenter u = constant_logits({0.3, 0.3, 0.3, 0.3, 0.3});
  const double v = shape_loss(t, u, u, kIdentity, kIdentity, xa, ya, xb, yb).value().item();
  EXPECT_NEAR(v, 2.0 * std::log(5.0), 1e-12);
  EXPECT_NEAR(v, 3.2189, 1e-4);
}

TEST(ShapeLoss, SourceLabelSupervisesTranslation) {
  std::mt19937_64 rng(7);
  Tape t;
  Var xa = t.constant(oracle::random_tensor({1, 1, 2, 2, 2}, rng));
  Var xb = t.constant(oracle::random_tensor({1, 1, 2, 2, 2}, rng));
  const auto ya = random_labels(8, 3, rng), yb = random_labels(8, 3, rng);
  // S_A sees G_A(x_B) and must reproduce y_B; S_B sees G_B(x_A) and y_A.
  const double v =
      shape_loss(t, saturated_oracle(yb, 3), saturated_oracle(ya, 3), kIdentity, kIdentity, xa, ya, xb, yb).value().item();
  EXPECT_LT(v, 1e-6);
  const double swapped =
      shape_loss(t, saturated_oracle(ya, 3), saturated_oracle(yb, 3), kIdentity, kIdentity, xa, ya, xb, yb).value().item();
  EXPECT_GT(swapped, 1.0);
}

TEST(ShapeLoss, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(8);
  const auto ya = random_labels(27, 3, rng), yb = random_labels(27, 3, rng);
  const GradCheckFn f = [&](Tape& t, const std::vector<Var>& v) {
    return shape_loss(t, conv_segmenter(v[2], v[3]), conv_segmenter(v[4], v[5]), affine_translator(v[6], v[7]),
                      affine_translator(v[8], v[9]), v[0], ya, v[1], yb);
  };
  std::vector<Tensor> inputs = {oracle::random_tensor({1, 1, 3, 3, 3}, rng), oracle::random_tensor({1, 1, 3, 3, 3}, rng)};
  for (int k = 0; k < 2; ++k) {
    inputs.push_back(oracle::random_tensor({3, 1, 3, 3, 3}, rng, -0.5, 0.5));
    inputs.push_back(oracle::random_tensor({3}, rng));
  }
  for (int k = 0; k < 2; ++k) {
    inputs.push_back(oracle::random_tensor({1, 1, 3, 3, 3}, rng, -0.3, 0.3));
    inputs.push_back(oracle::random_tensor({1}, rng));
  }
  EXPECT_LT(gradcheck(f, inputs, 9), 1e-4);
}

TEST(ShapeLoss, LabelOutOfRange) {
  Tape t;
  Var x = t.constant(Tensor({1, 1, 1, 1, 2}));
  std::vector<std::uint8_t> bad{0, 4};
  std::vector<std::uint8_t> ok{0, 1};
  const Segmenter u = constant_logits({0, 0, 0});
  EXPECT_THROW(shape_loss(t, u, u, kIdentity, kIdentity, x, bad, x, ok), LabelError);
}

TEST(SegmentationLoss, EqualsCrossEntropyOfSegmenter) {
  std::mt19937_64 rng(10);
  const Tensor x = oracle::random_tensor({2, 1, 2, 2, 2}, rng);
  const auto y = random_labels(16, 4, rng);
  Tape t;
  Var w = t.constant(oracle::random_tensor({4, 1, 3, 3, 3}, rng));
  Var b = t.constant(oracle::random_tensor({4}, rng));
  const Tensor logits = conv3d(t.constant(x), w, b, 1, 1).value();
  EXPECT_NEAR(segmentation_loss(t, conv_segmenter(w, b), t.constant(x), y).value().item(),
              oracle::softmax_cross_entropy(logits, y), 1e-12);
}

namespace {

struct Fixture {
  Tape tape;
  std::mt19937_64 rng{11};
  std::vector<Var> leaves;
  TranslationModels m;
  Var xa, xb;
  std::vector<std::uint8_t> ya, yb;

  Fixture() {
    for (int k = 0; k < 2; ++k) {
      leaves.push_back(tape.variable(oracle::random_tensor({1, 1, 3, 3, 3}, rng, -0.3, 0.3)));
      leaves.push_back(tape.variable(oracle::random_tensor({1}, rng)));
    }
    for (int k = 0; k < 2; ++k) {
      leaves.push_back(tape.variable(oracle::random_tensor({3, 1, 3, 3, 3}, rng, -0.5, 0.5)));
      leaves.push_back(tape.variable(oracle::random_tensor({3}, rng)));
    }
    for (int k = 0; k < 2; ++k) {
      leaves.push_back(tape.variable(oracle::random_tensor({1, 1, 3, 3, 3}, rng, -0.5, 0.5)));
      leaves.push_back(tape.variable(oracle::random_tensor({1}, rng)));
    }
    m.g_a = affine_translator(leaves[0], leaves[1]);
    m.g_b = affine_translator(leaves[2], leaves[3]);
    m.s_a = conv_segmenter(leaves[4], leaves[5]);
    m.s_b = conv_segmenter(leaves[6], leaves[7]);
    m.d_a = [w = leaves[8], b = leaves[9]](Tape&, Var x) { return conv3d(x, w, b, 1, 1); };
    m.d_b = [w = leaves[10], b = leaves[11]](Tape&, Var x) { return conv3d(x, w, b, 1, 1); };
    xa = tape.constant(oracle::random_tensor({2, 1, 3, 3, 3}, rng));
    xb = tape.constant(oracle::random_tensor({2, 1, 3, 3, 3}, rng));
    ya = random_labels(54, 3, rng);
    yb = random_labels(54, 3, rng);
  }
};

}  // namespace

TEST(FullObjective, TotalEqualsIndependentlyComputedTerms) {
  Fixture f;
  const LossWeights w{7.5, 0.6};
  const GeneratorObjective o = full_objective(f.tape, f.m, f.xa, f.ya, f.xb, f.yb, w);

  // Recomputed term by term as fresh nodes on the same tape.
  Tape& t2 = f.tape;
  Var xa = t2.constant(f.xa.value()), xb = t2.constant(f.xb.value());
  const double ga = gan_loss_generator(f.m.d_a(t2, f.m.g_a(t2, xb))).value().item();
  const double gb = gan_loss_generator(f.m.d_b(t2, f.m.g_b(t2, xa))).value().item();
  const double cyc = cycle_loss(t2, f.m.g_a, f.m.g_b, xa, xb).value().item();
  const double sh = shape_loss(t2, f.m.s_a, f.m.s_b, f.m.g_a, f.m.g_b, xa, f.ya, xb, f.yb).value().item();

  EXPECT_NEAR(o.report.gan_g_A, ga, 1e-10);
  EXPECT_NEAR(o.report.gan_g_B, gb, 1e-10);
  EXPECT_NEAR(o.report.cycle, cyc, 1e-10);
  EXPECT_NEAR(o.report.shape, sh, 1e-10);
  EXPECT_NEAR(o.report.total, ga + gb + 7.5 * cyc + 0.6 * sh, 1e-10);
  EXPECT_EQ(o.total.value().item(), o.report.total);
  for (double v : {o.report.gan_g_A, o.report.gan_g_B, o.report.cycle, o.report.shape, o.report.total}) EXPECT_GE(v, 0.0);
}

TEST(FullObjective, DoublingLambdaDoublesCycleContribution) {
  Fixture f;
  const auto a = full_objective(f.tape, f.m, f.xa, f.ya, f.xb, f.yb, {3.0, 1.0}).report;
  const auto b = full_objective(f.tape, f.m, f.xa, f.ya, f.xb, f.yb, {6.0, 1.0}).report;
  EXPECT_EQ(a.cycle, b.cycle);
  EXPECT_NEAR(b.total - a.total, 3.0 * a.cycle, 1e-12);
}

TEST(FullObjective, GammaZeroIsCycleGanObjectiveWithoutSegmentorGradient) {
  Fixture f;
  const GeneratorObjective o = full_objective(f.tape, f.m, f.xa, f.ya, f.xb, f.yb, {10.0, 0.0});
  EXPECT_FALSE(o.shape.valid());
  EXPECT_EQ(o.report.shape, 0.0);
  EXPECT_NEAR(o.report.total, o.report.gan_g_A + o.report.gan_g_B + 10.0 * o.report.cycle, 1e-12);
  f.tape.backward(o.total);
  for (int k = 4; k < 8; ++k) {
    for (double g : f.tape.grad(f.leaves[k]).data()) EXPECT_EQ(g, 0.0) << "segmentor leaf " << k;
  }
  double generator_grad = 0.0;
  for (double g : f.tape.grad(f.leaves[0]).data()) generator_grad += std::abs(g);
  EXPECT_GT(generator_grad, 0.0);
}

TEST(FullObjective, FooledCriticsAndZeroWeightsGiveZero) {
  Fixture f;
  f.m.d_a = kFooled;
  f.m.d_b = kFooled;
  const GeneratorObjective o = full_objective(f.tape, f.m, f.xa, f.ya, f.xb, f.yb, {0.0, 0.0});
  EXPECT_EQ(o.report.total, 0.0);
}

TEST(LossWeights, NegativeRejected) {
  EXPECT_THROW((LossWeights{-1.0, 1.0}).validate(), ConfigError);
  EXPECT_THROW((LossWeights{1.0, -0.5}).validate(), ConfigError);
  EXPECT_NO_THROW((LossWeights{0.0, 0.0}).validate());
}

TEST(LossReport, CsvColumnsInFixedOrder) {
  EXPECT_EQ(LossReport::csv_header(), "step,gan_g_A,gan_g_B,gan_d_A,gan_d_B,cycle,shape,seg_A,seg_B,total");
  LossReport r{1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_EQ(r.csv_row(12), "12,1,2,3,4,5,6,7,8,9");
}
