#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "voxelcycle/autograd.hpp"
#include "voxelcycle/errors.hpp"
#include "voxelcycle/gradcheck.hpp"
#include "voxelcycle/ops.hpp"

using namespace voxelcycle;

namespace {

constexpr int kInstances = 60;
constexpr double kTol = 1e-10;

Tensor eval_unary(Tensor x, Var (*op)(Var)) {
  Tape t;
  return op(t.constant(std::move(x))).value();
}

}  // namespace

TEST(Conv3d, MatchesLoopReferenceOnRandomShapes) {
  std::mt19937_64 rng(11);
  for (int it = 0; it < kInstances; ++it) {
    const std::size_t k = oracle::pick(rng, 0, 1) ? 3 : 1;
    const std::size_t stride = oracle::pick(rng, 1, 2);
    const std::size_t pad = k == 3 ? oracle::pick(rng, 0, 1) : 0;
    const std::size_t n = oracle::pick(rng, 1, 2), cin = oracle::pick(rng, 1, 3), cout = oracle::pick(rng, 1, 3);
    const Dims xd{n, cin, oracle::pick(rng, 3, 6), oracle::pick(rng, 3, 6), oracle::pick(rng, 3, 6)};
    const Tensor x = oracle::random_tensor(xd, rng);
    const Tensor w = oracle::random_tensor({cout, cin, k, k, k}, rng);
    const Tensor b = oracle::random_tensor({cout}, rng);
    Tape t;
    const Tensor got = conv3d(t.constant(x), t.constant(w), t.constant(b), stride, pad).value();
    const Tensor want = oracle::conv3d(x, w, b, stride, pad);
    ASSERT_EQ(got.dims(), want.dims()) << "instance " << it;
    EXPECT_LT(oracle::max_abs_diff(got, want), kTol) << "instance " << it;
  }
}

TEST(Conv3d, OutputExtent) {
  EXPECT_EQ(conv_output_extent(16, 3, 1, 1), 16u);
  EXPECT_EQ(conv_output_extent(16, 3, 2, 1), 8u);
  EXPECT_EQ(conv_output_extent(5, 3, 2, 1), 3u);
  EXPECT_EQ(conv_output_extent(4, 1, 1, 0), 4u);
  EXPECT_THROW(conv_output_extent(1, 3, 1, 0), ShapeError);
}

TEST(Conv3d, RejectsMismatchedChannels) {
  Tape t;
  Var x = t.constant(Tensor({1, 2, 4, 4, 4}));
  Var w = t.constant(Tensor({3, 1, 3, 3, 3}));
  Var b = t.constant(Tensor({3}));
  EXPECT_THROW(conv3d(x, w, b, 1, 1), ShapeError);
}

TEST(MaxPool3d, MatchesLoopReference) {
  std::mt19937_64 rng(12);
  for (int it = 0; it < kInstances; ++it) {
    const Dims d{oracle::pick(rng, 1, 2), oracle::pick(rng, 1, 3), 2 * oracle::pick(rng, 1, 3), 2 * oracle::pick(rng, 1, 3),
                 2 * oracle::pick(rng, 1, 3)};
    const Tensor x = oracle::random_tensor(d, rng);
    const Tensor got = eval_unary(x, maxpool3d);
    EXPECT_LT(oracle::max_abs_diff(got, oracle::maxpool3d(x)), kTol);
  }
}

TEST(MaxPool3d, TieRoutesGradientToFirstElement) {
  Tape t;
  Var x = t.variable(Tensor({1, 1, 2, 2, 2}, 1.0));
  t.backward(sum(maxpool3d(x)));
  const Tensor& g = t.grad(x);
  EXPECT_EQ(g[0], 1.0);
  for (std::size_t i = 1; i < 8; ++i) EXPECT_EQ(g[i], 0.0);
}

TEST(Upsample, MatchesLoopReference) {
  std::mt19937_64 rng(13);
  for (int it = 0; it < kInstances; ++it) {
    const Dims d{oracle::pick(rng, 1, 2), oracle::pick(rng, 1, 3), oracle::pick(rng, 1, 4), oracle::pick(rng, 1, 4),
                 oracle::pick(rng, 1, 4)};
    const Tensor x = oracle::random_tensor(d, rng);
    const Tensor got = eval_unary(x, upsample_nearest3d);
    EXPECT_EQ(oracle::max_abs_diff(got, oracle::upsample(x)), 0.0);
  }
}

TEST(InstanceNorm, MatchesTwoPassReference) {
  std::mt19937_64 rng(14);
  for (int it = 0; it < kInstances; ++it) {
    const std::size_t c = oracle::pick(rng, 1, 4);
    const Dims d{oracle::pick(rng, 1, 2), c, oracle::pick(rng, 1, 5), oracle::pick(rng, 2, 5), oracle::pick(rng, 1, 5)};
    // Offset inputs make a one-pass variance formula lose precision.
    const Tensor x = oracle::random_tensor(d, rng, 50.0, 52.0);
    const Tensor g = oracle::random_tensor({c}, rng, 0.5, 1.5);
    const Tensor s = oracle::random_tensor({c}, rng);
    Tape t;
    const Tensor got = instance_norm(t.constant(x), t.constant(g), t.constant(s)).value();
    EXPECT_LT(oracle::max_abs_diff(got, oracle::instance_norm(x, g, s)), kTol) << "instance " << it;
  }
}

TEST(InstanceNorm, ConstantInputMapsToShift) {
  Tape t;
  Var x = t.constant(Tensor({1, 2, 2, 2, 2}, 3.0));
  Var g = t.constant(Tensor({2}, 2.0));
  Var s = t.constant(Tensor({2}, std::vector<double>{0.25, -0.5}));
  const Tensor y = instance_norm(x, g, s).value();
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(y[i], 0.25);
  for (std::size_t i = 8; i < 16; ++i) EXPECT_EQ(y[i], -0.5);
}

TEST(SoftmaxCrossEntropy, MatchesLoopReference) {
  std::mt19937_64 rng(15);
  for (int it = 0; it < kInstances; ++it) {
    const std::size_t n = oracle::pick(rng, 1, 2), c = oracle::pick(rng, 2, 5);
    const Dims d{n, c, oracle::pick(rng, 1, 3), oracle::pick(rng, 1, 3), oracle::pick(rng, 1, 3)};
    const Tensor x = oracle::random_tensor(d, rng, -6.0, 6.0);
    std::vector<std::uint8_t> labels(n * d[2] * d[3] * d[4]);
    for (auto& l : labels) l = static_cast<std::uint8_t>(oracle::pick(rng, 0, c - 1));
    Tape t;
    const double got = softmax_cross_entropy(t.constant(x), labels).value().item();
    EXPECT_NEAR(got, oracle::softmax_cross_entropy(x, labels), kTol);
  }
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogC) {
  Tape t;
  std::vector<std::uint8_t> labels(8, 2);
  const double v = softmax_cross_entropy(t.constant(Tensor({1, 5, 2, 2, 2}, 0.7)), labels).value().item();
  EXPECT_NEAR(v, std::log(5.0), 1e-14);
}

TEST(SoftmaxCrossEntropy, StableForLargeLogits) {
  Tape t;
  Tensor x({1, 2, 1, 1, 1});
  x[0] = 1000.0;
  x[1] = -1000.0;
  std::vector<std::uint8_t> labels{1};
  const double v = softmax_cross_entropy(t.constant(x), labels).value().item();
  EXPECT_NEAR(v, 2000.0, 1e-9);
}

TEST(SoftmaxCrossEntropy, RejectsOutOfRangeLabel) {
  Tape t;
  std::vector<std::uint8_t> labels{0, 3};
  EXPECT_THROW(softmax_cross_entropy(t.constant(Tensor({1, 3, 1, 1, 2})), labels), LabelError);
}

TEST(Elementwise, ValuesAgainstClosedForm) {
  std::mt19937_64 rng(16);
  const Tensor x = oracle::random_tensor({1, 2, 3, 3, 3}, rng, -2.0, 2.0);
  Tape t;
  Var v = t.constant(x);
  const Tensor r = relu(v).value(), lr = leaky_relu(v, 0.2).value(), th = tanh(v).value();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_EQ(r[i], x[i] > 0 ? x[i] : 0.0);
    EXPECT_DOUBLE_EQ(lr[i], x[i] > 0 ? x[i] : 0.2 * x[i]);
    EXPECT_DOUBLE_EQ(th[i], std::tanh(x[i]));
  }
}

TEST(Reductions, LossesAgainstLoops) {
  std::mt19937_64 rng(17);
  for (int it = 0; it < kInstances; ++it) {
    const Tensor a = oracle::random_tensor({1, 2, 2, 3, 2}, rng), b = oracle::random_tensor({1, 2, 2, 3, 2}, rng);
    double l1 = 0.0, mse = 0.0, s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
      l1 += std::abs(a[i] - b[i]);
      mse += (a[i] - 0.3) * (a[i] - 0.3);
      s += a[i];
    }
    const double n = static_cast<double>(a.numel());
    Tape t;
    Var va = t.constant(a), vb = t.constant(b);
    EXPECT_NEAR(l1_loss(va, vb).value().item(), l1 / n, kTol);
    EXPECT_NEAR(mse_loss(va, 0.3).value().item(), mse / n, kTol);
    EXPECT_NEAR(sum(va).value().item(), s, kTol);
    EXPECT_NEAR(mean(va).value().item(), s / n, kTol);
  }
}

TEST(ConcatChannels, PlacesBlocksInOrder) {
  Tape t;
  Tensor a({2, 1, 1, 1, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor b({2, 2, 1, 1, 2}, std::vector<double>{5, 6, 7, 8, 9, 10, 11, 12});
  const Tensor y = concat_channels(t.constant(a), t.constant(b)).value();
  EXPECT_EQ(y.dims(), (Dims{2, 3, 1, 1, 2}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()),
            (std::vector<double>{1, 2, 5, 6, 7, 8, 3, 4, 9, 10, 11, 12}));
}

TEST(GatherVoxels, PermutesEverySlice) {
  Tape t;
  Tensor x({1, 2, 1, 1, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const std::vector<std::size_t> src{2, 0, 1};
  const Tensor y = gather_voxels(t.constant(x), src).value();
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{3, 1, 2, 6, 4, 5}));
}

TEST(Tape, ConstantsGetNoGradientAndParametersAccumulate) {
  Parameter p("w", Tensor({2}, std::vector<double>{1.0, -2.0}));
  p.zero_grad();
  Tape t;
  Var c = t.constant(Tensor({2}, 3.0));
  Var w = t.parameter(p);
  Var loss = sum(add(scale(w, 2.0), c));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_TRUE(loss.requires_grad());
  t.backward(loss);
  EXPECT_EQ(p.grad[0], 2.0);
  t.backward(loss);
  EXPECT_EQ(p.grad[0], 4.0);
}

TEST(Tape, SharedSubexpressionSumsBothPaths) {
  Tape t;
  Var x = t.variable(Tensor({1}, 1.5));
  Var y = add(x, x);
  t.backward(sum(add(y, scale(x, 3.0))));
  EXPECT_EQ(t.grad(x)[0], 5.0);
}

TEST(Tape, NodeGradientsRecomputedPerBackward) {
  Tape t;
  Var x = t.variable(Tensor({1}, 2.0));
  Var loss = sum(scale(x, 4.0));
  t.backward(loss);
  t.backward(loss);
  EXPECT_EQ(t.grad(x)[0], 4.0);
}

TEST(Tape, RejectsForeignVar) {
  Tape a, b;
  Var x = a.variable(Tensor({1}, 1.0));
  Var y = b.variable(Tensor({1}, 1.0));
  EXPECT_THROW(add(x, y), Error);
}

TEST(Tensor, FiniteCheckNamesLocation) {
  Tensor t({2}, std::vector<double>{1.0, NAN});
  EXPECT_FALSE(t.all_finite());
  try {
    require_finite(t, "probe");
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("probe"), std::string::npos);
  }
}

TEST(GradCheck, EveryOperationWithinTolerance) {
  const auto cases = run_gradcheck_suite(7, 20);
  EXPECT_GE(cases.size(), 18u);
  for (const auto& c : cases) {
    EXPECT_EQ(c.trials, 20u) << c.op;
    EXPECT_LT(c.max_rel_error, 1e-4) << c.op;
  }
}

TEST(GradCheck, DetectsAWrongGradient) {
  // Forward is x^2 but the recorded gradient is x.
  const GradCheckFn bad = [](Tape& tape, const std::vector<Var>& v) {
    Tensor y = v[0].value();
    for (auto& e : y.data()) e = e * e;
    return tape.record(std::move(y), {v[0]}, [](BackwardContext& ctx) {
      for (std::size_t i = 0; i < ctx.out_grad.numel(); ++i) (*ctx.in_grads[0])[i] += ctx.out_grad[i] * (*ctx.in_values[0])[i];
    });
  };
  std::mt19937_64 rng(1);
  EXPECT_GT(gradcheck(bad, {oracle::random_tensor({4}, rng, 0.5, 1.0)}, 3), 0.1);
}

TEST(InstanceNorm, UnitGainZeroShiftStandardizes) {
  std::mt19937_64 rng(18);
  for (int it = 0; it < 20; ++it) {
    const Tensor x = oracle::random_tensor({2, 3, 3, 4, 2}, rng, -5.0, 5.0);
    Tape t;
    const Tensor y = instance_norm(t.constant(x), t.constant(Tensor({3}, 1.0)), t.constant(Tensor({3}))).value();
    for (std::size_t slice = 0; slice < 6; ++slice) {
      double s = 0.0, ss = 0.0;
      for (std::size_t i = 0; i < 24; ++i) s += y[slice * 24 + i];
      for (std::size_t i = 0; i < 24; ++i) ss += y[slice * 24 + i] * y[slice * 24 + i];
      EXPECT_NEAR(s / 24.0, 0.0, 1e-12);
      EXPECT_NEAR(ss / 24.0, 1.0, 1e-4);
    }
  }
}

TEST(InstanceNorm, SingleVoxelSliceRejected) {
  Tape t;
  EXPECT_THROW(instance_norm(t.constant(Tensor({1, 1, 1, 1, 1})), t.constant(Tensor({1}, 1.0)), t.constant(Tensor({1}))),
               NumericError);
}
