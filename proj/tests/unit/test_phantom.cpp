#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "voxelcycle/errors.hpp"
#include "voxelcycle/phantom.hpp"

using namespace voxelcycle;

TEST(Anatomy, Deterministic) {
  const PhantomSpec spec;
  EXPECT_EQ(generate_anatomy(spec, 42), generate_anatomy(spec, 42));
  EXPECT_NE(generate_anatomy(spec, 42), generate_anatomy(spec, 43));
}

TEST(Anatomy, ZeroStructuresIsAllBackground) {
  PhantomSpec spec;
  spec.structure_count = 0;
  const LabelVolume l = generate_anatomy(spec, 1);
  for (auto v : l.data) EXPECT_EQ(v, 0);
}

TEST(Anatomy, HundredSamplesKeepBackgroundAndConnectedRegions) {
  const PhantomSpec spec;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const LabelVolume l = generate_anatomy(spec, mix_seed(7, s));
    ASSERT_EQ(l.extents, (Extents3{16, 16, 16}));
    EXPECT_GE(l.fraction(0), 0.30) << "seed " << s;
    std::size_t regions = 0;
    for (std::uint8_t c = 1; c < spec.classes; ++c) {
      const std::size_t comps = connected_components(l, c);
      EXPECT_LE(comps, 1u) << "seed " << s << " class " << int(c);
      regions += comps;
    }
    EXPECT_GE(regions, 1u);
    EXPECT_LE(regions, spec.structure_count);
    for (auto v : l.data) ASSERT_LT(v, spec.classes);
  }
}

TEST(Anatomy, ConnectedComponentCounter) {
  LabelVolume l({1, 1, 5}, 2);
  l.data = {1, 0, 1, 1, 0};
  EXPECT_EQ(connected_components(l, 1), 2u);
  EXPECT_EQ(connected_components(l, 0), 2u);
  LabelVolume diag({2, 2, 1}, 2);
  diag.data = {1, 0, 0, 1};  // only edge-adjacent: not 6-connected
  EXPECT_EQ(connected_components(diag, 1), 2u);
}

TEST(PhantomSpecConfig, ImpossibleRangesRejected) {
  PhantomSpec spec;
  spec.semi_axis_max = 20.0;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = PhantomSpec{};
  spec.grid = 12;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = PhantomSpec{};
  spec.semi_axis_min = 5.0;
  spec.semi_axis_max = 4.0;
  EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(PhantomSpecConfig, SerializesLosslessly) {
  PhantomSpec spec;
  spec.grid = 32;
  spec.structure_count = 5;
  spec.semi_axis_min = 2.25;
  spec.semi_axis_max = 6.125;
  spec.jitter = 0.1;
  spec.seed = 123456789012345ULL;
  const PhantomSpec back = PhantomSpec::parse(spec.serialize());
  EXPECT_EQ(back.serialize(), spec.serialize());
  EXPECT_EQ(back.grid, 32u);
  EXPECT_EQ(back.jitter, 0.1);
  EXPECT_EQ(back.seed, spec.seed);
  EXPECT_THROW(PhantomSpec::parse("grid = 16\ncolour = red\n"), ConfigError);
}

TEST(Render, NoiseFreeIsPiecewiseConstantAndQuantizesBack) {
  const PhantomSpec spec;
  const LabelVolume l = generate_anatomy(spec, 5);
  for (Modality m : {Modality::kA, Modality::kB}) {
    ModalityParams p = ModalityParams::preset(m, spec.classes);
    p.noise_sigma = p.bias_amplitude = p.blur_sigma = 0.0;
    const Volume v = render_modality(l, p, 9);
    for (std::size_t i = 0; i < v.data.size(); ++i) EXPECT_EQ(v.data[i], p.class_means[l.data[i]]);
    EXPECT_EQ(quantize_to_classes(v, p), l);
  }
}

TEST(Render, PresetsHaveDifferentOrderings) {
  const auto a = ModalityParams::preset(Modality::kA, 4), b = ModalityParams::preset(Modality::kB, 4);
  std::vector<int> oa{0, 1, 2, 3}, ob{0, 1, 2, 3};
  std::sort(oa.begin(), oa.end(), [&](int x, int y) { return a.class_means[x] < a.class_means[y]; });
  std::sort(ob.begin(), ob.end(), [&](int x, int y) { return b.class_means[x] < b.class_means[y]; });
  EXPECT_NE(oa, ob);
  const LabelVolume l = generate_anatomy(PhantomSpec{}, 3);
  const Volume va = render_modality(l, a, 1), vb = render_modality(l, b, 1);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < va.data.size(); ++i) differ += va.data[i] != vb.data[i];
  EXPECT_EQ(differ, va.data.size());
}

TEST(Render, ClassMeansWithinThreeStandardErrors) {
  const LabelVolume l = generate_anatomy(PhantomSpec{}, 11);
  ModalityParams p;
  p.class_means = {-0.5, 0.1, 0.4, -0.1};
  p.noise_sigma = 0.2;
  const Volume v = render_modality(l, p, 12);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < v.data.size(); ++i)
      if (l.data[i] == c) {
        s += v.data[i];
        ++n;
      }
    if (n == 0) continue;
    EXPECT_NEAR(s / n, p.class_means[c], 3.0 * p.noise_sigma / std::sqrt(static_cast<double>(n))) << "class " << c;
  }
}

TEST(Render, ClampedDeterministicAndChecked) {
  const LabelVolume l = generate_anatomy(PhantomSpec{}, 13);
  ModalityParams p = ModalityParams::preset(Modality::kA, 4);
  p.noise_sigma = 0.8;
  const Volume v = render_modality(l, p, 4);
  EXPECT_EQ(v, render_modality(l, p, 4));
  for (double x : v.data) {
    EXPECT_GE(x, -1.0);
    EXPECT_LE(x, 1.0);
  }
  p.class_means.pop_back();
  EXPECT_THROW(render_modality(l, p, 4), LabelError);
}

TEST(Dataset, DistinctAnatomiesAndReproducible) {
  const PhantomSpec spec;
  const Dataset d = make_dataset(5, spec, Modality::kA, 100);
  ASSERT_EQ(d.size(), 5u);
  const auto seeds = d.anatomy_seeds();
  EXPECT_EQ(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size(), 5u);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j) EXPECT_NE(d.samples[i].label, d.samples[j].label);
  const Dataset again = make_dataset(5, spec, Modality::kA, 100);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(again.samples[i].volume, d.samples[i].volume);
}

TEST(Dataset, DisjointSeedBasesAreUnpaired) {
  const PhantomSpec spec;
  const Dataset a = make_dataset(40, spec, Modality::kA, mix_seed(1, 0xA0));
  const Dataset b = make_dataset(40, spec, Modality::kB, mix_seed(1, 0xB0));
  EXPECT_TRUE(unpaired(a, b));
  EXPECT_FALSE(unpaired(a, a));
}

TEST(Dataset, PairedEvalSharesLabels) {
  const PairedDatasets p = make_paired_eval(6, PhantomSpec{}, 77);
  ASSERT_EQ(p.a.size(), 6u);
  ASSERT_EQ(p.b.size(), 6u);
  EXPECT_EQ(p.a.modality, Modality::kA);
  EXPECT_EQ(p.b.modality, Modality::kB);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(p.a.samples[i].label, p.b.samples[i].label);
    EXPECT_NE(p.a.samples[i].volume, p.b.samples[i].volume);
  }
}

TEST(Dataset, DirectoryRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "voxelcycle_dataset_test";
  std::filesystem::remove_all(dir);
  const Dataset d = make_dataset(3, PhantomSpec{}, Modality::kB, 9);
  save_dataset(d, dir);
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.modality, Modality::kB);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.samples[i].volume, d.samples[i].volume);
    EXPECT_EQ(back.samples[i].label, d.samples[i].label);
    EXPECT_EQ(back.samples[i].anatomy_seed, d.samples[i].anatomy_seed);
  }
  std::filesystem::remove(dir / "label_0001.vvol");
  EXPECT_THROW(load_dataset(dir), FormatError);
  EXPECT_THROW(load_dataset(dir / "nope"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(Seeds, MixSeedSpreadsNeighbours) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(mix_seed(5, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_NE(mix_seed(1, 2), mix_seed(2, 1));
}
