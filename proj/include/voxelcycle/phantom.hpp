#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxelcycle/keyvalue.hpp"
#include "voxelcycle/volume.hpp"

namespace voxelcycle {

// Recipe for procedural anatomies: non-overlapping rotated ellipsoids on a
// cubic grid, structure i carrying class 1 + (i mod (classes - 1)).
struct PhantomSpec {
  std::size_t grid = 16;
  std::size_t classes = 4;
  std::size_t structure_count = 3;
  double semi_axis_min = 2.5;
  double semi_axis_max = 4.5;
  double jitter = 2.0;  // voxels of centre displacement around the layout anchor
  std::uint64_t seed = 1;

  // Throws ConfigError when the ranges cannot fit the grid.
  void validate() const;

  KeyValues to_key_values() const;
  static PhantomSpec from_key_values(const KeyValues& kv);
  std::string serialize() const;
  static PhantomSpec parse(const std::string& text);
};

enum class Modality { kA, kB };

const char* modality_name(Modality m);
Modality parse_modality(const std::string& s);

// Appearance of one modality.
struct ModalityParams {
  std::vector<double> class_means;  // one per class, in [-1, 1]
  double noise_sigma = 0.0;
  double bias_amplitude = 0.0;  // smooth multiplicative field 1 + a * f(x), |f| <= 1
  double blur_sigma = 0.0;      // Gaussian blur, voxels; 0 disables

  // Built-in presets "A" and "B" with different intensity orderings.
  static ModalityParams preset(Modality m, std::size_t classes);
};

// Stateless seed mixing (splitmix64 finalizer) used for every derived seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

LabelVolume generate_anatomy(const PhantomSpec& spec, std::uint64_t seed);

Volume render_modality(const LabelVolume& label, const ModalityParams& params, std::uint64_t seed);

// Voxel-wise nearest class mean; inverts a noise-free render.
LabelVolume quantize_to_classes(const Volume& v, const ModalityParams& params);

// Number of 6-connected components formed by voxels of class `cls`.
std::size_t connected_components(const LabelVolume& label, std::uint8_t cls);

struct Sample {
  Volume volume;
  LabelVolume label;
  std::uint64_t anatomy_seed = 0;
  std::uint64_t render_seed = 0;
};

struct Dataset {
  Modality modality = Modality::kA;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  std::vector<std::uint64_t> anatomy_seeds() const;
};

// n independent samples; sample i uses anatomy seed mix_seed(seed_base, i).
Dataset make_dataset(std::size_t n, const PhantomSpec& spec, Modality modality, std::uint64_t seed_base);

// Same anatomies rendered in both modalities. Held-out oracle evaluation only.
struct PairedDatasets {
  Dataset a, b;
};
PairedDatasets make_paired_eval(std::size_t n, const PhantomSpec& spec, std::uint64_t seed_base);

// True when the two datasets share no anatomy seed.
bool unpaired(const Dataset& a, const Dataset& b);

// Directory layout: dataset.cfg (modality, count, per-sample seeds) plus
// volume_NNNN.vvol and label_NNNN.vvol for every sample.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace voxelcycle
