#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "voxelcycle/tensor.hpp"

namespace voxelcycle {

using Extents3 = std::array<std::size_t, 3>;  // D, H, W

inline std::size_t voxel_count(const Extents3& e) { return e[0] * e[1] * e[2]; }

// Single-sample intensity volume.
struct Volume {
  Extents3 extents{};
  std::vector<double> data;

  Volume() = default;
  explicit Volume(Extents3 e, double fill = 0.0) : extents(e), data(voxel_count(e), fill) {}

  std::size_t index(std::size_t d, std::size_t h, std::size_t w) const { return (d * extents[1] + h) * extents[2] + w; }

  // 1 x 1 x D x H x W.
  Tensor to_tensor() const;
  static Volume from_tensor(const Tensor& t, std::size_t batch_index = 0);

  friend bool operator==(const Volume&, const Volume&) = default;
};

// Voxel-wise class ids in {0..classes-1}.
struct LabelVolume {
  Extents3 extents{};
  std::size_t classes = 0;
  std::vector<std::uint8_t> data;

  LabelVolume() = default;
  LabelVolume(Extents3 e, std::size_t c) : extents(e), classes(c), data(voxel_count(e), 0) {}

  std::size_t index(std::size_t d, std::size_t h, std::size_t w) const { return (d * extents[1] + h) * extents[2] + w; }
  double fraction(std::uint8_t cls) const;
  // Throws LabelError when any id >= classes.
  void validate() const;

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;
};

// Stacks single volumes into an N x 1 x D x H x W tensor.
Tensor stack_volumes(std::span<const Volume* const> volumes);
// Concatenates label maps into N*D*H*W ids.
std::vector<std::uint8_t> stack_labels(std::span<const LabelVolume* const> labels);

// VVOL file: "VVOL" | u32 version | u8 dtype (0 f64 intensity, 1 u8 label) |
// u8 class count (0 for intensity) | u8 rank = 3 | u32 D, H, W | payload.
inline constexpr std::uint32_t kVolumeFormatVersion = 1;

using AnyVolume = std::variant<Volume, LabelVolume>;

std::string encode_volume(const AnyVolume& v);
AnyVolume decode_volume(const std::string& bytes);

void save_volume(const std::filesystem::path& path, const AnyVolume& v);
AnyVolume load_volume(const std::filesystem::path& path);
// Typed loaders raise FormatError(kDtypeMismatch) on the wrong payload kind.
Volume load_intensity_volume(const std::filesystem::path& path);
LabelVolume load_label_volume(const std::filesystem::path& path);

}  // namespace voxelcycle
