#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxelcycle/tensor.hpp"

namespace voxelcycle {

class Network;

// VXCK container: an ordered list of named float64 tensors plus training
// metadata. Layout (little endian):
//   "VXCK" | u32 version | u32 entry count |
//   per entry: u16 name length, UTF-8 name, u8 rank, u32 extents[rank],
//              f64 payload[prod(extents)]
// Metadata travels as two reserved entries ("meta.step", "meta.config_hash"),
// each a pair of u32 halves stored as exact float64 values.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  struct Entry {
    std::string name;
    Tensor value;
  };

  std::vector<Entry> entries;
  std::uint64_t step = 0;
  std::uint64_t config_hash = 0;

  static Checkpoint from_network(const Network& net, const std::string& prefix = "");

  void add(std::string name, Tensor value);
  // Appends every parameter of `net` under `prefix`.
  void add_network(const Network& net, const std::string& prefix);
  const Tensor* find(const std::string& name) const;
  const Tensor& get(const std::string& name) const;

  // Entries whose name starts with `prefix`, with the prefix stripped.
  Checkpoint subset(const std::string& prefix) const;

  std::string encode() const;
  static Checkpoint decode(const std::string& bytes);
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace voxelcycle
