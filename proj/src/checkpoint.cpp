#include "voxelcycle/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "voxelcycle/errors.hpp"
#include "voxelcycle/networks.hpp"
#include "voxelcycle/wire.hpp"

namespace voxelcycle {
namespace {

constexpr char kMagic[4] = {'V', 'X', 'C', 'K'};
constexpr const char* kStepName = "meta.step";
constexpr const char* kHashName = "meta.config_hash";

Tensor split_u64(std::uint64_t v) {
  return Tensor(Dims{2}, {static_cast<double>(static_cast<std::uint32_t>(v >> 32)),
                          static_cast<double>(static_cast<std::uint32_t>(v & 0xffffffffu))});
}

std::uint64_t join_u64(const Tensor& t) {
  if (t.numel() != 2) throw FormatError(FormatError::Kind::kCorrupt, "checkpoint: malformed metadata entry");
  for (double x : t.data()) {
    if (x < 0.0 || x > 4294967295.0 || x != static_cast<double>(static_cast<std::uint32_t>(x))) {
      throw FormatError(FormatError::Kind::kCorrupt, "checkpoint: malformed metadata entry");
    }
  }
  return (static_cast<std::uint64_t>(t[0]) << 32) | static_cast<std::uint64_t>(t[1]);
}

}  // namespace

Checkpoint Checkpoint::from_network(const Network& net, const std::string& prefix) {
  Checkpoint c;
  c.add_network(net, prefix);
  return c;
}

void Checkpoint::add(std::string name, Tensor value) {
  if (name.size() > 0xffff) throw FormatError(FormatError::Kind::kCorrupt, "checkpoint: entry name too long");
  if (find(name) != nullptr) throw FormatError(FormatError::Kind::kCorrupt, "checkpoint: duplicate entry '" + name + "'");
  entries.push_back({std::move(name), std::move(value)});
}

void Checkpoint::add_network(const Network& net, const std::string& prefix) {
  for (const auto& p : net.parameters()) add(prefix + p.name, p.value);
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e.value;
  }
  return nullptr;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  if (const Tensor* t = find(name)) return *t;
  throw FormatError(FormatError::Kind::kCorrupt, "checkpoint: missing entry '" + name + "'");
}

Checkpoint Checkpoint::subset(const std::string& prefix) const {
  Checkpoint out;
  out.step = step;
  out.config_hash = config_hash;
  for (const auto& e : entries) {
    if (e.name.compare(0, prefix.size(), prefix) == 0) out.entries.push_back({e.name.substr(prefix.size()), e.value});
  }
  return out;
}

std::string Checkpoint::encode() const {
  wire::Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(entries.size() + 2));
  auto put = [&](const std::string& name, const Tensor& t) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.dims()) w.u32(static_cast<std::uint32_t>(d));
    for (double x : t.data()) w.f64(x);
  };
  for (const auto& e : entries) put(e.name, e.value);
  put(kStepName, split_u64(step));
  put(kHashName, split_u64(config_hash));
  return w.take();
}

Checkpoint Checkpoint::decode(const std::string& bytes) {
  wire::Reader r(bytes, "checkpoint");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(FormatError::Kind::kBadMagic, "checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError(FormatError::Kind::kUnknownVersion, "checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  Checkpoint c;
  bool have_step = false, have_hash = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    const std::uint8_t rank = r.u8();
    if (rank == 0) throw FormatError(FormatError::Kind::kCorrupt, "checkpoint: zero-rank entry '" + name + "'");
    Dims dims(rank);
    std::size_t total = 1;
    for (auto& d : dims) {
      d = r.u32();
      if (d == 0) throw FormatError(FormatError::Kind::kCorrupt, "checkpoint: zero extent in '" + name + "'");
      total *= d;
    }
    r.require(total * 8);
    std::vector<double> data(total);
    for (auto& x : data) x = r.f64();
    Tensor t(std::move(dims), std::move(data));
    if (name == kStepName) {
      c.step = join_u64(t);
      have_step = true;
    } else if (name == kHashName) {
      c.config_hash = join_u64(t);
      have_hash = true;
    } else {
      c.add(std::move(name), std::move(t));
    }
  }
  if (!have_step || !have_hash) throw FormatError(FormatError::Kind::kCorrupt, "checkpoint: missing metadata");
  if (!r.at_end()) throw FormatError(FormatError::Kind::kCorrupt, "checkpoint: trailing bytes after last entry");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  wire::write_file(path, ckpt.encode());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return Checkpoint::decode(wire::read_file(path)); }

}  // namespace voxelcycle
