#include "voxelcycle/volume.hpp"

#include <cstring>

#include "voxelcycle/errors.hpp"
#include "voxelcycle/wire.hpp"

namespace voxelcycle {
namespace {

constexpr char kMagic[4] = {'V', 'V', 'O', 'L'};

}  // namespace

Tensor Volume::to_tensor() const { return Tensor(Dims{1, 1, extents[0], extents[1], extents[2]}, data); }

Volume Volume::from_tensor(const Tensor& t, std::size_t batch_index) {
  require_rank5(t, "Volume::from_tensor");
  if (t.dim(1) != 1) throw ShapeError("Volume::from_tensor: expected a single channel");
  if (batch_index >= t.dim(0)) throw ShapeError("Volume::from_tensor: batch index out of range");
  Volume v({t.dim(2), t.dim(3), t.dim(4)});
  const std::size_t m = v.data.size();
  std::copy_n(t.ptr() + batch_index * m, m, v.data.begin());
  return v;
}

double LabelVolume::fraction(std::uint8_t cls) const {
  std::size_t n = 0;
  for (auto l : data) n += (l == cls);
  return data.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(data.size());
}

void LabelVolume::validate() const {
  for (auto l : data) {
    if (l >= classes) {
      throw LabelError("label id " + std::to_string(l) + " out of range for " + std::to_string(classes) + " classes");
    }
  }
}

Tensor stack_volumes(std::span<const Volume* const> volumes) {
  if (volumes.empty()) throw ShapeError("stack_volumes: empty batch");
  const Extents3 e = volumes.front()->extents;
  const std::size_t m = voxel_count(e);
  Tensor out(Dims{volumes.size(), 1, e[0], e[1], e[2]});
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    if (volumes[i]->extents != e) throw ShapeError("stack_volumes: mixed extents in batch");
    std::copy_n(volumes[i]->data.begin(), m, out.ptr() + i * m);
  }
  return out;
}

std::vector<std::uint8_t> stack_labels(std::span<const LabelVolume* const> labels) {
  std::vector<std::uint8_t> out;
  for (const auto* l : labels) out.insert(out.end(), l->data.begin(), l->data.end());
  return out;
}

std::string encode_volume(const AnyVolume& v) {
  wire::Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVolumeFormatVersion);
  if (const auto* vol = std::get_if<Volume>(&v)) {
    w.u8(0);
    w.u8(0);
    w.u8(3);
    for (auto e : vol->extents) w.u32(static_cast<std::uint32_t>(e));
    for (double x : vol->data) w.f64(x);
  } else {
    const auto& lab = std::get<LabelVolume>(v);
    if (lab.classes > 255) throw LabelError("VVOL: class count exceeds 255");
    w.u8(1);
    w.u8(static_cast<std::uint8_t>(lab.classes));
    w.u8(3);
    for (auto e : lab.extents) w.u32(static_cast<std::uint32_t>(e));
    w.bytes(lab.data.data(), lab.data.size());
  }
  return w.take();
}

AnyVolume decode_volume(const std::string& bytes) {
  wire::Reader r(bytes, "VVOL");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(FormatError::Kind::kBadMagic, "VVOL: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVolumeFormatVersion) {
    throw FormatError(FormatError::Kind::kUnknownVersion, "VVOL: unsupported version " + std::to_string(version));
  }
  const std::uint8_t dtype = r.u8();
  const std::uint8_t classes = r.u8();
  const std::uint8_t rank = r.u8();
  if (dtype > 1) throw FormatError(FormatError::Kind::kDtypeMismatch, "VVOL: unknown dtype " + std::to_string(dtype));
  if (rank != 3) throw FormatError(FormatError::Kind::kCorrupt, "VVOL: rank must be 3, got " + std::to_string(rank));
  Extents3 e{};
  for (auto& x : e) {
    x = r.u32();
    if (x == 0) throw FormatError(FormatError::Kind::kCorrupt, "VVOL: zero extent");
  }
  const std::size_t m = voxel_count(e);
  AnyVolume out;
  if (dtype == 0) {
    if (classes != 0) throw FormatError(FormatError::Kind::kCorrupt, "VVOL: intensity volume with nonzero class count");
    r.require(m * 8);
    Volume v(e);
    for (auto& x : v.data) x = r.f64();
    out = std::move(v);
  } else {
    if (classes == 0) throw FormatError(FormatError::Kind::kCorrupt, "VVOL: label volume with zero class count");
    r.require(m);
    LabelVolume l(e, classes);
    r.bytes(l.data.data(), m);
    for (auto id : l.data) {
      if (id >= classes) throw FormatError(FormatError::Kind::kCorrupt, "VVOL: label id exceeds class count");
    }
    out = std::move(l);
  }
  if (!r.at_end()) throw FormatError(FormatError::Kind::kCorrupt, "VVOL: trailing bytes after payload");
  return out;
}

void save_volume(const std::filesystem::path& path, const AnyVolume& v) { wire::write_file(path, encode_volume(v)); }

AnyVolume load_volume(const std::filesystem::path& path) { return decode_volume(wire::read_file(path)); }

Volume load_intensity_volume(const std::filesystem::path& path) {
  AnyVolume v = load_volume(path);
  if (auto* vol = std::get_if<Volume>(&v)) return std::move(*vol);
  throw FormatError(FormatError::Kind::kDtypeMismatch, "'" + path.string() + "' holds labels, expected intensities");
}

LabelVolume load_label_volume(const std::filesystem::path& path) {
  AnyVolume v = load_volume(path);
  if (auto* lab = std::get_if<LabelVolume>(&v)) return std::move(*lab);
  throw FormatError(FormatError::Kind::kDtypeMismatch, "'" + path.string() + "' holds intensities, expected labels");
}

}  // namespace voxelcycle
