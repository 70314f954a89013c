#include "voxelcycle/wire.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "voxelcycle/errors.hpp"

namespace voxelcycle::wire {

void Writer::bytes(const void* data, std::size_t n) { buf_.append(static_cast<const char*>(data), n); }

void Writer::u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

void Writer::u16(std::uint16_t v) {
  for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void Writer::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void Writer::f64(double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

void Reader::require(std::size_t n) const {
  if (buf_.size() - pos_ < n) {
    throw FormatError(FormatError::Kind::kTruncated, what_ + ": truncated payload (needed " + std::to_string(n) +
                                                         " more bytes at offset " + std::to_string(pos_) + ")");
  }
}

void Reader::bytes(void* out, std::size_t n) {
  require(n);
  std::memcpy(out, buf_.data() + pos_, n);
  pos_ += n;
}

std::uint8_t Reader::u8() {
  require(1);
  return static_cast<std::uint8_t>(buf_[pos_++]);
}

std::uint16_t Reader::u16() {
  require(2);
  std::uint16_t v = 0;
  for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
  return v;
}

std::uint32_t Reader::u32() {
  require(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
  return v;
}

double Reader::f64() {
  require(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
  return std::bit_cast<double>(v);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open '" + path.string() + "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Kind::kIo, "write to '" + path.string() + "' failed");
}

}  // namespace voxelcycle::wire
