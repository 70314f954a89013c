#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

namespace voxelcycle::wire {

// Little-endian byte writer.
class Writer {
 public:
  void bytes(const void* data, std::size_t n);
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void f64(double v);
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

// Little-endian byte reader; running past the end raises a truncation
// FormatError tagged with `what`.
class Reader {
 public:
  Reader(const std::string& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

  void require(std::size_t n) const;
  void bytes(void* out, std::size_t n);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  double f64();
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  const std::string& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace voxelcycle::wire
