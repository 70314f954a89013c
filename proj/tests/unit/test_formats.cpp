#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "voxelcycle/checkpoint.hpp"
#include "voxelcycle/errors.hpp"
#include "voxelcycle/volume.hpp"
#include "voxelcycle/wire.hpp"

using namespace voxelcycle;

namespace {

Volume random_volume(std::mt19937_64& rng) {
  Volume v({oracle::pick(rng, 1, 9), oracle::pick(rng, 1, 9), oracle::pick(rng, 1, 9)});
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (auto& x : v.data) x = u(rng);
  if (!v.data.empty()) v.data[0] = -0.0;
  return v;
}

LabelVolume random_labels(std::mt19937_64& rng) {
  LabelVolume l({oracle::pick(rng, 1, 9), oracle::pick(rng, 1, 9), oracle::pick(rng, 1, 9)}, oracle::pick(rng, 1, 255));
  for (auto& x : l.data) x = static_cast<std::uint8_t>(oracle::pick(rng, 0, l.classes - 1));
  return l;
}

Checkpoint random_checkpoint(std::mt19937_64& rng) {
  Checkpoint ck;
  ck.step = rng();
  ck.config_hash = rng();
  const std::size_t n = oracle::pick(rng, 0, 6);
  for (std::size_t i = 0; i < n; ++i) {
    Dims d(oracle::pick(rng, 1, 5));
    for (auto& e : d) e = oracle::pick(rng, 1, 4);
    ck.add("layer" + std::to_string(i) + ".w", oracle::random_tensor(d, rng, -1e6, 1e6));
  }
  return ck;
}

template <typename F>
FormatError::Kind format_error_kind(F&& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no FormatError raised";
  return FormatError::Kind::kIo;
}

void put_u32(std::string& s, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s[at + i] = static_cast<char>((v >> (8 * i)) & 0xFF);
}

}  // namespace

TEST(Vvol, IntensityRoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  for (int it = 0; it < 100; ++it) {
    const Volume v = random_volume(rng);
    const AnyVolume back = decode_volume(encode_volume(v));
    ASSERT_TRUE(std::holds_alternative<Volume>(back));
    const Volume& r = std::get<Volume>(back);
    ASSERT_EQ(r.extents, v.extents);
    EXPECT_EQ(0, std::memcmp(r.data.data(), v.data.data(), v.data.size() * sizeof(double)));
  }
}

TEST(Vvol, LabelRoundTrip) {
  std::mt19937_64 rng(2);
  for (int it = 0; it < 100; ++it) {
    const LabelVolume l = random_labels(rng);
    const AnyVolume back = decode_volume(encode_volume(l));
    ASSERT_TRUE(std::holds_alternative<LabelVolume>(back));
    EXPECT_EQ(std::get<LabelVolume>(back), l);
  }
}

TEST(Vvol, HeaderLayout) {
  LabelVolume l({2, 3, 4}, 5);
  const std::string b = encode_volume(l);
  EXPECT_EQ(b.substr(0, 4), "VVOL");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), kVolumeFormatVersion);
  EXPECT_EQ(b[8], 1);  // dtype
  EXPECT_EQ(b[9], 5);  // classes
  EXPECT_EQ(b[10], 3);  // rank
  EXPECT_EQ(static_cast<unsigned char>(b[11]), 2);
  EXPECT_EQ(static_cast<unsigned char>(b[15]), 3);
  EXPECT_EQ(static_cast<unsigned char>(b[19]), 4);
  EXPECT_EQ(b.size(), 23u + 24u);
}

TEST(Vvol, CorruptionDetected) {
  std::mt19937_64 rng(3);
  for (int it = 0; it < 50; ++it) {
    const std::string good = encode_volume(random_volume(rng));
    std::string bad = good;
    bad[oracle::pick(rng, 0, 3)] ^= 0x20;
    EXPECT_EQ(format_error_kind([&] { decode_volume(bad); }), FormatError::Kind::kBadMagic);

    bad = good;
    put_u32(bad, 4, 99);
    EXPECT_EQ(format_error_kind([&] { decode_volume(bad); }), FormatError::Kind::kUnknownVersion);

    const std::size_t cut = oracle::pick(rng, 0, good.size() - 1);
    EXPECT_EQ(format_error_kind([&] { decode_volume(good.substr(0, cut)); }),
              cut < 4 ? FormatError::Kind::kBadMagic : FormatError::Kind::kTruncated)
        << "cut at " << cut;

    EXPECT_EQ(format_error_kind([&] { decode_volume(good + "x"); }), FormatError::Kind::kCorrupt);

    bad = good;
    bad[8] = 7;
    EXPECT_EQ(format_error_kind([&] { decode_volume(bad); }), FormatError::Kind::kDtypeMismatch);
  }
}

TEST(Vvol, LabelAboveClassCountRejected) {
  LabelVolume l({1, 1, 2}, 3);
  std::string b = encode_volume(l);
  b.back() = 3;
  EXPECT_THROW(decode_volume(b), Error);
}

TEST(Vvol, TypedLoadersRejectOtherDtype) {
  const auto dir = std::filesystem::temp_directory_path() / "voxelcycle_vvol_test";
  std::filesystem::create_directories(dir);
  save_volume(dir / "l.vvol", LabelVolume({2, 2, 2}, 2));
  save_volume(dir / "v.vvol", Volume({2, 2, 2}, 0.5));
  EXPECT_EQ(format_error_kind([&] { load_intensity_volume(dir / "l.vvol"); }), FormatError::Kind::kDtypeMismatch);
  EXPECT_EQ(format_error_kind([&] { load_label_volume(dir / "v.vvol"); }), FormatError::Kind::kDtypeMismatch);
  EXPECT_EQ(load_intensity_volume(dir / "v.vvol"), Volume({2, 2, 2}, 0.5));
  EXPECT_EQ(format_error_kind([&] { load_volume(dir / "missing.vvol"); }), FormatError::Kind::kIo);
  std::filesystem::remove_all(dir);
}

TEST(Vxck, RoundTripIsBitExact) {
  std::mt19937_64 rng(4);
  for (int it = 0; it < 100; ++it) {
    const Checkpoint ck = random_checkpoint(rng);
    const Checkpoint back = Checkpoint::decode(ck.encode());
    EXPECT_EQ(back.step, ck.step);
    EXPECT_EQ(back.config_hash, ck.config_hash);
    ASSERT_EQ(back.entries.size(), ck.entries.size());
    for (std::size_t i = 0; i < ck.entries.size(); ++i) {
      EXPECT_EQ(back.entries[i].name, ck.entries[i].name);
      EXPECT_EQ(back.entries[i].value, ck.entries[i].value);
    }
    EXPECT_EQ(back.encode(), ck.encode());
  }
}

TEST(Vxck, MagicAndVersionInHeader) {
  const std::string b = Checkpoint{}.encode();
  EXPECT_EQ(b.substr(0, 4), "VXCK");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), Checkpoint::kVersion);
}

TEST(Vxck, CorruptionDetected) {
  std::mt19937_64 rng(5);
  for (int it = 0; it < 50; ++it) {
    Checkpoint ck = random_checkpoint(rng);
    ck.add("extra", Tensor({2}, 1.0));
    const std::string good = ck.encode();
    std::string bad = good;
    bad[oracle::pick(rng, 0, 3)] ^= 0x01;
    EXPECT_EQ(format_error_kind([&] { Checkpoint::decode(bad); }), FormatError::Kind::kBadMagic);

    bad = good;
    put_u32(bad, 4, Checkpoint::kVersion + 1);
    EXPECT_EQ(format_error_kind([&] { Checkpoint::decode(bad); }), FormatError::Kind::kUnknownVersion);

    const std::size_t cut = oracle::pick(rng, 4, good.size() - 1);
    EXPECT_EQ(format_error_kind([&] { Checkpoint::decode(good.substr(0, cut)); }), FormatError::Kind::kTruncated)
        << "cut at " << cut;

    EXPECT_EQ(format_error_kind([&] { Checkpoint::decode(good + std::string(3, '\0')); }),
              FormatError::Kind::kCorrupt);
  }
}

TEST(Vxck, DuplicateNameRejected) {
  Checkpoint ck;
  ck.add("w", Tensor({1}));
  EXPECT_THROW(ck.add("w", Tensor({1})), Error);
}

TEST(Vxck, SubsetStripsPrefix) {
  Checkpoint ck;
  ck.add("g_a.x", Tensor({1}, 1.0));
  ck.add("g_b.x", Tensor({1}, 2.0));
  const Checkpoint sub = ck.subset("g_b.");
  ASSERT_EQ(sub.entries.size(), 1u);
  EXPECT_EQ(sub.get("x")[0], 2.0);
  EXPECT_EQ(sub.find("g_a.x"), nullptr);
}

TEST(Vxck, FileRoundTripAndTruncatedFile) {
  const auto path = std::filesystem::temp_directory_path() / "voxelcycle_vxck_test.vxck";
  std::mt19937_64 rng(6);
  Checkpoint ck = random_checkpoint(rng);
  ck.add("tail", Tensor({3}, 0.25));
  save_checkpoint(ck, path);
  EXPECT_EQ(load_checkpoint(path).encode(), ck.encode());
  const std::string bytes = wire::read_file(path);
  wire::write_file(path, bytes.substr(0, bytes.size() - 5));
  EXPECT_EQ(format_error_kind([&] { load_checkpoint(path); }), FormatError::Kind::kTruncated);
  std::filesystem::remove(path);
}
