#include "voxelcycle/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>

#include "voxelcycle/errors.hpp"
#include "voxelcycle/wire.hpp"

namespace voxelcycle {
namespace {

constexpr int kPlacementAttempts = 64;
constexpr double kMinBackground = 0.30;

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> axes;
  std::array<std::array<double, 3>, 3> rot;  // rows: ellipsoid axes in grid coords

  bool contains(double d, double h, double w) const {
    const double p[3] = {d - center[0], h - center[1], w - center[2]};
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double q = rot[i][0] * p[0] + rot[i][1] * p[1] + rot[i][2] * p[2];
      s += (q / axes[i]) * (q / axes[i]);
    }
    return s <= 1.0;
  }
};

std::array<std::array<double, 3>, 3> random_rotation(std::mt19937_64& rng) {
  // Uniform random rotation from a normalized quaternion.
  std::normal_distribution<double> n(0.0, 1.0);
  double q[4];
  double norm = 0.0;
  for (double& c : q) {
    c = n(rng);
    norm += c * c;
  }
  norm = std::sqrt(norm);
  for (double& c : q) c /= norm;
  const double a = q[0], b = q[1], c = q[2], d = q[3];
  return {{{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
           {2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)},
           {2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d}}};
}

std::vector<std::size_t> rasterize(const Ellipsoid& e, std::size_t grid) {
  std::vector<std::size_t> voxels;
  for (std::size_t d = 0; d < grid; ++d) {
    for (std::size_t h = 0; h < grid; ++h) {
      for (std::size_t w = 0; w < grid; ++w) {
        if (e.contains(static_cast<double>(d), static_cast<double>(h), static_cast<double>(w))) {
          voxels.push_back((d * grid + h) * grid + w);
        }
      }
    }
  }
  return voxels;
}

bool touches_foreground(const LabelVolume& label, const std::vector<std::size_t>& voxels) {
  const long g = static_cast<long>(label.extents[0]);
  for (std::size_t v : voxels) {
    const long d = static_cast<long>(v) / (g * g), h = (static_cast<long>(v) / g) % g, w = static_cast<long>(v) % g;
    for (long dd = -1; dd <= 1; ++dd) {
      for (long hh = -1; hh <= 1; ++hh) {
        for (long ww = -1; ww <= 1; ++ww) {
          const long a = d + dd, b = h + hh, c = w + ww;
          if (a < 0 || b < 0 || c < 0 || a >= g || b >= g || c >= g) continue;
          if (label.data[static_cast<std::size_t>((a * g + b) * g + c)] != 0) return true;
        }
      }
    }
  }
  return false;
}

void gaussian_blur(Volume& v, double sigma) {
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double k = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = k;
    total += k;
  }
  for (auto& k : kernel) k /= total;
  const long ext[3] = {static_cast<long>(v.extents[0]), static_cast<long>(v.extents[1]),
                       static_cast<long>(v.extents[2])};
  const long stride[3] = {ext[1] * ext[2], ext[2], 1};
  std::vector<double> tmp(v.data.size());
  for (int axis = 0; axis < 3; ++axis) {
    for (long d = 0; d < ext[0]; ++d) {
      for (long h = 0; h < ext[1]; ++h) {
        for (long w = 0; w < ext[2]; ++w) {
          const long pos[3] = {d, h, w};
          const long base = d * stride[0] + h * stride[1] + w;
          double acc = 0.0;
          for (long i = -radius; i <= radius; ++i) {
            // Replicate the boundary voxel.
            const long p = std::clamp(pos[axis] + i, 0L, ext[axis] - 1);
            acc += kernel[static_cast<std::size_t>(i + radius)] *
                   v.data[static_cast<std::size_t>(base + (p - pos[axis]) * stride[axis])];
          }
          tmp[static_cast<std::size_t>(base)] = acc;
        }
      }
    }
    v.data.swap(tmp);
  }
}

}  // namespace

void PhantomSpec::validate() const {
  if (grid < 16 || (grid & (grid - 1)) != 0) {
    throw ConfigError("phantom spec: grid must be a power of two >= 16, got " + std::to_string(grid));
  }
  if (classes < 2 || classes > 6) throw ConfigError("phantom spec: classes must lie in [2, 6]");
  if (!(semi_axis_min >= 1.5) || semi_axis_max < semi_axis_min) {
    throw ConfigError("phantom spec: need 1.5 <= semi_axis_min <= semi_axis_max");
  }
  if (2.0 * semi_axis_max + 2.0 > static_cast<double>(grid)) {
    throw ConfigError("phantom spec: structures of semi-axis " + format_double(semi_axis_max) +
                      " cannot fit a grid of " + std::to_string(grid));
  }
  if (jitter < 0.0) throw ConfigError("phantom spec: jitter must be non-negative");
  const double min_volume = 4.0 / 3.0 * std::numbers::pi * std::pow(semi_axis_min, 3);
  if (static_cast<double>(structure_count) * min_volume > (1.0 - kMinBackground) * std::pow(grid, 3)) {
    throw ConfigError("phantom spec: structures cannot leave 30% background");
  }
}

KeyValues PhantomSpec::to_key_values() const {
  KeyValues kv;
  kv.set("grid", std::to_string(grid));
  kv.set("classes", std::to_string(classes));
  kv.set("structure_count", std::to_string(structure_count));
  kv.set("semi_axis_min", format_double(semi_axis_min));
  kv.set("semi_axis_max", format_double(semi_axis_max));
  kv.set("jitter", format_double(jitter));
  kv.set("seed", std::to_string(seed));
  return kv;
}

PhantomSpec PhantomSpec::from_key_values(const KeyValues& kv) {
  PhantomSpec s;
  s.grid = static_cast<std::size_t>(kv.get_int("grid", static_cast<long long>(s.grid)));
  s.classes = static_cast<std::size_t>(kv.get_int("classes", static_cast<long long>(s.classes)));
  s.structure_count = static_cast<std::size_t>(kv.get_int("structure_count", static_cast<long long>(s.structure_count)));
  s.semi_axis_min = kv.get_double("semi_axis_min", s.semi_axis_min);
  s.semi_axis_max = kv.get_double("semi_axis_max", s.semi_axis_max);
  s.jitter = kv.get_double("jitter", s.jitter);
  s.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(s.seed)));
  s.validate();
  return s;
}

std::string PhantomSpec::serialize() const { return to_key_values().to_string(); }

PhantomSpec PhantomSpec::parse(const std::string& text) {
  const KeyValues kv = KeyValues::parse(text);
  PhantomSpec s = from_key_values(kv);
  if (auto unused = kv.unused_keys(); !unused.empty()) {
    throw ConfigError("phantom spec: unknown key '" + unused.front() + "'");
  }
  return s;
}

const char* modality_name(Modality m) { return m == Modality::kA ? "A" : "B"; }

Modality parse_modality(const std::string& s) {
  if (s == "A" || s == "a") return Modality::kA;
  if (s == "B" || s == "b") return Modality::kB;
  throw ConfigError("unknown modality '" + s + "' (expected A or B)");
}

ModalityParams ModalityParams::preset(Modality m, std::size_t classes) {
  // Background first. A is bright-structure (CT-like); B reorders the
  // foreground classes and lifts the background, roughly an MR-like contrast.
  static const std::vector<double> a_means = {-0.8, 0.7, 0.2, -0.3, 0.45, -0.05};
  static const std::vector<double> b_means = {-0.2, -0.85, 0.75, 0.3, -0.55, 0.5};
  if (classes < 2 || classes > a_means.size()) throw ConfigError("modality preset: unsupported class count");
  ModalityParams p;
  const auto& src = m == Modality::kA ? a_means : b_means;
  p.class_means.assign(src.begin(), src.begin() + static_cast<long>(classes));
  p.noise_sigma = 0.05;
  p.bias_amplitude = 0.08;
  p.blur_sigma = 0.5;
  return p;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

LabelVolume generate_anatomy(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t g = spec.grid;
  LabelVolume label({g, g, g}, spec.classes);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double c = 0.5 * static_cast<double>(g - 1);
  const double ring = 0.27 * static_cast<double>(g);
  const double phase = 2.0 * std::numbers::pi * unit(rng) * 0.1;

  for (std::size_t s = 0; s < spec.structure_count; ++s) {
    const std::uint8_t cls = static_cast<std::uint8_t>(1 + s % (spec.classes - 1));
    const double theta = phase + 2.0 * std::numbers::pi * static_cast<double>(s) /
                                     static_cast<double>(std::max<std::size_t>(spec.structure_count, 1));
    const double tilt = (s % 2 == 0 ? 1.0 : -1.0) * 0.15 * static_cast<double>(g);
    const std::array<double, 3> anchor = {c + tilt * 0.5, c + ring * std::cos(theta), c + ring * std::sin(theta)};
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
      Ellipsoid e;
      double largest = 0.0;
      // Later attempts draw smaller axes so crowded layouts still fit.
      const double shrink = std::max(0.0, 1.0 - 2.0 * attempt / static_cast<double>(kPlacementAttempts));
      for (auto& a : e.axes) {
        a = spec.semi_axis_min + (spec.semi_axis_max - spec.semi_axis_min) * shrink * unit(rng);
        largest = std::max(largest, a);
      }
      const double lo = largest, hi = static_cast<double>(g - 1) - largest;
      for (int i = 0; i < 3; ++i) {
        const double off = spec.jitter * (2.0 * unit(rng) - 1.0);
        e.center[i] = std::clamp(anchor[i] + off, lo, hi);
      }
      e.rot = random_rotation(rng);
      auto voxels = rasterize(e, g);
      if (voxels.empty() || touches_foreground(label, voxels)) continue;
      LabelVolume candidate = label;
      for (auto v : voxels) candidate.data[v] = cls;
      if (connected_components(candidate, cls) != connected_components(label, cls) + 1) continue;
      if (candidate.fraction(0) < kMinBackground) continue;
      label = std::move(candidate);
      break;
    }
  }
  return label;
}

Volume render_modality(const LabelVolume& label, const ModalityParams& params, std::uint64_t seed) {
  if (params.class_means.size() != label.classes) {
    throw LabelError("render_modality: " + std::to_string(params.class_means.size()) + " class means for " +
                     std::to_string(label.classes) + " classes");
  }
  label.validate();
  Volume v(label.extents);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = params.class_means[label.data[i]];
  if (params.blur_sigma > 0.0) gaussian_blur(v, params.blur_sigma);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (params.bias_amplitude > 0.0) {
    double phase[3], freq[3];
    for (int i = 0; i < 3; ++i) {
      phase[i] = 2.0 * std::numbers::pi * unit(rng);
      freq[i] = std::numbers::pi / static_cast<double>(label.extents[static_cast<std::size_t>(i)]);
    }
    for (std::size_t d = 0; d < v.extents[0]; ++d) {
      for (std::size_t h = 0; h < v.extents[1]; ++h) {
        for (std::size_t w = 0; w < v.extents[2]; ++w) {
          const double f = (std::sin(freq[0] * static_cast<double>(d) + phase[0]) +
                            std::sin(freq[1] * static_cast<double>(h) + phase[1]) +
                            std::sin(freq[2] * static_cast<double>(w) + phase[2])) /
                           3.0;
          v.data[v.index(d, h, w)] *= 1.0 + params.bias_amplitude * f;
        }
      }
    }
  }
  if (params.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, params.noise_sigma);
    for (auto& x : v.data) x += noise(rng);
  }
  for (auto& x : v.data) x = std::clamp(x, -1.0, 1.0);
  return v;
}

LabelVolume quantize_to_classes(const Volume& v, const ModalityParams& params) {
  LabelVolume out(v.extents, params.class_means.size());
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < params.class_means.size(); ++c) {
      if (std::abs(v.data[i] - params.class_means[c]) < std::abs(v.data[i] - params.class_means[best])) best = c;
    }
    out.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

std::size_t connected_components(const LabelVolume& label, std::uint8_t cls) {
  const auto& e = label.extents;
  std::vector<char> seen(label.data.size(), 0);
  std::vector<std::size_t> stack;
  std::size_t components = 0;
  for (std::size_t start = 0; start < label.data.size(); ++start) {
    if (label.data[start] != cls || seen[start]) continue;
    ++components;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      const std::size_t d = v / (e[1] * e[2]), h = (v / e[2]) % e[1], w = v % e[2];
      const long nbr[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
      for (const auto& o : nbr) {
        const long a = static_cast<long>(d) + o[0], b = static_cast<long>(h) + o[1], c = static_cast<long>(w) + o[2];
        if (a < 0 || b < 0 || c < 0 || a >= static_cast<long>(e[0]) || b >= static_cast<long>(e[1]) ||
            c >= static_cast<long>(e[2])) {
          continue;
        }
        const std::size_t u = label.index(static_cast<std::size_t>(a), static_cast<std::size_t>(b),
                                          static_cast<std::size_t>(c));
        if (label.data[u] == cls && !seen[u]) {
          seen[u] = 1;
          stack.push_back(u);
        }
      }
    }
  }
  return components;
}

std::vector<std::uint64_t> Dataset::anatomy_seeds() const {
  std::vector<std::uint64_t> out;
  for (const auto& s : samples) out.push_back(s.anatomy_seed);
  return out;
}

Dataset make_dataset(std::size_t n, const PhantomSpec& spec, Modality modality, std::uint64_t seed_base) {
  if (n == 0) throw ConfigError("make_dataset: need at least one sample");
  spec.validate();
  const ModalityParams params = ModalityParams::preset(modality, spec.classes);
  Dataset ds;
  ds.modality = modality;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.anatomy_seed = mix_seed(seed_base, i);
    s.render_seed = mix_seed(s.anatomy_seed, modality == Modality::kA ? 0xA : 0xB);
    s.label = generate_anatomy(spec, s.anatomy_seed);
    s.volume = render_modality(s.label, params, s.render_seed);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

PairedDatasets make_paired_eval(std::size_t n, const PhantomSpec& spec, std::uint64_t seed_base) {
  return {make_dataset(n, spec, Modality::kA, seed_base), make_dataset(n, spec, Modality::kB, seed_base)};
}

bool unpaired(const Dataset& a, const Dataset& b) {
  const auto sa = a.anatomy_seeds();
  const std::set<std::uint64_t> seeds(sa.begin(), sa.end());
  for (auto s : b.anatomy_seeds()) {
    if (seeds.count(s)) return false;
  }
  return true;
}

namespace {

std::string sample_name(const char* kind, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04zu.vvol", kind, i);
  return buf;
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  KeyValues kv;
  kv.set("modality", modality_name(data.modality));
  kv.set("count", std::to_string(data.size()));
  std::string anatomy, render;
  for (const auto& s : data.samples) {
    anatomy += (anatomy.empty() ? "" : ",") + std::to_string(s.anatomy_seed);
    render += (render.empty() ? "" : ",") + std::to_string(s.render_seed);
  }
  kv.set("anatomy_seeds", anatomy);
  kv.set("render_seeds", render);
  wire::write_file(dir / "dataset.cfg", kv.to_string());
  for (std::size_t i = 0; i < data.size(); ++i) {
    save_volume(dir / sample_name("volume", i), data.samples[i].volume);
    save_volume(dir / sample_name("label", i), data.samples[i].label);
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw FormatError(FormatError::Kind::kIo, "dataset directory '" + dir.string() + "' does not exist");
  }
  Dataset data;
  const KeyValues kv = KeyValues::load(dir / "dataset.cfg");
  data.modality = parse_modality(kv.get_string("modality", "A"));
  const long long count = kv.get_int("count", 0);
  const auto anatomy = kv.get_strings("anatomy_seeds", {});
  const auto render = kv.get_strings("render_seeds", {});
  if (count <= 0) throw FormatError(FormatError::Kind::kCorrupt, "dataset.cfg: count must be positive");
  for (std::size_t i = 0; i < static_cast<std::size_t>(count); ++i) {
    Sample s;
    s.volume = load_intensity_volume(dir / sample_name("volume", i));
    s.label = load_label_volume(dir / sample_name("label", i));
    if (s.volume.extents != s.label.extents) {
      throw FormatError(FormatError::Kind::kCorrupt, "dataset sample " + std::to_string(i) + ": volume and label extents differ");
    }
    if (i < anatomy.size()) s.anatomy_seed = std::stoull(anatomy[i]);
    if (i < render.size()) s.render_seed = std::stoull(render[i]);
    data.samples.push_back(std::move(s));
  }
  return data;
}

}  // namespace voxelcycle
