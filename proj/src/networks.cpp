#include "voxelcycle/networks.hpp"

#include <random>

#include "voxelcycle/checkpoint.hpp"
#include "voxelcycle/errors.hpp"
#include "voxelcycle/ops.hpp"

namespace voxelcycle {
namespace {

constexpr double kInitStd = 0.02;
constexpr double kNormEps = 1e-5;
constexpr double kLeakySlope = 0.2;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

const Parameter& Network::parameter(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw Error("no parameter named '" + name + "'");
}

void Network::init_parameters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  for (auto& p : params_) {
    if (ends_with(p.name, ".weight")) {
      for (auto& x : p.value.data()) x = normal(rng);
    } else if (ends_with(p.name, ".gain")) {
      p.value.fill(1.0);
    } else {
      p.value.fill(0.0);
    }
    p.zero_grad();
  }
}

void Network::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Network::load_state(const Checkpoint& ckpt) {
  for (auto& p : params_) {
    const Tensor* t = ckpt.find(p.name);
    if (t == nullptr) throw FormatError(FormatError::Kind::kCorrupt, "checkpoint lacks parameter '" + p.name + "'");
    if (t->dims() != p.value.dims()) {
      throw ShapeError("checkpoint parameter '" + p.name + "' has dims " + dims_to_string(t->dims()) + ", expected " +
                       dims_to_string(p.value.dims()));
    }
    p.value = *t;
    p.zero_grad();
  }
}

Network::ConvRef Network::add_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t kernel,
                                   std::size_t stride, std::size_t pad, ConvSite::Path path, int level,
                                   ConvSite::Kind kind) {
  ConvRef ref{params_.size(), params_.size() + 1, stride, pad};
  params_.emplace_back(name + ".weight", Tensor(Dims{cout, cin, kernel, kernel, kernel}));
  params_.emplace_back(name + ".bias", Tensor(Dims{cout}));
  sites_.push_back({name, path, level, kind, kernel});
  return ref;
}

Network::NormRef Network::add_norm(const std::string& name, std::size_t channels) {
  NormRef ref{params_.size(), params_.size() + 1};
  params_.emplace_back(name + ".gain", Tensor(Dims{channels}, 1.0));
  params_.emplace_back(name + ".shift", Tensor(Dims{channels}));
  return ref;
}

std::vector<Var> Network::bind(Tape& tape, bool trainable) {
  std::vector<Var> bound;
  bound.reserve(params_.size());
  for (auto& p : params_) bound.push_back(trainable ? tape.parameter(p) : tape.constant(p.value));
  return bound;
}

Var Network::apply(const std::vector<Var>& bound, const ConvRef& c, Var x) {
  return conv3d(x, bound[c.weight], bound[c.bias], c.stride, c.pad);
}

// Statistics over a single voxel are undefined, which happens at the deepest
// level of an 8^3 input; such slices pass through unnormalized.
Var Network::apply(const std::vector<Var>& bound, const NormRef& n, Var x) {
  const Dims& d = x.dims();
  if (d[2] * d[3] * d[4] < 2) return x;
  return instance_norm(x, bound[n.gain], bound[n.shift], kNormEps);
}

void require_divisible(const Tensor& x, std::size_t factor, const char* where) {
  require_rank5(x, where);
  const char* axes[] = {"D", "H", "W"};
  for (int a = 0; a < 3; ++a) {
    const std::size_t e = x.dim(2 + a);
    if (e % factor != 0) {
      throw ShapeError(std::string(where) + ": spatial axis " + axes[a] + " has extent " + std::to_string(e) +
                       ", not divisible by " + std::to_string(factor));
    }
  }
}

// ---------------------------------------------------------------------------

GeneratorNet::GeneratorNet(std::size_t f) : base_(f) {
  if (f == 0) throw ConfigError("generator: base_filters must be positive");
  using P = ConvSite::Path;
  using K = ConvSite::Kind;
  enc0a_ = add_conv("enc0.conv_a", 1, f, 3, 1, 1, P::kEncoder, 0, K::kPlain);
  n0a_ = add_norm("enc0.norm_a", f);
  enc0b_ = add_conv("enc0.conv_b", f, f, 3, 1, 1, P::kEncoder, 0, K::kPlain);
  n0b_ = add_norm("enc0.norm_b", f);
  enc1d_ = add_conv("enc1.down", f, 2 * f, 3, 2, 1, P::kEncoder, 1, K::kStrided);
  n1d_ = add_norm("enc1.norm_down", 2 * f);
  enc1c_ = add_conv("enc1.conv", 2 * f, 2 * f, 3, 1, 1, P::kEncoder, 1, K::kPlain);
  n1c_ = add_norm("enc1.norm", 2 * f);
  enc2d_ = add_conv("enc2.down", 2 * f, 4 * f, 3, 2, 1, P::kEncoder, 2, K::kStrided);
  n2d_ = add_norm("enc2.norm_down", 4 * f);
  enc2c_ = add_conv("enc2.conv", 4 * f, 4 * f, 3, 1, 1, P::kEncoder, 2, K::kPlain);
  n2c_ = add_norm("enc2.norm", 4 * f);
  enc3d_ = add_conv("enc3.down", 4 * f, 8 * f, 3, 2, 1, P::kEncoder, 3, K::kStrided);
  n3d_ = add_norm("enc3.norm_down", 8 * f);
  enc3c_ = add_conv("enc3.conv", 8 * f, 8 * f, 3, 1, 1, P::kEncoder, 3, K::kPlain);
  n3c_ = add_norm("enc3.norm", 8 * f);

  up2_ = add_conv("dec2.up", 8 * f, 4 * f, 3, 1, 1, P::kDecoder, 2, K::kUpsample);
  nu2_ = add_norm("dec2.norm_up", 4 * f);
  dec2_ = add_conv("dec2.conv", 8 * f, 4 * f, 3, 1, 1, P::kDecoder, 2, K::kPlain);
  nd2_ = add_norm("dec2.norm", 4 * f);
  up1_ = add_conv("dec1.up", 4 * f, 2 * f, 3, 1, 1, P::kDecoder, 1, K::kUpsample);
  nu1_ = add_norm("dec1.norm_up", 2 * f);
  dec1_ = add_conv("dec1.conv", 4 * f, 2 * f, 3, 1, 1, P::kDecoder, 1, K::kPlain);
  nd1_ = add_norm("dec1.norm", 2 * f);
  up0_ = add_conv("dec0.up", 2 * f, f, 3, 1, 1, P::kDecoder, 0, K::kUpsample);
  nu0_ = add_norm("dec0.norm_up", f);
  out_ = add_conv("dec0.out", 2 * f, 1, 3, 1, 1, P::kDecoder, 0, K::kPlain);
}

Var GeneratorNet::forward(Tape& tape, Var x, bool trainable) {
  require_divisible(x.value(), 8, "generator");
  if (x.value().dim(1) != 1) throw ShapeError("generator: expected a single input channel");
  const auto b = bind(tape, trainable);
  auto block = [&](const ConvRef& c, const NormRef& n, Var in) { return relu(apply(b, n, apply(b, c, in))); };

  Var s0 = block(enc0b_, n0b_, block(enc0a_, n0a_, x));
  Var s1 = block(enc1c_, n1c_, block(enc1d_, n1d_, s0));
  Var s2 = block(enc2c_, n2c_, block(enc2d_, n2d_, s1));
  Var s3 = block(enc3c_, n3c_, block(enc3d_, n3d_, s2));

  Var u2 = block(up2_, nu2_, upsample_nearest3d(s3));
  Var d2 = block(dec2_, nd2_, concat_channels(u2, s2));
  Var u1 = block(up1_, nu1_, upsample_nearest3d(d2));
  Var d1 = block(dec1_, nd1_, concat_channels(u1, s1));
  Var u0 = block(up0_, nu0_, upsample_nearest3d(d1));
  return voxelcycle::tanh(apply(b, out_, concat_channels(u0, s0)));
}

Tensor GeneratorNet::forward(const Tensor& x) {
  Tape tape;
  return forward(tape, tape.constant(x), false).value();
}

GeneratorNet GeneratorNet::from_checkpoint(const Checkpoint& ckpt) {
  const Tensor& w = ckpt.get("enc0.conv_a.weight");
  GeneratorNet net(w.dim(0));
  net.load_state(ckpt);
  return net;
}

// ---------------------------------------------------------------------------

DiscriminatorNet::DiscriminatorNet(std::size_t f, bool instance_norm) : base_(f), normalized_(instance_norm) {
  if (f == 0) throw ConfigError("discriminator: base_filters must be positive");
  using P = ConvSite::Path;
  using K = ConvSite::Kind;
  c0_ = add_conv("block0.conv", 1, f, 3, 2, 1, P::kEncoder, 1, K::kStrided);
  c1_ = add_conv("block1.conv", f, 2 * f, 3, 2, 1, P::kEncoder, 2, K::kStrided);
  if (normalized_) n1_ = add_norm("block1.norm", 2 * f);
  c2_ = add_conv("block2.conv", 2 * f, 4 * f, 3, 2, 1, P::kEncoder, 3, K::kStrided);
  if (normalized_) n2_ = add_norm("block2.norm", 4 * f);
  out_ = add_conv("head.conv", 4 * f, 1, 1, 1, 0, P::kHead, 3, K::kPlain);
}

std::size_t DiscriminatorNet::output_extent(std::size_t e) {
  for (int i = 0; i < 3; ++i) e = conv_output_extent(e, 3, 2, 1);
  return conv_output_extent(e, 1, 1, 0);
}

std::pair<std::size_t, std::size_t> DiscriminatorNet::receptive_field(std::size_t o, std::size_t input_extent) {
  // Walk back through the three stride-2, k=3, pad=1 convs (the head is 1x1x1).
  long lo = static_cast<long>(o), hi = static_cast<long>(o);
  for (int i = 0; i < 3; ++i) {
    lo = 2 * lo - 1;
    hi = 2 * hi + 1;
  }
  lo = std::max(lo, 0L);
  hi = std::min(hi, static_cast<long>(input_extent) - 1);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

Var DiscriminatorNet::forward(Tape& tape, Var x, bool trainable) {
  const Tensor& in = x.value();
  require_rank5(in, "discriminator");
  if (in.dim(1) != 1) throw ShapeError("discriminator: expected a single input channel");
  const char* axes[] = {"D", "H", "W"};
  for (int a = 0; a < 3; ++a) {
    if (in.dim(2 + a) < kMinExtent) {
      throw ShapeError(std::string("discriminator: input too small along ") + axes[a] + " (" +
                       std::to_string(in.dim(2 + a)) + " < " + std::to_string(kMinExtent) + ")");
    }
  }
  const auto b = bind(tape, trainable);
  Var h = leaky_relu(apply(b, c0_, x), kLeakySlope);
  h = apply(b, c1_, h);
  if (normalized_) h = apply(b, n1_, h);
  h = leaky_relu(h, kLeakySlope);
  h = apply(b, c2_, h);
  if (normalized_) h = apply(b, n2_, h);
  h = leaky_relu(h, kLeakySlope);
  return apply(b, out_, h);
}

Tensor DiscriminatorNet::forward(const Tensor& x) {
  Tape tape;
  return forward(tape, tape.constant(x), false).value();
}

// ---------------------------------------------------------------------------

SegmentorNet::SegmentorNet(std::size_t classes, std::size_t f) : classes_(classes), base_(f) {
  if (classes < 2) throw ConfigError("segmentor: need at least 2 classes");
  if (f == 0) throw ConfigError("segmentor: base_filters must be positive");
  using P = ConvSite::Path;
  using K = ConvSite::Kind;
  enc0a_ = add_conv("enc0.conv_a", 1, f, 3, 1, 1, P::kEncoder, 0, K::kPlain);
  enc0b_ = add_conv("enc0.conv_b", f, f, 3, 1, 1, P::kEncoder, 0, K::kPlain);
  enc1a_ = add_conv("enc1.conv_a", f, 2 * f, 3, 1, 1, P::kEncoder, 1, K::kPlain);
  enc1b_ = add_conv("enc1.conv_b", 2 * f, 2 * f, 3, 1, 1, P::kEncoder, 1, K::kPlain);
  enc2a_ = add_conv("enc2.conv_a", 2 * f, 4 * f, 3, 1, 1, P::kEncoder, 2, K::kPlain);
  enc2b_ = add_conv("enc2.conv_b", 4 * f, 4 * f, 3, 1, 1, P::kEncoder, 2, K::kPlain);
  enc3a_ = add_conv("enc3.conv_a", 4 * f, 8 * f, 3, 1, 1, P::kEncoder, 3, K::kPlain);
  enc3b_ = add_conv("enc3.conv_b", 8 * f, 8 * f, 3, 1, 1, P::kEncoder, 3, K::kPlain);
  up2_ = add_conv("dec2.up", 8 * f, 4 * f, 3, 1, 1, P::kDecoder, 2, K::kUpsample);
  dec2_ = add_conv("dec2.conv", 8 * f, 4 * f, 3, 1, 1, P::kDecoder, 2, K::kPlain);
  up1_ = add_conv("dec1.up", 4 * f, 2 * f, 3, 1, 1, P::kDecoder, 1, K::kUpsample);
  dec1_ = add_conv("dec1.conv", 4 * f, 2 * f, 3, 1, 1, P::kDecoder, 1, K::kPlain);
  up0_ = add_conv("dec0.up", 2 * f, f, 3, 1, 1, P::kDecoder, 0, K::kUpsample);
  out_ = add_conv("dec0.out", 2 * f, classes, 3, 1, 1, P::kDecoder, 0, K::kPlain);
}

Var SegmentorNet::forward(Tape& tape, Var x, bool trainable) {
  require_divisible(x.value(), 8, "segmentor");
  if (x.value().dim(1) != 1) throw ShapeError("segmentor: expected a single input channel");
  const auto b = bind(tape, trainable);
  auto conv = [&](const ConvRef& c, Var in) { return relu(apply(b, c, in)); };

  Var s0 = conv(enc0b_, conv(enc0a_, x));
  Var s1 = conv(enc1b_, conv(enc1a_, maxpool3d(s0)));
  Var s2 = conv(enc2b_, conv(enc2a_, maxpool3d(s1)));
  Var s3 = conv(enc3b_, conv(enc3a_, maxpool3d(s2)));

  Var d2 = conv(dec2_, concat_channels(conv(up2_, upsample_nearest3d(s3)), s2));
  Var d1 = conv(dec1_, concat_channels(conv(up1_, upsample_nearest3d(d2)), s1));
  Var u0 = conv(up0_, upsample_nearest3d(d1));
  return apply(b, out_, concat_channels(u0, s0));
}

Tensor SegmentorNet::forward(const Tensor& x) {
  Tape tape;
  return forward(tape, tape.constant(x), false).value();
}

SegmentorNet SegmentorNet::from_checkpoint(const Checkpoint& ckpt) {
  const Tensor& w = ckpt.get("enc0.conv_a.weight");
  const Tensor& out = ckpt.get("dec0.out.weight");
  SegmentorNet net(out.dim(0), w.dim(0));
  net.load_state(ckpt);
  return net;
}

std::vector<std::uint8_t> argmax_channels(const Tensor& logits) {
  require_rank5(logits, "argmax_channels");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  const std::size_t m = logits.dim(2) * logits.dim(3) * logits.dim(4);
  std::vector<std::uint8_t> out(n * m);
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = logits.ptr() + b * c * m;
    for (std::size_t v = 0; v < m; ++v) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k) {
        if (z[k * m + v] > z[best * m + v]) best = k;
      }
      out[b * m + v] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

}  // namespace voxelcycle
