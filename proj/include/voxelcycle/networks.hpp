#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "voxelcycle/autograd.hpp"

namespace voxelcycle {

class Checkpoint;

// Where a 3x3x3 convolution sits in a network; used to audit architecture
// invariants (two convolutions per resolution level, no transposed convs).
struct ConvSite {
  std::string name;
  enum class Path { kEncoder, kDecoder, kHead } path;
  int level;  // 0 = input resolution
  enum class Kind { kPlain, kStrided, kUpsample } kind;
  std::size_t kernel;
};

// Named, ordered parameters plus the bookkeeping shared by all three nets.
class Network {
 public:
  virtual ~Network() = default;

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const Parameter& parameter(const std::string& name) const;

  // Conv weights ~ Normal(0, 0.02), biases 0, norm gains 1 / shifts 0.
  void init_parameters(std::uint64_t seed);
  void zero_grad();

  // Copies values from a checkpoint; names and dims must match exactly.
  void load_state(const Checkpoint& ckpt);

  const std::vector<ConvSite>& conv_sites() const { return sites_; }

 protected:
  struct ConvRef {
    std::size_t weight, bias;
    std::size_t stride, pad;
  };
  struct NormRef {
    std::size_t gain, shift;
  };

  ConvRef add_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride,
                   std::size_t pad, ConvSite::Path path, int level, ConvSite::Kind kind);
  NormRef add_norm(const std::string& name, std::size_t channels);

  // Binds every parameter to `tape` in order; constants when `trainable` is false.
  std::vector<Var> bind(Tape& tape, bool trainable);
  static Var apply(const std::vector<Var>& bound, const ConvRef& c, Var x);
  static Var apply(const std::vector<Var>& bound, const NormRef& n, Var x);

  std::vector<Parameter> params_;
  std::vector<ConvSite> sites_;
};

// Throws ShapeError naming the first spatial axis not divisible by `factor`.
void require_divisible(const Tensor& x, std::size_t factor, const char* where);

// U-Net generator: stride-2 conv downsampling three times, nearest x2 +
// conv upsampling, instance norm + ReLU, skip concatenation, tanh output.
class GeneratorNet : public Network {
 public:
  explicit GeneratorNet(std::size_t base_filters = 16);

  std::size_t base_filters() const { return base_; }

  // x: N x 1 x D x H x W with D, H, W divisible by 8. `trainable` binds the
  // parameters as gradient-carrying leaves.
  Var forward(Tape& tape, Var x, bool trainable = true);
  Tensor forward(const Tensor& x);

  static GeneratorNet from_checkpoint(const Checkpoint& ckpt);

 private:
  std::size_t base_;
  ConvRef enc0a_, enc0b_, enc1d_, enc1c_, enc2d_, enc2c_, enc3d_, enc3c_;
  NormRef n0a_, n0b_, n1d_, n1c_, n2d_, n2c_, n3d_, n3c_;
  ConvRef up2_, dec2_, up1_, dec1_, up0_, out_;
  NormRef nu2_, nd2_, nu1_, nd1_, nu0_;
};

// PatchGAN discriminator: three stride-2 3x3x3 conv blocks (LeakyReLU 0.2,
// instance norm on all but the first) and a pointwise 1-channel logit conv.
class DiscriminatorNet : public Network {
 public:
  // `instance_norm` exists for receptive-field probes only; training always
  // uses the normalized variant.
  explicit DiscriminatorNet(std::size_t base_filters = 16, bool instance_norm = true);

  std::size_t base_filters() const { return base_; }

  Var forward(Tape& tape, Var x, bool trainable = true);
  Tensor forward(const Tensor& x);

  // Logit grid extent for an input extent.
  static std::size_t output_extent(std::size_t input_extent);

  // Inclusive input-voxel interval seen by logit index `o` along one axis.
  static std::pair<std::size_t, std::size_t> receptive_field(std::size_t o, std::size_t input_extent);

  static constexpr std::size_t kMinExtent = 8;

 private:
  std::size_t base_;
  bool normalized_;
  ConvRef c0_, c1_, c2_, out_;
  NormRef n1_, n2_;
};

// U-Net segmentor without any normalization: max-pool downsampling,
// nearest x2 + conv upsampling, C-channel logits at input resolution.
class SegmentorNet : public Network {
 public:
  SegmentorNet(std::size_t classes, std::size_t base_filters = 16);

  std::size_t classes() const { return classes_; }
  std::size_t base_filters() const { return base_; }

  Var forward(Tape& tape, Var x, bool trainable = true);
  Tensor forward(const Tensor& x);

  static SegmentorNet from_checkpoint(const Checkpoint& ckpt);

 private:
  std::size_t classes_, base_;
  ConvRef enc0a_, enc0b_, enc1a_, enc1b_, enc2a_, enc2b_, enc3a_, enc3b_;
  ConvRef up2_, dec2_, up1_, dec1_, up0_, out_;
};

// Channel-wise argmax of a N x C x D x H x W logits tensor (first max wins).
std::vector<std::uint8_t> argmax_channels(const Tensor& logits);

}  // namespace voxelcycle
