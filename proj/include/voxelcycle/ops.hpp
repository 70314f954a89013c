#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "voxelcycle/autograd.hpp"

namespace voxelcycle {

// 3D convolution (cross-correlation). input N x Cin x D x H x W,
// weight Cout x Cin x k x k x k with odd k, bias Cout.
Var conv3d(Var input, Var weight, Var bias, std::size_t stride, std::size_t pad);

// Output extent of a convolution along one axis; throws ShapeError when the
// padded extent is smaller than the kernel.
std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride, std::size_t pad);

// 2x2x2 max pooling with stride 2. Ties route the gradient to the first
// element of the block in (d, h, w) order.
Var maxpool3d(Var input);

// Nearest-neighbour upsampling by 2 along every spatial axis.
Var upsample_nearest3d(Var input);

// Per-(n, c) normalization over the spatial voxels with population variance,
// followed by a per-channel affine map.
Var instance_norm(Var input, Var gain, Var shift, double eps = 1e-5);

Var relu(Var input);
Var leaky_relu(Var input, double slope);
Var tanh(Var input);

// Mean over all N*D*H*W voxels of -log softmax(logits)[label].
// `labels` is N x D x H x W, row-major.
Var softmax_cross_entropy(Var logits, std::span<const std::uint8_t> labels);

// mean |a - b|; the subgradient at a == b is 0.
Var l1_loss(Var a, Var b);

// mean (a - target)^2.
Var mse_loss(Var a, double target);

// N x (Ca + Cb) x D x H x W.
Var concat_channels(Var a, Var b);

Var add(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);
Var mean(Var a);

// out[i] = in[source[i]] within each (n, c) slice; `source` has one entry per
// spatial voxel and must be a permutation for the transform to be invertible.
Var gather_voxels(Var input, std::span<const std::size_t> source);

}  // namespace voxelcycle
