#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxelcycle/losses.hpp"
#include "voxelcycle/networks.hpp"
#include "voxelcycle/phantom.hpp"
#include "voxelcycle/volume.hpp"

namespace voxelcycle {

struct DiceResult {
  std::vector<double> per_class;  // index 0 is background, reported but not averaged
  double mean = 0.0;              // over classes 1..C-1
};

// Per class c: 2|P_c & G_c| / (|P_c| + |G_c|), 1.0 when c is absent from both.
DiceResult dice(const LabelVolume& pred, const LabelVolume& gt, std::size_t classes);

LabelVolume predict_labels(SegmentorNet& net, const Volume& v);

struct SScoreResult {
  DiceResult dice;
  double score = 0.0;  // dice.mean
};

// Dice of the auxiliary segmentor's prediction on `synthetic` against the
// labels of the volume it was translated from.
SScoreResult s_score(const Volume& synthetic, const LabelVolume& source_gt, SegmentorNet& aux);

// Mean of per-volume foreground Dice over a dataset.
double mean_dice(SegmentorNet& net, const Dataset& data);

// Exact permutation of a cubic-free D x H x W grid: flips, cyclic shifts and
// quarter turns, composed left to right.
class BijectiveTransform {
 public:
  enum class Op : std::uint8_t { kFlip, kShift, kRot90 };
  struct Step {
    Op op;
    int axis = 0;   // flip/shift axis, or first axis of the rotation plane
    int axis2 = 0;  // second axis of the rotation plane
    long amount = 0;  // shift voxels, or quarter turns
  };

  BijectiveTransform() = default;  // identity

  static BijectiveTransform flip(int axis);
  static BijectiveTransform shift(int axis, long voxels);
  // Rotation in the (a, b) plane; the two extents must be equal.
  static BijectiveTransform rot90(int a, int b, long quarter_turns = 1);

  // Applies `this`, then `next`.
  BijectiveTransform then(const BijectiveTransform& next) const;
  BijectiveTransform inverse() const;
  bool is_identity() const { return steps_.empty(); }
  std::string describe() const;

  // source[i] = voxel index of the input that lands at output index i.
  // Throws ShapeError when a rotation plane is not square.
  std::vector<std::size_t> index_map(const Extents3& e) const;

  Volume apply(const Volume& v) const;
  LabelVolume apply(const LabelVolume& v) const;
  // Applies to every sample/channel of an N x C x D x H x W tensor.
  Tensor apply(const Tensor& t) const;
  // Differentiable application on a tape.
  Var apply(Var v) const;

  const std::vector<Step>& steps() const { return steps_; }

 private:
  std::vector<Step> steps_;
};

// Transforms exercised by the ambiguity suite: the three flips, 4-voxel
// shifts along each axis, and quarter turns in each plane.
std::vector<BijectiveTransform> standard_transforms();

struct AmbiguityReport {
  double cycle_original = 0.0;
  double cycle_wrapped = 0.0;
  double shape_original = 0.0;
  double shape_wrapped = 0.0;
};

// Cycle/shape losses of (G_A, G_B) against a pair where one generator per
// translation direction is wrapped by T. For the A -> B -> A cycle the pair is
// (G_A o T^-1, T o G_B); for B -> A -> B it is (T o G_A, G_B o T^-1). Each
// cycle is then algebraically unchanged while every one-hop translation is
// moved by T. Losses are summed over `a` / `b` sample pairs (equal counts).
AmbiguityReport ambiguity_check(GeneratorNet& g_a, GeneratorNet& g_b, SegmentorNet& s_a, SegmentorNet& s_b,
                                const BijectiveTransform& t, const Dataset& a, const Dataset& b);

}  // namespace voxelcycle
