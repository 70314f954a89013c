#include "voxelcycle/evaluation.hpp"

#include <array>
#include <numeric>
#include <sstream>

#include "voxelcycle/errors.hpp"
#include "voxelcycle/ops.hpp"

namespace voxelcycle {

DiceResult dice(const LabelVolume& pred, const LabelVolume& gt, std::size_t classes) {
  if (pred.extents != gt.extents) throw ShapeError("dice: prediction and ground truth extents differ");
  if (classes < 2) throw LabelError("dice: need at least two classes");
  std::vector<std::size_t> p(classes, 0), g(classes, 0), both(classes, 0);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const auto a = pred.data[i], b = gt.data[i];
    if (a >= classes || b >= classes) {
      throw LabelError("dice: label " + std::to_string(std::max(a, b)) + " outside " + std::to_string(classes) +
                       " classes");
    }
    ++p[a];
    ++g[b];
    if (a == b) ++both[a];
  }
  DiceResult r;
  r.per_class.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t denom = p[c] + g[c];
    r.per_class[c] = denom == 0 ? 1.0 : 2.0 * static_cast<double>(both[c]) / static_cast<double>(denom);
  }
  r.mean = std::accumulate(r.per_class.begin() + 1, r.per_class.end(), 0.0) / static_cast<double>(classes - 1);
  return r;
}

LabelVolume predict_labels(SegmentorNet& net, const Volume& v) {
  const auto ids = argmax_channels(net.forward(v.to_tensor()));
  LabelVolume out(v.extents, net.classes());
  out.data = ids;
  return out;
}

SScoreResult s_score(const Volume& synthetic, const LabelVolume& source_gt, SegmentorNet& aux) {
  SScoreResult r;
  r.dice = dice(predict_labels(aux, synthetic), source_gt, aux.classes());
  r.score = r.dice.mean;
  return r;
}

double mean_dice(SegmentorNet& net, const Dataset& data) {
  if (data.size() == 0) throw ConfigError("mean_dice: dataset is empty");
  double total = 0.0;
  for (const auto& s : data.samples) total += dice(predict_labels(net, s.volume), s.label, net.classes()).mean;
  return total / static_cast<double>(data.size());
}

// --- transforms --------------------------------------------------------------

namespace {

void check_axis(int axis) {
  if (axis < 0 || axis > 2) throw ConfigError("transform axis must be 0, 1 or 2");
}

long wrap(long v, long n) { return ((v % n) + n) % n; }

}  // namespace

BijectiveTransform BijectiveTransform::flip(int axis) {
  check_axis(axis);
  BijectiveTransform t;
  t.steps_.push_back({Op::kFlip, axis, 0, 0});
  return t;
}

BijectiveTransform BijectiveTransform::shift(int axis, long voxels) {
  check_axis(axis);
  BijectiveTransform t;
  t.steps_.push_back({Op::kShift, axis, 0, voxels});
  return t;
}

BijectiveTransform BijectiveTransform::rot90(int a, int b, long quarter_turns) {
  check_axis(a);
  check_axis(b);
  if (a == b) throw ConfigError("rotation plane needs two distinct axes");
  BijectiveTransform t;
  t.steps_.push_back({Op::kRot90, a, b, wrap(quarter_turns, 4)});
  return t;
}

BijectiveTransform BijectiveTransform::then(const BijectiveTransform& next) const {
  BijectiveTransform t = *this;
  t.steps_.insert(t.steps_.end(), next.steps_.begin(), next.steps_.end());
  return t;
}

BijectiveTransform BijectiveTransform::inverse() const {
  BijectiveTransform t;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
    Step s = *it;
    if (s.op == Op::kShift) s.amount = -s.amount;
    if (s.op == Op::kRot90) s.amount = wrap(-s.amount, 4);
    t.steps_.push_back(s);
  }
  return t;
}

std::string BijectiveTransform::describe() const {
  if (steps_.empty()) return "identity";
  std::ostringstream os;
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    const Step& s = steps_[i];
    if (i) os << '+';
    switch (s.op) {
      case Op::kFlip: os << "flip" << s.axis; break;
      case Op::kShift: os << "shift" << s.axis << ':' << s.amount; break;
      case Op::kRot90: os << "rot" << s.axis << s.axis2 << ':' << s.amount; break;
    }
  }
  return os.str();
}

std::vector<std::size_t> BijectiveTransform::index_map(const Extents3& e) const {
  const std::size_t n = voxel_count(e);
  std::vector<std::size_t> source(n);
  std::iota(source.begin(), source.end(), 0);
  const std::array<long, 3> ext = {static_cast<long>(e[0]), static_cast<long>(e[1]), static_cast<long>(e[2])};
  auto flat = [&](const std::array<long, 3>& c) {
    return static_cast<std::size_t>((c[0] * ext[1] + c[1]) * ext[2] + c[2]);
  };
  for (const Step& s : steps_) {
    if (s.op == Op::kRot90 && ext[static_cast<std::size_t>(s.axis)] != ext[static_cast<std::size_t>(s.axis2)]) {
      throw ShapeError("rot90 needs equal extents on axes " + std::to_string(s.axis) + " and " +
                       std::to_string(s.axis2));
    }
    // step_src[i]: position before this step that lands at i.
    std::vector<std::size_t> next(n);
    std::array<long, 3> o{};
    for (o[0] = 0; o[0] < ext[0]; ++o[0]) {
      for (o[1] = 0; o[1] < ext[1]; ++o[1]) {
        for (o[2] = 0; o[2] < ext[2]; ++o[2]) {
          std::array<long, 3> in = o;
          const auto a = static_cast<std::size_t>(s.axis);
          const auto b = static_cast<std::size_t>(s.axis2);
          switch (s.op) {
            case Op::kFlip: in[a] = ext[a] - 1 - o[a]; break;
            case Op::kShift: in[a] = wrap(o[a] - s.amount, ext[a]); break;
            case Op::kRot90:
              for (long q = 0; q < s.amount; ++q) {
                const long i = in[a], j = in[b];
                in[a] = ext[a] - 1 - j;
                in[b] = i;
              }
              break;
          }
          next[flat(o)] = source[flat(in)];
        }
      }
    }
    source = std::move(next);
  }
  return source;
}

Volume BijectiveTransform::apply(const Volume& v) const {
  const auto src = index_map(v.extents);
  Volume out(v.extents);
  for (std::size_t i = 0; i < src.size(); ++i) out.data[i] = v.data[src[i]];
  return out;
}

LabelVolume BijectiveTransform::apply(const LabelVolume& v) const {
  const auto src = index_map(v.extents);
  LabelVolume out(v.extents, v.classes);
  for (std::size_t i = 0; i < src.size(); ++i) out.data[i] = v.data[src[i]];
  return out;
}

Tensor BijectiveTransform::apply(const Tensor& t) const {
  require_rank5(t, "transform");
  const auto src = index_map({t.dim(2), t.dim(3), t.dim(4)});
  const std::size_t plane = src.size();
  Tensor out(t.dims());
  for (std::size_t s = 0; s < t.numel() / plane; ++s) {
    for (std::size_t i = 0; i < plane; ++i) out[s * plane + i] = t[s * plane + src[i]];
  }
  return out;
}

Var BijectiveTransform::apply(Var v) const {
  const Dims& d = v.dims();
  if (d.size() != 5) throw ShapeError("transform expects a rank-5 tensor, got " + dims_to_string(d));
  const auto src = index_map({d[2], d[3], d[4]});
  return gather_voxels(v, src);
}

std::vector<BijectiveTransform> standard_transforms() {
  using T = BijectiveTransform;
  return {T::flip(0),        T::flip(1),        T::flip(2),        T::shift(0, 4), T::shift(1, 4),
          T::shift(2, 4),    T::rot90(1, 2),    T::rot90(0, 1),    T::rot90(0, 2),
          T::flip(2).then(T::shift(1, 4))};
}

AmbiguityReport ambiguity_check(GeneratorNet& g_a, GeneratorNet& g_b, SegmentorNet& s_a, SegmentorNet& s_b,
                                const BijectiveTransform& t, const Dataset& a, const Dataset& b) {
  if (a.size() == 0 || a.size() != b.size()) {
    throw ConfigError("ambiguity_check: needs equally many nonempty A and B volumes");
  }
  const BijectiveTransform inv = t.inverse();
  AmbiguityReport r;
  for (std::size_t i = 0; i < a.size(); ++i) {
    Tape tape;
    Var x_a = tape.constant(a.samples[i].volume.to_tensor());
    Var x_b = tape.constant(b.samples[i].volume.to_tensor());
    const auto& y_a = a.samples[i].label.data;
    const auto& y_b = b.samples[i].label.data;
    const Translator ga = bind_translator(g_a, false), gb = bind_translator(g_b, false);
    const Segmenter sa = bind_segmenter(s_a, false), sb = bind_segmenter(s_b, false);

    Var fake_b = gb(tape, x_a);
    Var fake_a = ga(tape, x_b);
    r.cycle_original += (add(l1_loss(ga(tape, fake_b), x_a), l1_loss(gb(tape, fake_a), x_b))).value().item();
    r.shape_original += add(softmax_cross_entropy(sa(tape, fake_a), y_b), softmax_cross_entropy(sb(tape, fake_b), y_a))
                            .value()
                            .item();

    // A -> B -> A with (G_A o T^-1, T o G_B); B -> A -> B with (T o G_A, G_B o T^-1).
    Var wrapped_b = t.apply(gb(tape, x_a));
    Var wrapped_a = t.apply(ga(tape, x_b));
    Var rec_a = ga(tape, inv.apply(wrapped_b));
    Var rec_b = gb(tape, inv.apply(wrapped_a));
    r.cycle_wrapped += add(l1_loss(rec_a, x_a), l1_loss(rec_b, x_b)).value().item();
    r.shape_wrapped +=
        add(softmax_cross_entropy(sa(tape, wrapped_a), y_b), softmax_cross_entropy(sb(tape, wrapped_b), y_a))
            .value()
            .item();
  }
  const double n = static_cast<double>(a.size());
  r.cycle_original /= n;
  r.cycle_wrapped /= n;
  r.shape_original /= n;
  r.shape_wrapped /= n;
  return r;
}

}  // namespace voxelcycle
