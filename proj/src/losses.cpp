#include "voxelcycle/losses.hpp"

#include <sstream>

#include "voxelcycle/errors.hpp"
#include "voxelcycle/keyvalue.hpp"
#include "voxelcycle/ops.hpp"

namespace voxelcycle {

Translator bind_translator(GeneratorNet& net, bool trainable) {
  return [&net, trainable](Tape& tape, Var x) { return net.forward(tape, x, trainable); };
}

Critic bind_critic(DiscriminatorNet& net, bool trainable) {
  return [&net, trainable](Tape& tape, Var x) { return net.forward(tape, x, trainable); };
}

Segmenter bind_segmenter(SegmentorNet& net, bool trainable) {
  return [&net, trainable](Tape& tape, Var x) { return net.forward(tape, x, trainable); };
}

void LossWeights::validate() const {
  if (!(lambda >= 0.0) || !(gamma >= 0.0)) throw ConfigError("loss weights must be non-negative");
}

std::string LossReport::csv_header() {
  return "step,gan_g_A,gan_g_B,gan_d_A,gan_d_B,cycle,shape,seg_A,seg_B,total";
}

std::string LossReport::csv_row(std::uint64_t step) const {
  std::ostringstream os;
  os << step;
  for (double v : {gan_g_A, gan_g_B, gan_d_A, gan_d_B, cycle, shape, seg_A, seg_B, total}) os << ',' << format_double(v);
  return os.str();
}

Var gan_loss_generator(Var d_out_on_fake) { return mse_loss(d_out_on_fake, 1.0); }

Var gan_loss_discriminator(Var d_out_real, Var d_out_fake) {
  return scale(add(mse_loss(d_out_real, 1.0), mse_loss(d_out_fake, 0.0)), 0.5);
}

Var cycle_loss(Tape& tape, const Translator& g_a, const Translator& g_b, Var x_a, Var x_b) {
  Var rec_a = g_a(tape, g_b(tape, x_a));
  Var rec_b = g_b(tape, g_a(tape, x_b));
  return add(l1_loss(rec_a, x_a), l1_loss(rec_b, x_b));
}

Var shape_loss(Tape& tape, const Segmenter& s_a, const Segmenter& s_b, const Translator& g_a, const Translator& g_b,
               Var x_a, std::span<const std::uint8_t> y_a, Var x_b, std::span<const std::uint8_t> y_b) {
  Var on_fake_a = softmax_cross_entropy(s_a(tape, g_a(tape, x_b)), y_b);
  Var on_fake_b = softmax_cross_entropy(s_b(tape, g_b(tape, x_a)), y_a);
  return add(on_fake_a, on_fake_b);
}

Var segmentation_loss(Tape& tape, const Segmenter& s, Var volumes, std::span<const std::uint8_t> labels) {
  return softmax_cross_entropy(s(tape, volumes), labels);
}

GeneratorObjective full_objective(Tape& tape, const TranslationModels& m, Var x_a, std::span<const std::uint8_t> y_a,
                                  Var x_b, std::span<const std::uint8_t> y_b, const LossWeights& w) {
  w.validate();
  GeneratorObjective o;
  o.fake_b = m.g_b(tape, x_a);
  o.rec_a = m.g_a(tape, o.fake_b);
  o.fake_a = m.g_a(tape, x_b);
  o.rec_b = m.g_b(tape, o.fake_a);

  o.gan_g_a = gan_loss_generator(m.d_a(tape, o.fake_a));
  o.gan_g_b = gan_loss_generator(m.d_b(tape, o.fake_b));
  o.cycle = add(l1_loss(o.rec_a, x_a), l1_loss(o.rec_b, x_b));

  o.total = add(add(o.gan_g_a, o.gan_g_b), scale(o.cycle, w.lambda));
  o.report.gan_g_A = o.gan_g_a.value().item();
  o.report.gan_g_B = o.gan_g_b.value().item();
  o.report.cycle = o.cycle.value().item();
  if (w.gamma > 0.0) {
    Var on_fake_a = softmax_cross_entropy(m.s_a(tape, o.fake_a), y_b);
    Var on_fake_b = softmax_cross_entropy(m.s_b(tape, o.fake_b), y_a);
    o.shape = add(on_fake_a, on_fake_b);
    o.total = add(o.total, scale(o.shape, w.gamma));
    o.report.shape = o.shape.value().item();
  }
  o.report.total = o.total.value().item();
  return o;
}

}  // namespace voxelcycle
