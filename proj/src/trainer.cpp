#include "voxelcycle/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "voxelcycle/errors.hpp"
#include "voxelcycle/ops.hpp"

namespace voxelcycle {
namespace {

// Seed streams. Each consumer mixes its tag with the run seed.
constexpr std::uint64_t kTagInit = 0x1001;
constexpr std::uint64_t kTagSegOrder = 0x2001;
constexpr std::uint64_t kTagGanOrder = 0x2002;
constexpr std::uint64_t kTagJointOrder = 0x2003;
constexpr std::uint64_t kTagPoolA = 0x3001;
constexpr std::uint64_t kTagPoolB = 0x3002;

std::uint64_t stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return mix_seed(mix_seed(seed, tag), index);
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  std::shuffle(v.begin(), v.end(), rng);
  return v;
}

// `length` indices over [0, n): whole shuffled passes, truncated.
std::vector<std::size_t> cycled(std::size_t n, std::size_t length, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  out.reserve(length);
  while (out.size() < length) {
    for (auto i : shuffled(n, rng)) {
      if (out.size() == length) break;
      out.push_back(i);
    }
  }
  return out;
}

std::vector<std::size_t> slice(const std::vector<std::size_t>& v, std::pair<std::size_t, std::size_t> r) {
  return {v.begin() + static_cast<std::ptrdiff_t>(r.first), v.begin() + static_cast<std::ptrdiff_t>(r.second)};
}

void require_nonempty(const Dataset& d, const char* what) {
  if (d.size() == 0) throw ConfigError(std::string(what) + ": dataset is empty");
}

double discriminator_step(DiscriminatorNet& net, AdamState& opt, const Tensor& real, const Tensor& fake, double lr,
                          const AdamConfig& adam) {
  Tape tape;
  net.zero_grad();
  Var on_real = net.forward(tape, tape.constant(real), true);
  Var on_fake = net.forward(tape, tape.constant(fake), true);
  Var loss = gan_loss_discriminator(on_real, on_fake);
  tape.backward(loss);
  adam_step(net.parameters(), opt, lr, adam);
  return loss.value().item();
}

Tensor tensor_scalar(double v) { return Tensor::scalar(v); }

void put_adam(Checkpoint& ck, const std::string& prefix, const AdamState& s) {
  ck.add(prefix + "step", tensor_scalar(static_cast<double>(s.step)));
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    ck.add(prefix + "m." + std::to_string(i), s.m[i]);
    ck.add(prefix + "v." + std::to_string(i), s.v[i]);
  }
}

AdamState get_adam(const Checkpoint& ck, const std::string& prefix, const Network& net) {
  AdamState s;
  s.step = static_cast<std::uint64_t>(ck.get(prefix + "step").item());
  if (s.step == 0) return s;
  const auto& params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& m = ck.get(prefix + "m." + std::to_string(i));
    const Tensor& v = ck.get(prefix + "v." + std::to_string(i));
    if (m.dims() != params[i].value.dims() || v.dims() != params[i].value.dims()) {
      throw ShapeError("checkpoint optimizer state '" + prefix + "' does not match network");
    }
    s.m.push_back(m);
    s.v.push_back(v);
  }
  return s;
}

void put_pool(Checkpoint& ck, const std::string& prefix, const ReplayBuffer& pool) {
  ck.add(prefix + "size", tensor_scalar(static_cast<double>(pool.size())));
  for (std::size_t i = 0; i < pool.size(); ++i) ck.add(prefix + std::to_string(i), pool.stored()[i]);
}

void get_pool(const Checkpoint& ck, const std::string& prefix, ReplayBuffer& pool) {
  const auto n = static_cast<std::size_t>(ck.get(prefix + "size").item());
  std::vector<Tensor> stored;
  for (std::size_t i = 0; i < n; ++i) stored.push_back(ck.get(prefix + std::to_string(i)));
  pool.restore(std::move(stored));
}

Tensor batch_slice(const Tensor& t, std::size_t n) {
  Dims d = t.dims();
  const std::size_t per = t.numel() / d[0];
  d[0] = 1;
  return Tensor(d, std::vector<double>(t.data().begin() + static_cast<std::ptrdiff_t>(n * per),
                                       t.data().begin() + static_cast<std::ptrdiff_t>((n + 1) * per)));
}

Tensor concat_batch(const std::vector<const Tensor*>& parts) {
  Dims d = parts.front()->dims();
  std::size_t n = 0;
  std::vector<double> data;
  for (const Tensor* t : parts) {
    n += t->dim(0);
    data.insert(data.end(), t->data().begin(), t->data().end());
  }
  d[0] = n;
  return Tensor(d, std::move(data));
}

}  // namespace

// --- config -----------------------------------------------------------------

void TrainConfig::validate() const {
  weights().validate();
  if (!(lr_seg > 0.0) || !(lr_gan > 0.0)) throw ConfigError("learning rates must be positive");
  for (double b : {seg_beta1, seg_beta2, gan_beta1, gan_beta2}) {
    if (!(b >= 0.0 && b < 1.0)) throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (patience == 0) throw ConfigError("patience must be at least 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in [0, 1)");
  }
  if (classes < 2 || classes > 255) throw ConfigError("classes must lie in [2, 255]");
  if (gen_filters == 0 || disc_filters == 0 || seg_filters == 0) throw ConfigError("filter counts must be positive");
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv;
  auto num = [&](const char* k, double v) { kv.set(k, format_double(v)); };
  auto cnt = [&](const char* k, std::uint64_t v) { kv.set(k, std::to_string(v)); };
  num("lambda", lambda);
  num("gamma", gamma);
  num("lr_seg", lr_seg);
  num("lr_gan", lr_gan);
  num("seg_beta1", seg_beta1);
  num("seg_beta2", seg_beta2);
  num("gan_beta1", gan_beta1);
  num("gan_beta2", gan_beta2);
  cnt("epochs_pretrain_seg", epochs_pretrain_seg);
  cnt("epochs_pretrain_gan", epochs_pretrain_gan);
  cnt("epochs_joint", epochs_joint);
  cnt("epochs_decay", epochs_decay);
  cnt("batch_size", batch_size);
  cnt("patience", patience);
  kv.set("early_stop", early_stop ? "true" : "false");
  num("validation_fraction", validation_fraction);
  cnt("buffer_capacity", buffer_capacity);
  cnt("classes", classes);
  cnt("gen_filters", gen_filters);
  cnt("disc_filters", disc_filters);
  cnt("seg_filters", seg_filters);
  cnt("seed", seed);
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  TrainConfig c;
  auto count = [&](const char* k, std::size_t fallback) -> std::size_t {
    const long long v = kv.get_int(k, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(std::string("config key '") + k + "' must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.lambda = kv.get_double("lambda", c.lambda);
  c.gamma = kv.get_double("gamma", c.gamma);
  c.lr_seg = kv.get_double("lr_seg", c.lr_seg);
  c.lr_gan = kv.get_double("lr_gan", c.lr_gan);
  c.seg_beta1 = kv.get_double("seg_beta1", c.seg_beta1);
  c.seg_beta2 = kv.get_double("seg_beta2", c.seg_beta2);
  c.gan_beta1 = kv.get_double("gan_beta1", c.gan_beta1);
  c.gan_beta2 = kv.get_double("gan_beta2", c.gan_beta2);
  c.epochs_pretrain_seg = count("epochs_pretrain_seg", c.epochs_pretrain_seg);
  c.epochs_pretrain_gan = count("epochs_pretrain_gan", c.epochs_pretrain_gan);
  c.epochs_joint = count("epochs_joint", c.epochs_joint);
  c.epochs_decay = count("epochs_decay", c.epochs_decay);
  c.batch_size = count("batch_size", c.batch_size);
  c.patience = count("patience", c.patience);
  const std::string es = kv.get_string("early_stop", c.early_stop ? "true" : "false");
  if (es != "true" && es != "false") throw ConfigError("config key 'early_stop' must be true or false");
  c.early_stop = es == "true";
  c.validation_fraction = kv.get_double("validation_fraction", c.validation_fraction);
  c.buffer_capacity = count("buffer_capacity", c.buffer_capacity);
  c.classes = count("classes", c.classes);
  c.gen_filters = count("gen_filters", c.gen_filters);
  c.disc_filters = count("disc_filters", c.disc_filters);
  c.seg_filters = count("seg_filters", c.seg_filters);
  c.seed = static_cast<std::uint64_t>(count("seed", c.seed));
  if (auto unused = kv.unused_keys(); !unused.empty()) {
    throw ConfigError("unknown training config key '" + unused.front() + "'");
  }
  c.validate();
  return c;
}

std::string TrainConfig::serialize() const { return to_key_values().to_string(); }

TrainConfig TrainConfig::parse(const std::string& text) { return from_key_values(KeyValues::parse(text)); }

std::uint64_t TrainConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

LearningRates lr_schedule(std::size_t epoch, const TrainConfig& config) {
  double factor = 1.0;
  if (epoch >= config.epochs_joint) {
    const std::size_t into = epoch - config.epochs_joint;
    factor = into >= config.epochs_decay
                 ? 0.0
                 : 1.0 - static_cast<double>(into) / static_cast<double>(config.epochs_decay);
  }
  return {config.lr_gan * factor, config.lr_seg * factor};
}

// --- replay buffer, early stopping, sampling ----------------------------------

Tensor ReplayBuffer::query(const Tensor& fakes, std::uint64_t seed) {
  require_rank5(fakes, "replay buffer");
  if (capacity_ == 0) return fakes;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<Tensor> out;
  for (std::size_t n = 0; n < fakes.dim(0); ++n) {
    Tensor one = batch_slice(fakes, n);
    if (stored_.size() < capacity_) {
      stored_.push_back(one);
      out.push_back(std::move(one));
    } else if (coin(rng) < 0.5) {
      out.push_back(std::move(one));
    } else {
      const std::size_t k = std::uniform_int_distribution<std::size_t>(0, capacity_ - 1)(rng);
      out.push_back(stored_[k]);
      stored_[k] = std::move(one);
    }
  }
  std::vector<const Tensor*> parts;
  for (const auto& t : out) parts.push_back(&t);
  return concat_batch(parts);
}

void ReplayBuffer::restore(std::vector<Tensor> stored) {
  if (stored.size() > capacity_) throw ConfigError("replay buffer restore exceeds capacity");
  stored_ = std::move(stored);
}

EarlyStopMonitor::EarlyStopMonitor(std::size_t patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience == 0) throw ConfigError("early stop patience must be at least 1");
}

bool EarlyStopMonitor::update(double loss) {
  if (loss < best_ - 1e-6) {
    best_ = loss;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_;
}

std::optional<std::size_t> early_stop_monitor(const std::vector<double>& losses, std::size_t patience) {
  EarlyStopMonitor m(patience);
  for (std::size_t e = 0; e < losses.size(); ++e) {
    if (m.update(losses[e])) return e + 1;
  }
  return std::nullopt;
}

CyclingSampler::CyclingSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed), pos_(n) {
  if (n == 0) throw ConfigError("sampler over an empty dataset");
}

std::size_t CyclingSampler::next() {
  if (pos_ == n_) {
    order_ = shuffled(n_, rng_);
    pos_ = 0;
  }
  return order_[pos_++];
}

std::vector<std::size_t> CyclingSampler::take(std::size_t count) {
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = next();
  return out;
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ConfigError("empty batch");
  std::vector<const Volume*> vols;
  std::vector<const LabelVolume*> labels;
  for (auto i : indices) {
    if (i >= data.size()) throw ConfigError("batch index out of range");
    vols.push_back(&data.samples[i].volume);
    labels.push_back(&data.samples[i].label);
  }
  return {stack_volumes(vols), stack_labels(labels)};
}

EpochOrder epoch_order(std::size_t size_a, std::size_t size_b, std::uint64_t seed) {
  if (size_a == 0 || size_b == 0) throw ConfigError("epoch over an empty dataset");
  std::mt19937_64 rng(seed);
  const std::size_t n = std::max(size_a, size_b);
  EpochOrder o;
  o.a = cycled(size_a, n, rng);
  o.b = cycled(size_b, n, rng);
  return o;
}

std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t lo = 0; lo < n; lo += batch_size) out.emplace_back(lo, std::min(n, lo + batch_size));
  return out;
}

SegmentorBatch assemble_segmentor_batch(const Batch& real, const Tensor& synthetic,
                                        const std::vector<std::uint8_t>& synthetic_labels,
                                        const Tensor& reconstructed) {
  const std::size_t n = real.size();
  if (synthetic.dims() != real.volumes.dims() || reconstructed.dims() != real.volumes.dims() ||
      synthetic_labels.size() != real.labels.size()) {
    throw ShapeError("segmentor batch: real, synthetic and reconstructed parts differ in shape");
  }
  SegmentorBatch out;
  out.batch.volumes = concat_batch({&real.volumes, &synthetic, &reconstructed});
  out.batch.labels = real.labels;
  out.batch.labels.insert(out.batch.labels.end(), synthetic_labels.begin(), synthetic_labels.end());
  out.batch.labels.insert(out.batch.labels.end(), real.labels.begin(), real.labels.end());
  out.kinds.assign(n, SampleKind::kReal);
  out.kinds.insert(out.kinds.end(), n, SampleKind::kSynthetic);
  out.kinds.insert(out.kinds.end(), n, SampleKind::kReconstructed);
  return out;
}

// --- state ----------------------------------------------------------------

TrainState::TrainState(const TrainConfig& c)
    : g_a(c.gen_filters),
      g_b(c.gen_filters),
      d_a(c.disc_filters),
      d_b(c.disc_filters),
      s_a(c.classes, c.seg_filters),
      s_b(c.classes, c.seg_filters),
      pool_a(c.buffer_capacity),
      pool_b(c.buffer_capacity),
      best_validation(std::numeric_limits<double>::infinity()) {
  c.validate();
  Network* nets[] = {&g_a, &g_b, &d_a, &d_b, &s_a, &s_b};
  for (std::uint64_t i = 0; i < 6; ++i) nets[i]->init_parameters(stream(c.seed, kTagInit, i));
}

TranslationModels TrainState::models(bool generators_trainable) {
  return {bind_translator(g_a, generators_trainable), bind_translator(g_b, generators_trainable),
          bind_critic(d_a, false),
          bind_critic(d_b, false),
          bind_segmenter(s_a, false),
          bind_segmenter(s_b, false)};
}

Checkpoint TrainState::to_checkpoint(std::uint64_t config_hash) const {
  Checkpoint ck;
  ck.step = step;
  ck.config_hash = config_hash;
  const std::pair<const Network*, const AdamState*> parts[] = {{&g_a, &opt_g_a}, {&g_b, &opt_g_b}, {&d_a, &opt_d_a},
                                                               {&d_b, &opt_d_b}, {&s_a, &opt_s_a}, {&s_b, &opt_s_b}};
  const char* names[] = {"g_a", "g_b", "d_a", "d_b", "s_a", "s_b"};
  for (int i = 0; i < 6; ++i) {
    ck.add_network(*parts[i].first, std::string(names[i]) + ".");
    put_adam(ck, std::string("adam.") + names[i] + ".", *parts[i].second);
  }
  put_pool(ck, "pool_a.", pool_a);
  put_pool(ck, "pool_b.", pool_b);
  ck.add("state.epoch", tensor_scalar(static_cast<double>(epoch)));
  ck.add("state.best_validation",
         tensor_scalar(std::isinf(best_validation) ? std::numeric_limits<double>::max() : best_validation));
  ck.add("state.stale_epochs", tensor_scalar(static_cast<double>(stale_epochs)));
  return ck;
}

void TrainState::restore(const Checkpoint& ck) {
  std::pair<Network*, AdamState*> parts[] = {{&g_a, &opt_g_a}, {&g_b, &opt_g_b}, {&d_a, &opt_d_a},
                                             {&d_b, &opt_d_b}, {&s_a, &opt_s_a}, {&s_b, &opt_s_b}};
  const char* names[] = {"g_a", "g_b", "d_a", "d_b", "s_a", "s_b"};
  for (int i = 0; i < 6; ++i) {
    parts[i].first->load_state(ck.subset(std::string(names[i]) + "."));
    *parts[i].second = get_adam(ck, std::string("adam.") + names[i] + ".", *parts[i].first);
  }
  get_pool(ck, "pool_a.", pool_a);
  get_pool(ck, "pool_b.", pool_b);
  step = ck.step;
  epoch = static_cast<std::uint64_t>(ck.get("state.epoch").item());
  const double best = ck.get("state.best_validation").item();
  best_validation = best == std::numeric_limits<double>::max() ? std::numeric_limits<double>::infinity() : best;
  stale_epochs = static_cast<std::size_t>(ck.get("state.stale_epochs").item());
}

// --- steps -------------------------------------------------------------------

LossReport gan_step(TrainState& s, const Batch& a, const Batch& b, const TrainConfig& config, double lr) {
  TrainConfig no_shape = config;
  no_shape.gamma = 0.0;
  return joint_step(s, a, b, no_shape, {lr, 0.0});
}

GeneratorPhase generator_phase(TrainState& s, const Batch& a, const Batch& b, const TrainConfig& config,
                               const LearningRates& lr) {
  Tape tape;
  Var x_a = tape.constant(a.volumes);
  Var x_b = tape.constant(b.volumes);
  s.g_a.zero_grad();
  s.g_b.zero_grad();
  GeneratorObjective obj = full_objective(tape, s.models(true), x_a, a.labels, x_b, b.labels, config.weights());
  tape.backward(obj.total);
  adam_step(s.g_a.parameters(), s.opt_g_a, lr.gan, config.gan_adam());
  adam_step(s.g_b.parameters(), s.opt_g_b, lr.gan, config.gan_adam());
  return {obj.report, obj.fake_a.value(), obj.fake_b.value(), obj.rec_a.value(), obj.rec_b.value()};
}

LossReport critic_segmentor_phase(TrainState& s, const Batch& a, const Batch& b, const GeneratorPhase& g,
                                  const TrainConfig& config, const LearningRates& lr) {
  LossReport r = g.report;
  const Tensor pooled_a = s.pool_a.query(g.fake_a, stream(config.seed, kTagPoolA, s.step));
  const Tensor pooled_b = s.pool_b.query(g.fake_b, stream(config.seed, kTagPoolB, s.step));
  r.gan_d_A = discriminator_step(s.d_a, s.opt_d_a, a.volumes, pooled_a, lr.gan, config.gan_adam());
  r.gan_d_B = discriminator_step(s.d_b, s.opt_d_b, b.volumes, pooled_b, lr.gan, config.gan_adam());
  if (lr.seg > 0.0) {
    const SegmentorBatch sa = assemble_segmentor_batch(a, g.fake_a, b.labels, g.rec_a);
    const SegmentorBatch sb = assemble_segmentor_batch(b, g.fake_b, a.labels, g.rec_b);
    r.seg_A = segmentor_step(s.s_a, s.opt_s_a, sa.batch, lr.seg, config.seg_adam());
    r.seg_B = segmentor_step(s.s_b, s.opt_s_b, sb.batch, lr.seg, config.seg_adam());
  }
  return r;
}

LossReport joint_step(TrainState& s, const Batch& a, const Batch& b, const TrainConfig& config,
                      const LearningRates& lr) {
  const GeneratorPhase g = generator_phase(s, a, b, config, lr);
  const LossReport r = critic_segmentor_phase(s, a, b, g, config, lr);
  ++s.step;
  return r;
}

double segmentor_step(SegmentorNet& net, AdamState& opt, const Batch& batch, double lr, const AdamConfig& adam) {
  Tape tape;
  net.zero_grad();
  Var loss = segmentation_loss(tape, bind_segmenter(net, true), tape.constant(batch.volumes), batch.labels);
  tape.backward(loss);
  adam_step(net.parameters(), opt, lr, adam);
  return loss.value().item();
}

std::pair<std::size_t, std::size_t> ada_split(std::size_t batch_size) {
  return {(batch_size + 1) / 2, batch_size / 2};
}

AdaBatch assemble_ada_batch(const Dataset& real, CyclingSampler& real_sampler, const Dataset& synthetic,
                            CyclingSampler& synthetic_sampler, std::size_t batch_size) {
  const auto [nr, ns] = ada_split(batch_size);
  AdaBatch out;
  out.real_count = nr;
  out.synthetic_count = ns;
  Batch r = make_batch(real, real_sampler.take(nr));
  if (ns == 0) {
    out.batch = std::move(r);
    return out;
  }
  Batch s = make_batch(synthetic, synthetic_sampler.take(ns));
  out.batch.volumes = concat_batch({&r.volumes, &s.volumes});
  out.batch.labels = std::move(r.labels);
  out.batch.labels.insert(out.batch.labels.end(), s.labels.begin(), s.labels.end());
  return out;
}

double ada_step(SegmentorNet& net, AdamState& opt, const AdaBatch& mixed, double lr, const AdamConfig& adam) {
  return segmentor_step(net, opt, mixed.batch, lr, adam);
}

Dataset make_synthetic_pool(GeneratorNet& g_a, GeneratorNet& g_b, const Dataset& a, const Dataset& b,
                            Modality target) {
  require_nonempty(a, "synthetic pool");
  require_nonempty(b, "synthetic pool");
  GeneratorNet& into = target == Modality::kA ? g_a : g_b;   // other -> target
  GeneratorNet& out_of = target == Modality::kA ? g_b : g_a;  // target -> other
  const Dataset& own = target == Modality::kA ? a : b;
  const Dataset& other = target == Modality::kA ? b : a;
  Dataset pool;
  pool.modality = target;
  for (const Sample& src : other.samples) {
    Sample s = src;
    s.volume = Volume::from_tensor(into.forward(src.volume.to_tensor()));
    pool.samples.push_back(std::move(s));
  }
  for (const Sample& src : own.samples) {
    Sample s = src;
    s.volume = Volume::from_tensor(into.forward(out_of.forward(src.volume.to_tensor())));
    pool.samples.push_back(std::move(s));
  }
  return pool;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must lie in [0, 1)");
  const std::size_t n = data.size();
  std::size_t k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (fraction > 0.0 && n > 1) k = std::clamp<std::size_t>(k, 1, n - 1);
  if (n <= 1) k = 0;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order = shuffled(n, rng);
  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < k; ++i) is_val[order[i]] = true;
  Dataset train, val;
  train.modality = val.modality = data.modality;
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? val : train).samples.push_back(data.samples[i]);
  return {std::move(train), std::move(val)};
}

double evaluate_segmentation_loss(SegmentorNet& net, const Dataset& data) {
  require_nonempty(data, "evaluate_segmentation_loss");
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tape tape;
    Batch b = make_batch(data, {i});
    total += segmentation_loss(tape, bind_segmenter(net, false), tape.constant(b.volumes), b.labels).value().item();
  }
  return total / static_cast<double>(data.size());
}

// --- phase drivers ---------------------------------------------------------------

std::vector<double> pretrain_segmentors(TrainState& s, const Dataset& a, const Dataset& b, const TrainConfig& config,
                                        const TrainHooks& hooks) {
  require_nonempty(a, "pretrain_segmentors");
  require_nonempty(b, "pretrain_segmentors");
  std::vector<double> epoch_loss;
  for (; s.epoch < config.epochs_pretrain_seg;) {
    const EpochOrder order = epoch_order(a.size(), b.size(), stream(config.seed, kTagSegOrder, s.epoch));
    double sum = 0.0;
    const auto ranges = batch_ranges(order.a.size(), config.batch_size);
    for (const auto& r : ranges) {
      LossReport rep;
      rep.seg_A = segmentor_step(s.s_a, s.opt_s_a, make_batch(a, slice(order.a, r)), config.lr_seg, config.seg_adam());
      rep.seg_B = segmentor_step(s.s_b, s.opt_s_b, make_batch(b, slice(order.b, r)), config.lr_seg, config.seg_adam());
      rep.total = rep.seg_A + rep.seg_B;
      sum += rep.total;
      if (hooks.on_step) hooks.on_step(s.step, rep);
      ++s.step;
    }
    epoch_loss.push_back(sum / static_cast<double>(ranges.size()));
    ++s.epoch;
    if (hooks.on_epoch) hooks.on_epoch(s);
  }
  return epoch_loss;
}

std::vector<double> pretrain_segmentor(SegmentorNet& net, AdamState& opt, const Dataset& a, const TrainConfig& config,
                                       std::size_t epoch_samples, std::uint64_t seed_tag, const StepLogger& log) {
  require_nonempty(a, "pretrain_segmentor");
  if (epoch_samples == 0) epoch_samples = a.size();
  std::vector<double> epoch_loss;
  std::uint64_t step = 0;
  for (std::size_t e = 0; e < config.epochs_pretrain_seg; ++e) {
    std::mt19937_64 rng(stream(config.seed, mix_seed(kTagSegOrder, seed_tag), e));
    const std::vector<std::size_t> order = cycled(a.size(), epoch_samples, rng);
    double sum = 0.0;
    const auto ranges = batch_ranges(order.size(), config.batch_size);
    for (const auto& r : ranges) {
      LossReport rep;
      rep.seg_A = segmentor_step(net, opt, make_batch(a, slice(order, r)), config.lr_seg, config.seg_adam());
      rep.total = rep.seg_A;
      sum += rep.total;
      if (log) log(step, rep);
      ++step;
    }
    epoch_loss.push_back(sum / static_cast<double>(ranges.size()));
  }
  return epoch_loss;
}

std::vector<double> pretrain_generators(TrainState& s, const Dataset& a, const Dataset& b, const TrainConfig& config,
                                        const TrainHooks& hooks) {
  require_nonempty(a, "pretrain_generators");
  require_nonempty(b, "pretrain_generators");
  std::vector<double> epoch_loss;
  for (; s.epoch < config.epochs_pretrain_gan;) {
    const EpochOrder order = epoch_order(a.size(), b.size(), stream(config.seed, kTagGanOrder, s.epoch));
    double sum = 0.0;
    const auto ranges = batch_ranges(order.a.size(), config.batch_size);
    for (const auto& r : ranges) {
      const LossReport rep = gan_step(s, make_batch(a, slice(order.a, r)), make_batch(b, slice(order.b, r)), config,
                                      config.lr_gan);
      sum += rep.cycle;
      if (hooks.on_step) hooks.on_step(s.step - 1, rep);
    }
    epoch_loss.push_back(sum / static_cast<double>(ranges.size()));
    ++s.epoch;
    if (hooks.on_epoch) hooks.on_epoch(s);
  }
  return epoch_loss;
}

std::vector<double> train_joint(TrainState& s, const JointData& data, const TrainConfig& config,
                                const TrainHooks& hooks) {
  require_nonempty(data.a, "train_joint");
  require_nonempty(data.b, "train_joint");
  const bool monitor = config.early_stop && data.a_val.size() > 0 && data.b_val.size() > 0;
  EarlyStopMonitor stop(config.patience);
  stop.restore(s.best_validation, s.stale_epochs);
  std::vector<double> epoch_loss;
  const std::size_t epochs = config.epochs_joint + config.epochs_decay;
  for (; s.epoch < epochs;) {
    const LearningRates lr = lr_schedule(s.epoch, config);
    const EpochOrder order = epoch_order(data.a.size(), data.b.size(), stream(config.seed, kTagJointOrder, s.epoch));
    double sum = 0.0;
    const auto ranges = batch_ranges(order.a.size(), config.batch_size);
    for (const auto& r : ranges) {
      const LossReport rep =
          joint_step(s, make_batch(data.a, slice(order.a, r)), make_batch(data.b, slice(order.b, r)), config, lr);
      sum += rep.seg_A + rep.seg_B;
      if (hooks.on_step) hooks.on_step(s.step - 1, rep);
    }
    epoch_loss.push_back(sum / static_cast<double>(ranges.size()));
    ++s.epoch;
    bool halt = false;
    if (monitor) {
      const double v = evaluate_segmentation_loss(s.s_a, data.a_val) + evaluate_segmentation_loss(s.s_b, data.b_val);
      halt = stop.update(v);
      s.best_validation = stop.best();
      s.stale_epochs = stop.stale_epochs();
    }
    if (hooks.on_epoch) hooks.on_epoch(s);
    if (halt) break;
  }
  return epoch_loss;
}

std::vector<double> train_ada(SegmentorNet& net, AdamState& opt, const Dataset& real, const Dataset& synthetic,
                              const TrainConfig& config, std::size_t epoch_samples, const StepLogger& log) {
  require_nonempty(real, "train_ada");
  require_nonempty(synthetic, "train_ada");
  if (epoch_samples == 0) epoch_samples = std::max(real.size(), synthetic.size());
  constexpr std::uint64_t kTagAda = 0x4001;
  CyclingSampler real_sampler(real.size(), stream(config.seed, kTagAda, 0));
  CyclingSampler synthetic_sampler(synthetic.size(), stream(config.seed, kTagAda, 1));
  std::vector<double> epoch_loss;
  std::uint64_t step = 0;
  const std::size_t epochs = config.epochs_joint + config.epochs_decay;
  for (std::size_t e = 0; e < epochs; ++e) {
    const double lr = lr_schedule(e, config).seg;
    double sum = 0.0;
    const auto ranges = batch_ranges(epoch_samples, config.batch_size);
    for (const auto& r : ranges) {
      const AdaBatch mixed = assemble_ada_batch(real, real_sampler, synthetic, synthetic_sampler, r.second - r.first);
      LossReport rep;
      rep.seg_A = ada_step(net, opt, mixed, lr, config.seg_adam());
      rep.total = rep.seg_A;
      sum += rep.total;
      if (log) log(step, rep);
      ++step;
    }
    epoch_loss.push_back(sum / static_cast<double>(ranges.size()));
  }
  return epoch_loss;
}

}  // namespace voxelcycle
