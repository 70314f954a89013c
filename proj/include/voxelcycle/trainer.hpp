#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "voxelcycle/adam.hpp"
#include "voxelcycle/checkpoint.hpp"
#include "voxelcycle/keyvalue.hpp"
#include "voxelcycle/losses.hpp"
#include "voxelcycle/networks.hpp"
#include "voxelcycle/phantom.hpp"

namespace voxelcycle {

struct TrainConfig {
  double lambda = 10.0;
  double gamma = 1.0;
  double lr_seg = 2e-4;
  double lr_gan = 2e-4;
  double seg_beta1 = 0.9;
  double seg_beta2 = 0.999;
  double gan_beta1 = 0.5;
  double gan_beta2 = 0.999;
  std::size_t epochs_pretrain_seg = 50;
  std::size_t epochs_pretrain_gan = 30;
  std::size_t epochs_joint = 25;
  std::size_t epochs_decay = 25;
  std::size_t batch_size = 2;
  std::size_t patience = 5;
  bool early_stop = true;
  double validation_fraction = 0.2;
  std::size_t buffer_capacity = 50;
  std::size_t classes = 4;
  std::size_t gen_filters = 16;
  std::size_t disc_filters = 16;
  std::size_t seg_filters = 16;
  std::uint64_t seed = 1;

  void validate() const;
  LossWeights weights() const { return {lambda, gamma}; }
  AdamConfig seg_adam() const { return {seg_beta1, seg_beta2, 1e-8}; }
  AdamConfig gan_adam() const { return {gan_beta1, gan_beta2, 1e-8}; }

  KeyValues to_key_values() const;
  // Unknown keys raise ConfigError.
  static TrainConfig from_key_values(const KeyValues& kv);
  std::string serialize() const;
  static TrainConfig parse(const std::string& text);
  // FNV-1a of serialize(); stored in checkpoints.
  std::uint64_t hash() const;
};

struct LearningRates {
  double gan = 0.0;
  double seg = 0.0;
};

// Constant for epochs [0, epochs_joint), then linear to exactly 0 at
// epoch epochs_joint + epochs_decay (and beyond).
LearningRates lr_schedule(std::size_t epoch, const TrainConfig& config);

// Image pool for discriminator updates. Until full, every incoming fake is
// stored and returned. Once full, each fake is returned as-is with
// probability 0.5; otherwise a random stored fake is returned and replaced.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 50) : capacity_(capacity) {}

  // fakes: N x C x D x H x W. Randomness comes only from `seed`.
  Tensor query(const Tensor& fakes, std::uint64_t seed);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return stored_.size(); }
  const std::vector<Tensor>& stored() const { return stored_; }
  void restore(std::vector<Tensor> stored);

 private:
  std::size_t capacity_;
  std::vector<Tensor> stored_;  // each 1 x C x D x H x W
};

// Patience-based stop rule: improvement means dropping below the best loss by
// more than 1e-6.
class EarlyStopMonitor {
 public:
  explicit EarlyStopMonitor(std::size_t patience);

  // Returns true when training should stop after this epoch.
  bool update(double validation_loss);

  double best() const { return best_; }
  std::size_t stale_epochs() const { return stale_; }
  void restore(double best, std::size_t stale) { best_ = best, stale_ = stale; }

 private:
  std::size_t patience_;
  double best_;
  std::size_t stale_ = 0;
};

// 1-based epoch at which the monitor first asks to stop, if any.
std::optional<std::size_t> early_stop_monitor(const std::vector<double>& validation_losses, std::size_t patience);

// Stacked volumes and labels for one optimizer step.
struct Batch {
  Tensor volumes;                    // N x 1 x D x H x W
  std::vector<std::uint8_t> labels;  // N * D * H * W
  std::size_t size() const { return volumes.dim(0); }
};

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices);

// Sample orders for one epoch over two datasets. The larger dataset is
// visited once in shuffled order; the smaller one cycles, reshuffling on each
// pass. Both sequences have length max(size_a, size_b).
struct EpochOrder {
  std::vector<std::size_t> a, b;
};
EpochOrder epoch_order(std::size_t size_a, std::size_t size_b, std::uint64_t seed);

// Consecutive chunks of `batch_size` positions; the last may be short.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size);

enum class SampleKind : std::uint8_t { kReal, kSynthetic, kReconstructed };

// Segmentor input for the online phase: per source sample one real volume,
// one translated volume and one reconstructed volume.
struct SegmentorBatch {
  Batch batch;
  std::vector<SampleKind> kinds;
};

SegmentorBatch assemble_segmentor_batch(const Batch& real, const Tensor& synthetic,
                                        const std::vector<std::uint8_t>& synthetic_labels, const Tensor& reconstructed);

// Every network and optimizer of a run plus its counters.
struct TrainState {
  explicit TrainState(const TrainConfig& config);

  GeneratorNet g_a, g_b;  // G_A: B -> A, G_B: A -> B
  DiscriminatorNet d_a, d_b;
  SegmentorNet s_a, s_b;
  AdamState opt_g_a, opt_g_b, opt_d_a, opt_d_b, opt_s_a, opt_s_b;
  ReplayBuffer pool_a, pool_b;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  double best_validation = 0.0;
  std::size_t stale_epochs = 0;

  TranslationModels models(bool generators_trainable);

  Checkpoint to_checkpoint(std::uint64_t config_hash) const;
  // Restores everything captured by to_checkpoint; dims must match.
  void restore(const Checkpoint& ckpt);
};

// Receives one row per optimizer step.
using StepLogger = std::function<void(std::uint64_t step, const LossReport&)>;

struct TrainHooks {
  StepLogger on_step;
  std::function<void(const TrainState&)> on_epoch;  // after state.epoch advances
};

// Endless shuffled pass over n indices, reshuffling on every wrap.
class CyclingSampler {
 public:
  CyclingSampler(std::size_t n, std::uint64_t seed);
  std::size_t next();
  std::vector<std::size_t> take(std::size_t count);

 private:
  std::size_t n_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_;
};

// Phase 1 of a joint step: both generators take one Adam step on
// full_objective with D and S bound as constants.
struct GeneratorPhase {
  LossReport report;      // generator terms only
  Tensor fake_a, fake_b;  // G_A(x_B), G_B(x_A), before the update
  Tensor rec_a, rec_b;    // G_A(G_B(x_A)), G_B(G_A(x_B))
};
GeneratorPhase generator_phase(TrainState& state, const Batch& a, const Batch& b, const TrainConfig& config,
                               const LearningRates& lr);

// Phase 2: discriminators on replay-buffered fakes, then segmentors (skipped
// when lr.seg is 0) on real, translated and reconstructed samples. Uses the
// phase-1 tensors, so no gradient can reach the generators.
LossReport critic_segmentor_phase(TrainState& state, const Batch& a, const Batch& b, const GeneratorPhase& g,
                                  const TrainConfig& config, const LearningRates& lr);

// One alternating update: (1) both generators from full_objective with D and
// S frozen; (2) discriminators on replay-buffered fakes and segmentors on
// real, translated and reconstructed samples, all detached.
LossReport joint_step(TrainState& state, const Batch& a, const Batch& b, const TrainConfig& config,
                      const LearningRates& lr);

// Generator/discriminator update without segmentors (gamma forced to 0).
LossReport gan_step(TrainState& state, const Batch& a, const Batch& b, const TrainConfig& config, double lr);

// Supervised step on real data only.
double segmentor_step(SegmentorNet& net, AdamState& opt, const Batch& batch, double lr, const AdamConfig& adam);

// Offline mixing: ceil(batch / 2) real and floor(batch / 2) synthetic.
std::pair<std::size_t, std::size_t> ada_split(std::size_t batch_size);

struct AdaBatch {
  Batch batch;  // real samples first
  std::size_t real_count = 0;
  std::size_t synthetic_count = 0;
};

AdaBatch assemble_ada_batch(const Dataset& real, CyclingSampler& real_sampler, const Dataset& synthetic,
                            CyclingSampler& synthetic_sampler, std::size_t batch_size);

// Fine-tunes `net` on one mixed batch; generators are not involved. Returns
// the batch loss.
double ada_step(SegmentorNet& net, AdamState& opt, const AdaBatch& mixed, double lr, const AdamConfig& adam);

// Synthetic data for segmenting domain `target` generated by frozen
// generators: one-hop translations of the other domain's volumes and
// reconstructions of the target domain's own volumes, with source labels.
Dataset make_synthetic_pool(GeneratorNet& g_a, GeneratorNet& g_b, const Dataset& a, const Dataset& b,
                            Modality target);

// Deterministic split of the first `fraction` of a shuffled index list off
// as validation data (at least one sample when fraction > 0 and n > 1).
std::pair<Dataset, Dataset> split_validation(const Dataset& data, double fraction, std::uint64_t seed);

// Mean cross-entropy of a segmentor over a dataset.
double evaluate_segmentation_loss(SegmentorNet& net, const Dataset& data);

// Phase drivers. Each epoch spans max(|a|, |b|) samples per domain. They run
// from state.epoch to the phase's epoch count, so a restored state resumes
// where it stopped. Returns per-epoch mean training loss (segmentors:
// seg_A + seg_B; generators: cycle).
std::vector<double> pretrain_segmentors(TrainState& state, const Dataset& a, const Dataset& b,
                                        const TrainConfig& config, const TrainHooks& hooks = {});
// Trains only S_A on `a`; an epoch spans `epoch_samples` samples (0: |a|).
std::vector<double> pretrain_segmentor(SegmentorNet& net, AdamState& opt, const Dataset& a, const TrainConfig& config,
                                       std::size_t epoch_samples, std::uint64_t seed_tag,
                                       const StepLogger& log = {});
std::vector<double> pretrain_generators(TrainState& state, const Dataset& a, const Dataset& b,
                                        const TrainConfig& config, const TrainHooks& hooks = {});

struct JointData {
  Dataset a, b;
  Dataset a_val, b_val;  // empty: no early stopping
};

// epochs_joint + epochs_decay epochs of joint_step under lr_schedule, with
// optional early stopping on the summed validation loss of both segmentors.
// Returns per-epoch mean seg_A + seg_B.
std::vector<double> train_joint(TrainState& state, const JointData& data, const TrainConfig& config,
                                const TrainHooks& hooks = {});

// ADA fine-tuning of `net` for epochs_joint + epochs_decay epochs under the
// segmentor learning-rate schedule. An epoch has ceil(epoch_samples / batch)
// steps; real and synthetic samples cycle independently.
std::vector<double> train_ada(SegmentorNet& net, AdamState& opt, const Dataset& real, const Dataset& synthetic,
                              const TrainConfig& config, std::size_t epoch_samples, const StepLogger& log = {});

}  // namespace voxelcycle
