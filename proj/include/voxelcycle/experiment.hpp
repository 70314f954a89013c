#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "voxelcycle/evaluation.hpp"
#include "voxelcycle/phantom.hpp"
#include "voxelcycle/trainer.hpp"

namespace voxelcycle {

enum class Plan { kVaryRealFraction, kVarySyntheticCount, kGapAnalysis, kScAblation };

Plan parse_plan(const std::string& name);  // ConfigError on unknown names
const char* plan_name(Plan p);

// Keys: seeds, fractions, synthetic_counts, synthetic_real_fraction,
// train_volumes, test_volumes, target, plus "phantom.*" and "train.*"
// sections forwarded to PhantomSpec and TrainConfig.
struct ExperimentConfig {
  PhantomSpec phantom;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<double> fractions = {0.14, 0.5, 1.0};
  std::vector<std::size_t> synthetic_counts = {10, 20, 40};
  double synthetic_real_fraction = 0.14;
  std::size_t train_volumes = 40;  // per modality
  std::size_t test_volumes = 20;
  Modality target = Modality::kA;

  void validate() const;
  static ExperimentConfig from_key_values(const KeyValues& kv);
  static ExperimentConfig parse(const std::string& text);
  std::string serialize() const;
};

struct ExperimentRow {
  std::string plan;
  std::string condition;
  double fraction_or_count = 0.0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

struct ExperimentResult {
  std::vector<ExperimentRow> rows;
  // Protocol notes written beside the CSV.
  std::vector<std::pair<std::string, std::string>> metadata;

  std::string to_csv() const;
  std::string metadata_text() const;
};

// Rows a plan will produce, in output order, with value left at 0.
std::vector<ExperimentRow> expand_plan(Plan plan, const ExperimentConfig& config);

// Number of volumes kept for a real-data fraction: round(f * n), at least 1.
std::size_t fraction_count(double fraction, std::size_t n);

// Every trained artifact of one seed, built lazily and cached. Each artifact
// derives its own seed from (run seed, artifact key), so results do not depend
// on the order in which artifacts are requested.
class SeedRun {
 public:
  SeedRun(const ExperimentConfig& config, std::uint64_t seed);
  SeedRun(const SeedRun&) = delete;
  SeedRun& operator=(const SeedRun&) = delete;

  std::uint64_t seed() const { return seed_; }
  const Dataset& train(Modality m) const { return m == Modality::kA ? train_a_ : train_b_; }
  const Dataset& test(Modality m) const { return m == Modality::kA ? test_.a : test_.b; }
  Dataset real_subset(Modality m, double fraction) const;

  // Baseline(R): trained from scratch on real data only.
  SegmentorNet& baseline(Modality m, double fraction);
  // Fresh real-data segmentor used only to compute S-scores.
  SegmentorNet& aux(Modality m);
  // Generators/discriminators pretrained with gamma = 0 on the target
  // subset plus `other_count` volumes of the other domain (0: all);
  // segmentors copied from the matching baselines.
  TrainState& pretrained(double fraction, std::size_t other_count = 0);
  // Ours(R+S): joint training from pretrained().
  TrainState& ours(double fraction, std::size_t other_count = 0);
  // ADA(R+S): target baseline fine-tuned offline on synthetic data from the
  // frozen pretrained generators.
  SegmentorNet& ada(double fraction, std::size_t other_count = 0);
  // Baseline(R+R) and Baseline(R+S) for the gap analysis.
  SegmentorNet& extra_real(double fraction);
  SegmentorNet& extra_synthetic(double fraction);
  // Full-data joint training with the given gamma, from pretrained(1.0).
  TrainState& ablation(double gamma);

  // Mean held-out S-score of translations into `into`.
  double s_score(TrainState& state, Modality into);
  double dice(SegmentorNet& net);  // mean held-out Dice on the target modality

  std::vector<ExperimentRow> run(Plan plan);

 private:
  std::pair<Dataset, Dataset> joint_sets(double fraction, std::size_t other_count) const;
  TrainConfig config_for(const std::string& key) const;
  static std::string key(const std::string& kind, double x, std::size_t n = 0);

  ExperimentConfig config_;
  std::uint64_t seed_;
  Dataset train_a_, train_b_;
  PairedDatasets test_;
  std::map<std::string, std::unique_ptr<SegmentorNet>> segmentors_;
  std::map<std::string, std::unique_ptr<TrainState>> states_;
};

// Runs the plan over every configured seed and merges rows in seed order.
// threads > 1 runs seeds concurrently, each with isolated state.
ExperimentResult run_experiment(Plan plan, const ExperimentConfig& config, std::size_t threads = 1);

}  // namespace voxelcycle
