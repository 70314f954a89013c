#include "voxelcycle/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <thread>

#include "voxelcycle/errors.hpp"

namespace voxelcycle {
namespace {

constexpr std::uint64_t kTrainA = 0xA0;
constexpr std::uint64_t kTrainB = 0xB0;
constexpr std::uint64_t kTest = 0x7E;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Modality other(Modality m) { return m == Modality::kA ? Modality::kB : Modality::kA; }

Dataset first_n(const Dataset& d, std::size_t n) {
  Dataset out;
  out.modality = d.modality;
  out.samples.assign(d.samples.begin(), d.samples.begin() + static_cast<std::ptrdiff_t>(std::min(n, d.size())));
  return out;
}

const char* kBaseline = "Baseline(R)";
const char* kAda = "ADA(R+S)";
const char* kOurs = "Ours(R+S)";
const char* kExtraReal = "Baseline(R+R)";
const char* kExtraSynthetic = "Baseline(R+S)";

}  // namespace

Plan parse_plan(const std::string& name) {
  if (name == "vary-real-fraction") return Plan::kVaryRealFraction;
  if (name == "vary-synthetic-count") return Plan::kVarySyntheticCount;
  if (name == "gap-analysis") return Plan::kGapAnalysis;
  if (name == "sc-ablation") return Plan::kScAblation;
  throw ConfigError("unknown experiment plan '" + name +
                    "' (expected vary-real-fraction, vary-synthetic-count, gap-analysis or sc-ablation)");
}

const char* plan_name(Plan p) {
  switch (p) {
    case Plan::kVaryRealFraction: return "vary-real-fraction";
    case Plan::kVarySyntheticCount: return "vary-synthetic-count";
    case Plan::kGapAnalysis: return "gap-analysis";
    case Plan::kScAblation: return "sc-ablation";
  }
  return "?";
}

// --- config -----------------------------------------------------------------

void ExperimentConfig::validate() const {
  phantom.validate();
  train.validate();
  if (train.classes != phantom.classes) throw ConfigError("train.classes must equal phantom.classes");
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("real-data fractions must lie in (0, 1]");
  }
  if (!(synthetic_real_fraction > 0.0 && synthetic_real_fraction <= 1.0)) {
    throw ConfigError("synthetic_real_fraction must lie in (0, 1]");
  }
  if (train_volumes == 0 || test_volumes == 0) throw ConfigError("train and test volume counts must be positive");
  for (auto n : synthetic_counts) {
    if (n == 0 || n > train_volumes) {
      throw ConfigError("synthetic count " + std::to_string(n) + " exceeds the " + std::to_string(train_volumes) +
                        " available volumes");
    }
  }
}

ExperimentConfig ExperimentConfig::from_key_values(const KeyValues& kv) {
  ExperimentConfig c;
  const KeyValues phantom_kv = kv.section("phantom.");
  c.phantom = PhantomSpec::from_key_values(phantom_kv);
  if (auto unused = phantom_kv.unused_keys(); !unused.empty()) {
    throw ConfigError("unknown experiment config key 'phantom." + unused.front() + "'");
  }
  KeyValues train_kv = kv.section("train.");
  if (!train_kv.has("classes")) train_kv.set("classes", std::to_string(c.phantom.classes));
  c.train = TrainConfig::from_key_values(train_kv);

  auto parse_u64 = [](const std::string& key, const std::string& s) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("config key '" + key + "': '" + s + "' is not a non-negative integer");
    }
    return v;
  };
  if (kv.has("seeds")) {
    c.seeds.clear();
    for (const auto& s : kv.get_strings("seeds", {})) c.seeds.push_back(parse_u64("seeds", s));
  }
  c.fractions = kv.get_doubles("fractions", c.fractions);
  if (kv.has("synthetic_counts")) {
    c.synthetic_counts.clear();
    for (const auto& s : kv.get_strings("synthetic_counts", {})) {
      c.synthetic_counts.push_back(static_cast<std::size_t>(parse_u64("synthetic_counts", s)));
    }
  }
  c.synthetic_real_fraction = kv.get_double("synthetic_real_fraction", c.synthetic_real_fraction);
  c.train_volumes = static_cast<std::size_t>(
      parse_u64("train_volumes", kv.get_string("train_volumes", std::to_string(c.train_volumes))));
  c.test_volumes = static_cast<std::size_t>(
      parse_u64("test_volumes", kv.get_string("test_volumes", std::to_string(c.test_volumes))));
  c.target = parse_modality(kv.get_string("target", "A"));
  if (auto unused = kv.unused_keys(); !unused.empty()) {
    throw ConfigError("unknown experiment config key '" + unused.front() + "'");
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) { return from_key_values(KeyValues::parse(text)); }

std::string ExperimentConfig::serialize() const {
  KeyValues kv;
  auto join = [](const auto& values, auto fmt) {
    std::string s;
    for (const auto& v : values) s += (s.empty() ? "" : ",") + fmt(v);
    return s;
  };
  kv.set("seeds", join(seeds, [](std::uint64_t v) { return std::to_string(v); }));
  kv.set("fractions", join(fractions, [](double v) { return format_double(v); }));
  kv.set("synthetic_counts", join(synthetic_counts, [](std::size_t v) { return std::to_string(v); }));
  kv.set("synthetic_real_fraction", format_double(synthetic_real_fraction));
  kv.set("train_volumes", std::to_string(train_volumes));
  kv.set("test_volumes", std::to_string(test_volumes));
  kv.set("target", modality_name(target));
  const KeyValues phantom_kv = phantom.to_key_values(), train_kv = train.to_key_values();
  for (const auto& [k, v] : phantom_kv.entries()) kv.set("phantom." + k, v);
  for (const auto& [k, v] : train_kv.entries()) kv.set("train." + k, v);
  return kv.to_string();
}

// --- results -------------------------------------------------------------------

std::string ExperimentResult::to_csv() const {
  std::ostringstream os;
  os << "plan,condition,fraction_or_count,seed,metric_name,value\n";
  for (const auto& r : rows) {
    os << r.plan << ',' << r.condition << ',' << format_double(r.fraction_or_count) << ',' << r.seed << ','
       << r.metric << ',' << format_double(r.value) << '\n';
  }
  return os.str();
}

std::string ExperimentResult::metadata_text() const {
  std::string out;
  for (const auto& [k, v] : metadata) out += k + " = " + v + "\n";
  return out;
}

std::size_t fraction_count(double fraction, std::size_t n) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("real-data fraction must lie in (0, 1]");
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n);
}

std::vector<ExperimentRow> expand_plan(Plan plan, const ExperimentConfig& c) {
  std::vector<ExperimentRow> rows;
  const std::string name = plan_name(plan);
  for (std::uint64_t seed : c.seeds) {
    auto add = [&](const std::string& cond, double x, const std::string& metric) {
      rows.push_back({name, cond, x, seed, metric, 0.0});
    };
    switch (plan) {
      case Plan::kVaryRealFraction:
        for (double f : c.fractions) {
          for (const char* cond : {kBaseline, kAda, kOurs}) add(cond, f, "dice");
        }
        break;
      case Plan::kVarySyntheticCount:
        for (auto n : c.synthetic_counts) {
          for (const char* cond : {kAda, kOurs}) add(cond, static_cast<double>(n), "dice");
        }
        break;
      case Plan::kGapAnalysis:
        for (double f : c.fractions) {
          for (const char* cond : {kExtraReal, kExtraSynthetic, kOurs}) add(cond, f, "dice");
        }
        break;
      case Plan::kScAblation:
        for (const char* cond : {"gamma=0", "gamma=1"}) {
          add(cond, 1.0, "s_score_A");
          add(cond, 1.0, "s_score_B");
        }
        break;
    }
  }
  return rows;
}

// --- per-seed runs ---------------------------------------------------------------

SeedRun::SeedRun(const ExperimentConfig& config, std::uint64_t seed)
    : config_(config),
      seed_(seed),
      train_a_(make_dataset(config.train_volumes, config.phantom, Modality::kA, mix_seed(seed, kTrainA))),
      train_b_(make_dataset(config.train_volumes, config.phantom, Modality::kB, mix_seed(seed, kTrainB))),
      test_(make_paired_eval(config.test_volumes, config.phantom, mix_seed(seed, kTest))) {
  config_.validate();
}

Dataset SeedRun::real_subset(Modality m, double fraction) const {
  const Dataset& d = train(m);
  return first_n(d, fraction_count(fraction, d.size()));
}

std::string SeedRun::key(const std::string& kind, double x, std::size_t n) {
  return kind + ":" + format_double(x) + ":" + std::to_string(n);
}

TrainConfig SeedRun::config_for(const std::string& k) const {
  TrainConfig c = config_.train;
  c.seed = mix_seed(seed_, fnv1a(k));
  return c;
}

std::pair<Dataset, Dataset> SeedRun::joint_sets(double fraction, std::size_t other_count) const {
  const Modality t = config_.target;
  Dataset own = real_subset(t, fraction);
  Dataset rest = other_count == 0 ? train(other(t)) : first_n(train(other(t)), other_count);
  if (t == Modality::kA) return {std::move(own), std::move(rest)};
  return {std::move(rest), std::move(own)};
}

SegmentorNet& SeedRun::baseline(Modality m, double fraction) {
  const std::string k = key(std::string("baseline.") + modality_name(m), fraction);
  auto& slot = segmentors_[k];
  if (!slot) {
    const TrainConfig c = config_for(k);
    auto net = std::make_unique<SegmentorNet>(c.classes, c.seg_filters);
    net->init_parameters(c.seed);
    AdamState opt;
    pretrain_segmentor(*net, opt, real_subset(m, fraction), c, config_.train_volumes, 0);
    slot = std::move(net);
  }
  return *slot;
}

SegmentorNet& SeedRun::aux(Modality m) {
  const std::string k = key(std::string("aux.") + modality_name(m), 1.0);
  auto& slot = segmentors_[k];
  if (!slot) {
    const TrainConfig c = config_for(k);
    auto net = std::make_unique<SegmentorNet>(c.classes, c.seg_filters);
    net->init_parameters(c.seed);
    AdamState opt;
    pretrain_segmentor(*net, opt, train(m), c, config_.train_volumes, 0);
    slot = std::move(net);
  }
  return *slot;
}

TrainState& SeedRun::pretrained(double fraction, std::size_t other_count) {
  const std::string k = key("pretrained", fraction, other_count);
  auto& slot = states_[k];
  if (!slot) {
    const TrainConfig c = config_for(k);
    auto st = std::make_unique<TrainState>(c);
    const Modality t = config_.target;
    const double other_fraction =
        other_count == 0 ? 1.0 : static_cast<double>(other_count) / static_cast<double>(config_.train_volumes);
    SegmentorNet& own = baseline(t, fraction);
    SegmentorNet& rest = baseline(other(t), other_fraction);
    (t == Modality::kA ? st->s_a : st->s_b) = own;
    (t == Modality::kA ? st->s_b : st->s_a) = rest;
    const auto [a, b] = joint_sets(fraction, other_count);
    pretrain_generators(*st, a, b, c);
    st->epoch = 0;
    slot = std::move(st);
  }
  return *slot;
}

TrainState& SeedRun::ours(double fraction, std::size_t other_count) {
  const std::string k = key("ours", fraction, other_count);
  auto& slot = states_[k];
  if (!slot) {
    const TrainConfig c = config_for(k);
    auto st = std::make_unique<TrainState>(pretrained(fraction, other_count));
    JointData data;
    auto [a, b] = joint_sets(fraction, other_count);
    if (c.early_stop) {
      std::tie(data.a, data.a_val) = split_validation(a, c.validation_fraction, mix_seed(c.seed, 1));
      std::tie(data.b, data.b_val) = split_validation(b, c.validation_fraction, mix_seed(c.seed, 2));
    } else {
      data.a = std::move(a);
      data.b = std::move(b);
    }
    train_joint(*st, data, c);
    slot = std::move(st);
  }
  return *slot;
}

SegmentorNet& SeedRun::ada(double fraction, std::size_t other_count) {
  const std::string k = key("ada", fraction, other_count);
  auto& slot = segmentors_[k];
  if (!slot) {
    const TrainConfig c = config_for(k);
    const Modality t = config_.target;
    TrainState& pre = pretrained(fraction, other_count);
    const auto [a, b] = joint_sets(fraction, other_count);
    const Dataset pool = make_synthetic_pool(pre.g_a, pre.g_b, a, b, t);
    auto net = std::make_unique<SegmentorNet>(baseline(t, fraction));
    AdamState opt;
    train_ada(*net, opt, t == Modality::kA ? a : b, pool, c, std::max(a.size(), b.size()));
    slot = std::move(net);
  }
  return *slot;
}

SegmentorNet& SeedRun::extra_real(double fraction) {
  const std::string k = key("extra_real", fraction);
  auto& slot = segmentors_[k];
  if (!slot) {
    const TrainConfig c = config_for(k);
    const Modality t = config_.target;
    const std::size_t n_real = fraction_count(fraction, train(t).size());
    const std::size_t extra = std::min(train(other(t)).size(), train(t).size() - n_real);
    auto net = std::make_unique<SegmentorNet>(c.classes, c.seg_filters);
    net->init_parameters(c.seed);
    AdamState opt;
    pretrain_segmentor(*net, opt, first_n(train(t), n_real + extra), c, config_.train_volumes, 0);
    slot = std::move(net);
  }
  return *slot;
}

SegmentorNet& SeedRun::extra_synthetic(double fraction) {
  const std::string k = key("extra_synthetic", fraction);
  auto& slot = segmentors_[k];
  if (!slot) {
    const TrainConfig c = config_for(k);
    const Modality t = config_.target;
    const std::size_t n_real = fraction_count(fraction, train(t).size());
    const std::size_t extra = std::min(train(other(t)).size(), train(t).size() - n_real);
    TrainState& pre = pretrained(fraction);
    const auto [a, b] = joint_sets(fraction, 0);
    const Dataset pool = make_synthetic_pool(pre.g_a, pre.g_b, a, b, t);
    Dataset mixed = real_subset(t, fraction);
    // One-hop translations come first in the pool.
    for (std::size_t i = 0; i < extra; ++i) mixed.samples.push_back(pool.samples[i]);
    auto net = std::make_unique<SegmentorNet>(c.classes, c.seg_filters);
    net->init_parameters(c.seed);
    AdamState opt;
    pretrain_segmentor(*net, opt, mixed, c, config_.train_volumes, 0);
    slot = std::move(net);
  }
  return *slot;
}

TrainState& SeedRun::ablation(double gamma) {
  const std::string k = key("ablation", gamma);
  auto& slot = states_[k];
  if (!slot) {
    // Both arms share one seed so that gamma is the only difference.
    TrainConfig c = config_for("ablation");
    c.gamma = gamma;
    auto st = std::make_unique<TrainState>(pretrained(1.0));
    JointData data;
    data.a = train(Modality::kA);
    data.b = train(Modality::kB);
    train_joint(*st, data, c);
    slot = std::move(st);
  }
  return *slot;
}

double SeedRun::s_score(TrainState& state, Modality into) {
  GeneratorNet& g = into == Modality::kA ? state.g_a : state.g_b;
  const Dataset& source = test(other(into));
  SegmentorNet& judge = aux(into);
  double total = 0.0;
  for (const Sample& s : source.samples) {
    const Volume synthetic = Volume::from_tensor(g.forward(s.volume.to_tensor()));
    total += voxelcycle::s_score(synthetic, s.label, judge).score;
  }
  return total / static_cast<double>(source.size());
}

double SeedRun::dice(SegmentorNet& net) { return mean_dice(net, test(config_.target)); }

std::vector<ExperimentRow> SeedRun::run(Plan plan) {
  ExperimentConfig one = config_;
  one.seeds = {seed_};
  std::vector<ExperimentRow> rows = expand_plan(plan, one);
  const Modality t = config_.target;
  for (auto& r : rows) {
    const double x = r.fraction_or_count;
    if (plan == Plan::kScAblation) {
      TrainState& st = ablation(r.condition == "gamma=0" ? 0.0 : 1.0);
      r.value = s_score(st, r.metric == "s_score_A" ? Modality::kA : Modality::kB);
      continue;
    }
    const double f = plan == Plan::kVarySyntheticCount ? config_.synthetic_real_fraction : x;
    const std::size_t n = plan == Plan::kVarySyntheticCount ? static_cast<std::size_t>(x) : 0;
    if (r.condition == kBaseline) {
      r.value = dice(baseline(t, f));
    } else if (r.condition == kAda) {
      r.value = dice(ada(f, n));
    } else if (r.condition == kOurs) {
      TrainState& st = ours(f, n);
      r.value = dice(t == Modality::kA ? st.s_a : st.s_b);
    } else if (r.condition == kExtraReal) {
      r.value = dice(extra_real(f));
    } else if (r.condition == kExtraSynthetic) {
      r.value = dice(extra_synthetic(f));
    }
  }
  return rows;
}

ExperimentResult run_experiment(Plan plan, const ExperimentConfig& config, std::size_t threads) {
  config.validate();
  const std::size_t n = config.seeds.size();
  std::vector<std::vector<ExperimentRow>> per_seed(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t i) {
    try {
      SeedRun run(config, config.seeds[i]);
      per_seed[i] = run.run(plan);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  threads = std::max<std::size_t>(threads, 1);
  for (std::size_t lo = 0; lo < n; lo += threads) {
    std::vector<std::thread> pool;
    for (std::size_t i = lo; i < std::min(n, lo + threads); ++i) {
      if (threads == 1) {
        work(i);
      } else {
        pool.emplace_back(work, i);
      }
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  ExperimentResult result;
  for (auto& rows : per_seed) result.rows.insert(result.rows.end(), rows.begin(), rows.end());
  result.metadata = {
      {"plan", plan_name(plan)},
      {"dice_averaging", "mean over test volumes of per-volume foreground-class means"},
      {"dice_absent_class", "1.0 when a class is absent from prediction and ground truth"},
      {"s_score_segmentor", "fresh real-data segmentor of the target modality, dedicated seed"},
      {"target_modality", modality_name(config.target)},
  };
  return result;
}

}  // namespace voxelcycle
