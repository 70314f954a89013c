#include "voxelcycle/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

#include "voxelcycle/checkpoint.hpp"
#include "voxelcycle/errors.hpp"
#include "voxelcycle/evaluation.hpp"
#include "voxelcycle/experiment.hpp"
#include "voxelcycle/gradcheck.hpp"
#include "voxelcycle/keyvalue.hpp"
#include "voxelcycle/phantom.hpp"
#include "voxelcycle/trainer.hpp"
#include "voxelcycle/wire.hpp"

namespace fs = std::filesystem;

namespace voxelcycle {
namespace {

constexpr double kGradTolerance = 1e-4;
const char* const kCheckpointFile = "checkpoint.vxck";
const char* const kLogFile = "train_log.csv";
const char* const kConfigFile = "config.cfg";

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("VOXELCYCLE_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("VOXELCYCLE_SEED is not an unsigned integer: '") + s + "'");
  }
}

std::string read_text(const std::string& path) {
  if (path.empty()) return {};
  return wire::read_file(path);
}

// A training checkpoint holds every network under a prefix; a bare network
// checkpoint is accepted as is.
Checkpoint network_section(const Checkpoint& ck, const std::string& prefix) {
  Checkpoint sub = ck.subset(prefix);
  return sub.entries.empty() ? ck : sub;
}

GeneratorNet load_generator(const Checkpoint& ck, Modality into) {
  return GeneratorNet::from_checkpoint(network_section(ck, into == Modality::kA ? "g_a." : "g_b."));
}

SegmentorNet load_segmentor(const Checkpoint& ck, Modality m) {
  return SegmentorNet::from_checkpoint(network_section(ck, m == Modality::kA ? "s_a." : "s_b."));
}

void check_finite(const Tensor& t, const std::string& what) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(what + " contains a non-finite value");
  }
}

// --- gen-data ------------------------------------------------------------------

struct GenDataArgs {
  std::string modality;
  std::size_t count = 0;
  std::string spec;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  PhantomSpec spec = a.spec.empty() ? PhantomSpec{} : PhantomSpec::parse(read_text(a.spec));
  if (a.seed) spec.seed = *a.seed;
  if (auto s = env_seed()) spec.seed = *s;
  spec.validate();
  const Modality m = parse_modality(a.modality);
  if (a.count == 0) throw ConfigError("--count must be positive");
  const Dataset data = make_dataset(a.count, spec, m, spec.seed);
  save_dataset(data, a.out);
  wire::write_file(fs::path(a.out) / "spec.cfg", spec.serialize());
  out << "wrote " << data.size() << " volumes of modality " << modality_name(m) << " to " << a.out << "\n";
  return kExitOk;
}

// --- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string mode;
  std::string config;
  std::string data_a, data_b;
  std::string out;
  std::string init;
  bool resume = false;
  std::string target = "A";
};

void load_networks(TrainState& st, const Checkpoint& ck) {
  st.g_a.load_state(ck.subset("g_a."));
  st.g_b.load_state(ck.subset("g_b."));
  st.d_a.load_state(ck.subset("d_a."));
  st.d_b.load_state(ck.subset("d_b."));
  st.s_a.load_state(ck.subset("s_a."));
  st.s_b.load_state(ck.subset("s_b."));
}

class TrainLog {
 public:
  TrainLog(const fs::path& path, bool append) : file_(path, append ? std::ios::app : std::ios::trunc) {
    if (!file_) throw FormatError(FormatError::Kind::kIo, "cannot open " + path.string() + " for writing");
    if (!append) file_ << LossReport::csv_header() << "\n";
  }

  void write(std::uint64_t step, const LossReport& r) {
    if (!std::isfinite(r.total)) {
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    file_ << r.csv_row(step) << "\n";
    file_.flush();
  }

 private:
  std::ofstream file_;
};

int train(const TrainArgs& a, std::ostream& out) {
  TrainConfig config = a.config.empty() ? TrainConfig{} : TrainConfig::parse(read_text(a.config));
  if (auto s = env_seed()) config.seed = *s;
  config.validate();
  const std::uint64_t hash = config.hash();

  const Dataset data_a = load_dataset(a.data_a);
  const Dataset data_b = load_dataset(a.data_b);
  if (data_a.modality != Modality::kA || data_b.modality != Modality::kB) {
    throw ConfigError("--data-a must hold modality A volumes and --data-b modality B volumes");
  }

  const fs::path dir = a.out;
  fs::create_directories(dir);
  const fs::path ckpt_path = dir / kCheckpointFile;

  TrainState st(config);
  if (a.resume) {
    if (a.mode == "ada") throw ConfigError("--resume is not supported for --mode ada");
    const Checkpoint ck = load_checkpoint(ckpt_path);
    if (ck.config_hash != hash) {
      throw ConfigError("checkpoint in " + dir.string() + " was written with a different configuration");
    }
    st.restore(ck);
  } else if (!a.init.empty()) {
    load_networks(st, load_checkpoint(a.init));
  } else if (a.mode == "ada") {
    throw ConfigError("--mode ada needs --init with pretrained generators and segmentors");
  }

  wire::write_file(dir / kConfigFile, config.serialize());
  TrainLog log(dir / kLogFile, a.resume);
  TrainHooks hooks;
  hooks.on_step = [&](std::uint64_t step, const LossReport& r) { log.write(step, r); };
  hooks.on_epoch = [&](const TrainState& s) { save_checkpoint(s.to_checkpoint(hash), ckpt_path); };

  if (a.mode == "pretrain-seg") {
    pretrain_segmentors(st, data_a, data_b, config, hooks);
  } else if (a.mode == "pretrain-gan") {
    pretrain_generators(st, data_a, data_b, config, hooks);
  } else if (a.mode == "joint") {
    JointData jd;
    if (config.early_stop) {
      std::tie(jd.a, jd.a_val) = split_validation(data_a, config.validation_fraction, mix_seed(config.seed, 1));
      std::tie(jd.b, jd.b_val) = split_validation(data_b, config.validation_fraction, mix_seed(config.seed, 2));
    } else {
      jd.a = data_a;
      jd.b = data_b;
    }
    train_joint(st, jd, config, hooks);
  } else if (a.mode == "ada") {
    const Modality t = parse_modality(a.target);
    const Dataset pool = make_synthetic_pool(st.g_a, st.g_b, data_a, data_b, t);
    SegmentorNet& net = t == Modality::kA ? st.s_a : st.s_b;
    AdamState& opt = t == Modality::kA ? st.opt_s_a : st.opt_s_b;
    std::uint64_t steps = 0;
    const auto ada_log = [&](std::uint64_t step, const LossReport& r) {
      steps = step + 1;
      log.write(step, r);
    };
    train_ada(net, opt, t == Modality::kA ? data_a : data_b, pool, config, std::max(data_a.size(), data_b.size()),
              ada_log);
    st.step = steps;
    st.epoch = config.epochs_joint + config.epochs_decay;
    save_dataset(pool, dir / "synthetic");
  } else {
    throw ConfigError("unknown --mode '" + a.mode + "'");
  }
  save_checkpoint(st.to_checkpoint(hash), ckpt_path);
  out << a.mode << ": " << st.step << " steps, checkpoint " << ckpt_path.string() << "\n";
  return kExitOk;
}

// --- translate / segment ---------------------------------------------------------

struct MapArgs {
  std::string checkpoint;
  std::string modality;
  std::string in, out;
};

int translate(const MapArgs& a, std::ostream& out) {
  const Modality into = parse_modality(a.modality);
  GeneratorNet g = load_generator(load_checkpoint(a.checkpoint), into);
  const Volume v = load_intensity_volume(a.in);
  const Tensor y = g.forward(v.to_tensor());
  check_finite(y, "translated volume");
  save_volume(a.out, Volume::from_tensor(y));
  out << "translated " << a.in << " into modality " << modality_name(into) << "\n";
  return kExitOk;
}

int segment(const MapArgs& a, std::ostream& out) {
  const Modality m = parse_modality(a.modality);
  SegmentorNet s = load_segmentor(load_checkpoint(a.checkpoint), m);
  const LabelVolume labels = predict_labels(s, load_intensity_volume(a.in));
  save_volume(a.out, labels);
  out << "segmented " << a.in << " into " << labels.classes << " classes\n";
  return kExitOk;
}

// --- eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string pred, gt;
  std::size_t classes = 0;
  std::string checkpoint;
  std::string modality;
};

void print_dice(const DiceResult& d, std::ostream& out) {
  for (std::size_t c = 0; c < d.per_class.size(); ++c) {
    out << "class " << c << " dice " << format_double(d.per_class[c]) << "\n";
  }
  out << "mean_foreground_dice " << format_double(d.mean) << "\n";
}

int eval_dice(const EvalArgs& a, std::ostream& out) {
  const LabelVolume pred = load_label_volume(a.pred);
  const LabelVolume gt = load_label_volume(a.gt);
  const std::size_t classes = a.classes != 0 ? a.classes : std::max(pred.classes, gt.classes);
  print_dice(dice(pred, gt, classes), out);
  return kExitOk;
}

int eval_sscore(const EvalArgs& a, std::ostream& out) {
  const Modality m = parse_modality(a.modality);
  SegmentorNet aux = load_segmentor(load_checkpoint(a.checkpoint), m);
  const SScoreResult r = s_score(load_intensity_volume(a.pred), load_label_volume(a.gt), aux);
  print_dice(r.dice, out);
  out << "s_score " << format_double(r.score) << "\n";
  return kExitOk;
}

// --- experiment ----------------------------------------------------------------

struct ExperimentArgs {
  std::string plan;
  std::string config;
  std::string out;
  std::size_t threads = 1;
  bool dry_run = false;
};

int experiment(const ExperimentArgs& a, std::ostream& out) {
  const Plan plan = parse_plan(a.plan);
  ExperimentConfig config = a.config.empty() ? ExperimentConfig{} : ExperimentConfig::parse(read_text(a.config));
  if (auto s = env_seed()) config.seeds = {*s};
  config.validate();
  if (a.threads == 0) throw ConfigError("--threads must be at least 1");

  ExperimentResult result;
  if (a.dry_run) {
    result.rows = expand_plan(plan, config);
  } else {
    result = run_experiment(plan, config, a.threads);
  }
  const fs::path csv = a.out;
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  wire::write_file(csv, result.to_csv());
  wire::write_file(fs::path(a.out + ".meta"), result.metadata_text());
  wire::write_file(fs::path(a.out + ".cfg"), config.serialize());
  out << plan_name(plan) << ": " << result.rows.size() << " rows written to " << a.out << "\n";
  return kExitOk;
}

// --- gradcheck -----------------------------------------------------------------

int gradcheck(std::uint64_t seed, std::size_t trials, std::ostream& out) {
  if (auto s = env_seed()) seed = *s;
  if (trials == 0) throw ConfigError("--trials must be positive");
  bool ok = true;
  for (const GradCheckCase& c : run_gradcheck_suite(seed, trials)) {
    const bool pass = c.max_rel_error < kGradTolerance;
    ok = ok && pass;
    out << c.op << " max_rel_error " << format_double(c.max_rel_error) << " trials " << c.trials
        << (pass ? " ok" : " FAIL") << "\n";
  }
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unpaired volumetric translation and segmentation on synthetic phantoms", "voxelcycle"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a phantom dataset directory");
  gen_cmd->add_option("--modality", gen.modality, "Modality preset, A or B")->required();
  gen_cmd->add_option("--count", gen.count, "Number of volumes")->required();
  gen_cmd->add_option("--spec", gen.spec, "Phantom spec file (key = value lines)");
  gen_cmd->add_option("--seed", gen.seed, "Base seed; overrides the spec's seed");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Run one training phase");
  train_cmd->add_option("--mode", tr.mode, "pretrain-seg, pretrain-gan, joint or ada")
      ->required()
      ->check(CLI::IsMember({"pretrain-seg", "pretrain-gan", "joint", "ada"}));
  train_cmd->add_option("--config", tr.config, "Training config file (key = value lines)");
  train_cmd->add_option("--data-a", tr.data_a, "Dataset directory of modality A")->required();
  train_cmd->add_option("--data-b", tr.data_b, "Dataset directory of modality B")->required();
  train_cmd->add_option("--out", tr.out, "Output directory for config, log and checkpoint")->required();
  train_cmd->add_option("--init", tr.init, "Checkpoint whose network weights start this phase");
  train_cmd->add_flag("--resume", tr.resume, "Continue from the checkpoint in --out");
  train_cmd->add_option("--target", tr.target, "Segmented modality for --mode ada, A or B");

  MapArgs tl;
  auto* translate_cmd = app.add_subcommand("translate", "Translate a volume with a trained generator");
  translate_cmd->add_option("--checkpoint", tl.checkpoint, "Training or generator checkpoint")->required();
  translate_cmd->add_option("--to", tl.modality, "Target modality, A or B")->required();
  translate_cmd->add_option("--in", tl.in, "Input intensity volume (.vvol)")->required();
  translate_cmd->add_option("--out", tl.out, "Output intensity volume (.vvol)")->required();

  MapArgs sg;
  auto* segment_cmd = app.add_subcommand("segment", "Segment a volume with a trained segmentor");
  segment_cmd->add_option("--checkpoint", sg.checkpoint, "Training or segmentor checkpoint")->required();
  segment_cmd->add_option("--modality", sg.modality, "Modality of the input volume, A or B")->required();
  segment_cmd->add_option("--in", sg.in, "Input intensity volume (.vvol)")->required();
  segment_cmd->add_option("--out", sg.out, "Output label volume (.vvol)")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score label volumes");
  eval_cmd->require_subcommand(1);
  auto* dice_cmd = eval_cmd->add_subcommand("dice", "Per-class and mean foreground Dice");
  dice_cmd->add_option("--pred", ev.pred, "Predicted label volume")->required();
  dice_cmd->add_option("--gt", ev.gt, "Ground-truth label volume")->required();
  dice_cmd->add_option("--classes", ev.classes, "Class count (default: from the files)");
  auto* sscore_cmd = eval_cmd->add_subcommand("sscore", "Dice of an auxiliary segmentor on a synthetic volume");
  sscore_cmd->add_option("--pred", ev.pred, "Synthetic intensity volume")->required();
  sscore_cmd->add_option("--gt", ev.gt, "Labels of the volume it was translated from")->required();
  sscore_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint holding the auxiliary segmentor")->required();
  sscore_cmd->add_option("--modality", ev.modality, "Modality of the synthetic volume, A or B")->required();

  ExperimentArgs ex;
  auto* exp_cmd = app.add_subcommand("experiment", "Run a multi-seed experiment plan");
  exp_cmd->add_option("--plan", ex.plan, "vary-real-fraction, vary-synthetic-count, gap-analysis or sc-ablation")
      ->required();
  exp_cmd->add_option("--config", ex.config, "Experiment config file (key = value lines)");
  exp_cmd->add_option("--out", ex.out, "Results CSV; metadata goes to <out>.meta, config to <out>.cfg")->required();
  exp_cmd->add_option("--threads", ex.threads, "Seeds trained concurrently");
  exp_cmd->add_flag("--dry-run", ex.dry_run, "Write the row layout without training");

  std::uint64_t gc_seed = 1;
  std::size_t gc_trials = 20;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
  gc_cmd->add_option("--seed", gc_seed, "Seed of the random inputs");
  gc_cmd->add_option("--trials", gc_trials, "Random instances per operation");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const CLI::App* scope = &app;
    for (const CLI::App* sub : app.get_subcommands()) scope = sub;
    err << scope->help();
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return gen_data(gen, out);
    if (train_cmd->parsed()) return train(tr, out);
    if (translate_cmd->parsed()) return translate(tl, out);
    if (segment_cmd->parsed()) return segment(sg, out);
    if (dice_cmd->parsed()) return eval_dice(ev, out);
    if (sscore_cmd->parsed()) return eval_sscore(ev, out);
    if (exp_cmd->parsed()) return experiment(ex, out);
    if (gc_cmd->parsed()) return gradcheck(gc_seed, gc_trials, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace voxelcycle
