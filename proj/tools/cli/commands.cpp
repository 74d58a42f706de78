#include "commands.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "config.hpp"
#include "sqac/error.hpp"
#include "sqac/eval/evaluation.hpp"
#include "sqac/log.hpp"
#include "sqac/model/checkpoint.hpp"
#include "sqac/prune/pruning.hpp"
#include "sqac/synth/corpus.hpp"
#include "sqac/train/teacher.hpp"
#include "sqac/train/trainer.hpp"

namespace sqac::cli {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::string verb;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool dry_run = false;
  bool force = false;
};

// Fixed layout of one experiment directory.
struct Layout {
  fs::path root;
  fs::path corpus() const { return root / "corpus"; }
  fs::path manifest(synth::Split s) const {
    return corpus() / (std::string("manifest_") + synth::split_name(s) + ".csv");
  }
  fs::path corpus_json() const { return corpus() / "corpus.json"; }
  fs::path baseline() const { return root / "baseline.sqac"; }
  fs::path baseline_history() const { return root / "baseline_history.csv"; }
  fs::path distilled() const { return root / "distilled.sqac"; }
  fs::path distill_history() const { return root / "distill_history.csv"; }
  fs::path pruned() const { return root / "pruned"; }
  fs::path reports() const { return root / "reports"; }
  fs::path sweep_csv() const { return root / "sweep.csv"; }
  fs::path sweep_dat() const { return root / "sweep.dat"; }
  fs::path resolved() const { return root / "config.resolved.ini"; }
  fs::path lock() const { return root / ".sqac.lock"; }

  std::vector<fs::path> outputs(const std::string& verb) const {
    if (verb == "synth") return {corpus()};
    if (verb == "train") return {baseline(), baseline_history()};
    if (verb == "distill") return {distilled(), distill_history()};
    if (verb == "prune") return {pruned()};
    if (verb == "eval") return {reports()};
    return {sweep_csv(), sweep_dat()};
  }
};

// Exclusive claim on an experiment directory for one command. A lock left
// by a dead process is taken over.
class DirLock {
 public:
  explicit DirLock(const fs::path& path) : path_(path) {
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const std::string pid = std::to_string(::getpid()) + "\n";
        const bool ok = ::write(fd, pid.data(), pid.size()) == static_cast<ssize_t>(pid.size());
        ::close(fd);
        if (!ok) throw IoError("cannot write lock file " + path.string());
        return;
      }
      if (errno != EEXIST) throw IoError("cannot create lock file " + path.string() + ": " + std::strerror(errno));
      long owner = 0;
      std::ifstream(path) >> owner;
      if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno != ESRCH))
        throw IoError("experiment directory is locked by process " + std::to_string(owner) + " (" + path.string() +
                      ")");
      log::warn("removing stale lock " + path.string());
      fs::remove(path);
    }
    throw IoError("cannot acquire lock " + path.string());
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

void require(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw MissingPrerequisite("missing " + p.string() + " (" + hint + ")");
}

std::vector<synth::ManifestEntry> manifest(const Layout& l, synth::Split s) {
  require(l.manifest(s), "run synth first");
  return synth::read_manifest(l.manifest(s));
}

std::vector<synth::ManifestEntry> with_labels(const std::vector<synth::ManifestEntry>& rows, bool labeled) {
  std::vector<synth::ManifestEntry> out;
  for (const auto& r : rows)
    if (r.mos.has_value() == labeled) out.push_back(r);
  return out;
}

std::unique_ptr<train::Teacher> make_teacher(const ExperimentConfig& cfg, const Layout& l,
                                             train::FeatureStore& features) {
  if (cfg.get("teacher", "kind") == "oracle") {
    require(l.corpus_json(), "the oracle teacher reads dataset biases from the corpus; run synth first");
    return std::make_unique<train::OracleTeacher>(
        train::OracleTeacher::from_corpus(l.corpus_json(), cfg.real("teacher", "noise_std"), cfg.seed()));
  }
  const fs::path ckpt = cfg.get("teacher", "checkpoint");
  if (ckpt.empty()) throw ConfigError("config key teacher.checkpoint must be set when teacher.kind = checkpoint");
  require(ckpt, "teacher.checkpoint");
  return train::ModelTeacher::load(ckpt, features);
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void cmd_synth(const ExperimentConfig& cfg, const Layout& l, std::ostream& out) {
  const auto corpus = cfg.corpus();
  const auto summary = synth::build_corpus(corpus, l.corpus());
  out << "corpus: " << summary.clips << " clips (train " << summary.rows[0] << ", val " << summary.rows[1]
      << ", test " << summary.rows[2] << ") in " << l.corpus().string() << '\n';
  for (const auto& d : corpus.datasets)
    out << "  " << d.id << ": train " << d.train << ", val " << d.val << ", test " << d.test
        << (d.labeled ? " (labeled)" : " (unlabeled)") << '\n';
}

void cmd_train(const ExperimentConfig& cfg, const Layout& l, std::ostream& out) {
  const auto train_rows = with_labels(manifest(l, synth::Split::kTrain), true);
  const auto val = manifest(l, synth::Split::kVal);
  train::FeatureStore features;
  const auto result = train::train_labeled(model::QualityModel::student(cfg.student(), cfg.seed()), train_rows, val,
                                           cfg.train(train::Mode::kLabeledOnly), features);
  model::save_checkpoint(result.best, l.baseline());
  train::write_history(l.baseline_history(), result.history);
  out << "baseline: best step " << result.best_step << ", val mse " << fixed(result.best_val_mse) << " -> "
      << l.baseline().string() << '\n';
}

void cmd_distill(const ExperimentConfig& cfg, const Layout& l, std::ostream& out) {
  const auto train_rows = manifest(l, synth::Split::kTrain);
  const auto val = manifest(l, synth::Split::kVal);
  train::FeatureStore features;
  const auto teacher = make_teacher(cfg, l, features);
  log::info("teacher: " + teacher->describe());
  const auto result =
      train::distill(model::QualityModel::student(cfg.student(), cfg.seed()), *teacher, with_labels(train_rows, false),
                     with_labels(train_rows, true), val, cfg.train(train::Mode::kDistill), features);
  model::save_checkpoint(result.best, l.distilled());
  train::write_history(l.distill_history(), result.history);
  out << "distilled: best step " << result.best_step << ", val mse " << fixed(result.best_val_mse) << ", "
      << result.labeled_items << " of " << result.total_items << " items labeled, " << result.teacher_skips
      << " teacher skips -> " << l.distilled().string() << '\n';
}

void cmd_prune(const ExperimentConfig& cfg, const Layout& l, std::ostream& out) {
  const fs::path source = cfg.get("prune", "source") == "baseline" ? l.baseline() : l.distilled();
  require(source, "prune.source = " + cfg.get("prune", "source") + " needs that checkpoint");
  const auto model = model::load_checkpoint(source);
  const auto train_rows = with_labels(manifest(l, synth::Split::kTrain), true);
  const auto val = manifest(l, synth::Split::kVal);
  train::FeatureStore features;
  std::unique_ptr<train::Teacher> teacher;
  if (cfg.get("prune", "label_domain") == "teacher") teacher = make_teacher(cfg, l, features);
  fs::create_directories(l.pruned());
  for (const auto criterion : cfg.prune_criteria()) {
    auto sched = cfg.prune(criterion);
    sched.out_dir = l.pruned();
    sched.tag = "pruned";
    const auto points =
        prune::run_prune_schedule(model.clone(), {&train_rows, &val, &features, teacher.get()}, sched);
    const fs::path traj = l.pruned() / (std::string("trajectory_") + prune::criterion_name(criterion) + ".csv");
    prune::write_trajectory(traj, points);
    out << prune::criterion_name(criterion) << ": " << points.size() << " checkpoints, trajectory " << traj.string()
        << '\n';
    for (const auto& p : points)
      out << "  " << p.checkpoint_path.filename().string() << ": remaining " << fixed(p.remaining_fraction)
          << ", effective params " << fixed(p.effective_params, 0) << ", val mse " << fixed(p.val_mse) << '\n';
  }
}

// Checkpoints present in the experiment, with their method tags.
std::vector<eval::SweepInput> collect_checkpoints(const Layout& l) {
  std::vector<eval::SweepInput> found;
  if (fs::exists(l.baseline())) found.push_back({l.baseline(), eval::Method::kBaseline, "baseline"});
  if (fs::exists(l.distilled())) found.push_back({l.distilled(), eval::Method::kDistilled, "distilled"});
  if (fs::is_directory(l.pruned())) {
    std::vector<fs::path> pruned;
    for (const auto& e : fs::directory_iterator(l.pruned()))
      if (e.path().extension() == ".sqac") pruned.push_back(e.path());
    std::sort(pruned.begin(), pruned.end());
    for (const auto& p : pruned) {
      const std::string stem = p.stem().string();
      const auto method = stem.find("_magnitude_") != std::string::npos ? eval::Method::kPrunedMagnitude
                                                                        : eval::Method::kPrunedTaylor;
      found.push_back({p, method, stem});
    }
  }
  return found;
}

void cmd_eval(const ExperimentConfig& cfg, const Layout& l, std::ostream& out) {
  const auto test = manifest(l, synth::Split::kTest);
  const auto models = collect_checkpoints(l);
  const bool with_teacher = cfg.flag("eval", "include_teacher");
  if (models.empty() && !with_teacher)
    throw MissingPrerequisite("no checkpoints in " + l.root.string() + " (run train, distill or prune first)");
  const auto mode = cfg.get("eval", "bias_mode") == "per_dataset" ? eval::BiasMode::kPerDataset
                                                                  : eval::BiasMode::kUniversal;
  train::FeatureStore features;
  fs::create_directories(l.reports());
  out << "model,effective_params,weighted_pcc,unweighted_pcc\n";
  auto emit = [&](const eval::EvalReport& r) {
    eval::write_report(l.reports() / (r.model_id + ".csv"), r);
    out << r.model_id << ',' << fixed(r.effective_params, 0) << ',' << fixed(r.weighted_mean) << ','
        << fixed(r.unweighted_mean) << '\n';
  };
  for (const auto& m : models) {
    const auto model = model::load_checkpoint(m.checkpoint);
    try {
      emit(eval::evaluate(model, test, mode, features, m.model_id));
    } catch (const eval::UndefinedCorrelation& e) {
      // A collapsed model still gets a row so the report set is complete.
      log::warn(m.model_id + ": " + e.what());
      out << m.model_id << ',' << fixed(model::count_parameters(model, true), 0) << ",NA,NA\n";
    }
  }
  if (with_teacher) {
    const auto teacher = make_teacher(cfg, l, features);
    emit(eval::evaluate_teacher(*teacher, test));
  }
}

void cmd_sweep(const ExperimentConfig& cfg, const Layout& l, std::ostream& out) {
  const auto test = manifest(l, synth::Split::kTest);
  const auto models = collect_checkpoints(l);
  train::FeatureStore features;
  std::unique_ptr<train::Teacher> teacher;
  if (cfg.flag("eval", "include_teacher")) teacher = make_teacher(cfg, l, features);
  if (models.size() + (teacher ? 1 : 0) < 2)
    throw MissingPrerequisite("a sweep needs at least two models in " + l.root.string());
  const auto rows = eval::size_sweep(models, test, features, teacher.get());
  eval::write_sweep(l.sweep_csv(), l.sweep_dat(), rows);
  out << "model_id,method,effective_params,weighted_pcc\n";
  for (const auto& r : rows)
    out << r.model_id << ',' << eval::method_name(r.method) << ',' << fixed(r.effective_params, 0) << ','
        << fixed(r.weighted_pcc) << '\n';
}

struct Prerequisite {
  fs::path path;
  std::string what;
};

std::vector<Prerequisite> prerequisites(const std::string& verb, const ExperimentConfig& cfg, const Layout& l) {
  std::vector<Prerequisite> p;
  if (verb == "synth") return p;
  for (auto s : {synth::Split::kTrain, synth::Split::kVal, synth::Split::kTest})
    p.push_back({l.manifest(s), "manifest"});
  const bool oracle = cfg.get("teacher", "kind") == "oracle";
  const bool needs_teacher = verb == "distill" || ((verb == "eval" || verb == "sweep") && cfg.flag("eval", "include_teacher")) ||
                             (verb == "prune" && cfg.get("prune", "label_domain") == "teacher");
  if (needs_teacher) p.push_back({oracle ? l.corpus_json() : fs::path(cfg.get("teacher", "checkpoint")), "teacher"});
  if (verb == "prune")
    p.push_back({cfg.get("prune", "source") == "baseline" ? l.baseline() : l.distilled(), "source checkpoint"});
  return p;
}

void print_plan(const Options& o, const ExperimentConfig& cfg, const Layout& l, std::ostream& out) {
  out << "# plan (dry run, nothing is written)\n# verb: " << o.verb << "\n# experiment: " << l.root.string() << '\n';
  for (const auto& p : prerequisites(o.verb, cfg, l))
    out << "# reads: " << p.path.string() << " (" << p.what << (fs::exists(p.path) ? "" : ", missing") << ")\n";
  for (const auto& p : l.outputs(o.verb))
    out << "# writes: " << p.string() << (fs::exists(p) ? " (exists; needs --force)" : "") << '\n';
  if (o.verb == "synth") {
    const auto c = cfg.corpus();
    std::size_t clips = 0;
    for (const auto& d : c.datasets) clips += d.train + d.val + d.test;
    out << "# corpus: " << c.datasets.size() << " datasets, " << clips << " clips\n";
  }
  if (o.verb == "train" || o.verb == "distill") {
    const auto t = cfg.train(o.verb == "train" ? train::Mode::kLabeledOnly : train::Mode::kDistill);
    out << "# student: " << model::Architecture::of(cfg.student()).to_string() << "\n# steps: " << t.total_steps
        << ", batch " << t.batch_size << ", lr " << t.learning_rate << '\n';
  }
  if (o.verb == "prune")
    for (auto c : cfg.prune_criteria()) {
      const auto sched = cfg.prune(c);
      out << "# criterion: " << prune::criterion_name(c) << ", " << sched.targets.size() << " targets\n";
    }
  out << cfg.resolved_text();
}

int execute(const Options& o, const std::vector<std::pair<std::string, std::string>>& env, std::ostream& out) {
  auto cfg = ExperimentConfig::load(o.config, env);
  if (o.seed) cfg.set("experiment", "seed", std::to_string(*o.seed));
  if (!o.out.empty()) cfg.set("experiment", "out_dir", o.out);
  if (cfg.out_dir().empty()) throw ConfigError("no experiment directory: pass --out or set experiment.out_dir");
  const Layout layout{cfg.out_dir()};
  // Validate everything the verb will read from the config before touching disk.
  if (o.verb == "synth") cfg.corpus();
  if (o.verb == "train") cfg.train(train::Mode::kLabeledOnly);
  if (o.verb == "distill") cfg.train(train::Mode::kDistill);
  if (o.verb == "prune")
    for (auto c : cfg.prune_criteria()) cfg.prune(c);

  if (o.dry_run) {
    print_plan(o, cfg, layout, out);
    return kOk;
  }

  std::error_code ec;
  fs::create_directories(layout.root, ec);
  if (ec) throw IoError("cannot create experiment directory " + layout.root.string() + ": " + ec.message());
  DirLock lock(layout.lock());
  for (const auto& p : layout.outputs(o.verb)) {
    if (!fs::exists(p)) continue;
    if (!o.force) throw IoError(p.string() + " already exists; pass --force to overwrite");
    fs::remove_all(p);
  }
  {
    std::ofstream resolved(layout.resolved());
    resolved << cfg.resolved_text();
    if (!resolved) throw IoError("cannot write " + layout.resolved().string());
  }
  if (o.verb == "synth") cmd_synth(cfg, layout, out);
  else if (o.verb == "train") cmd_train(cfg, layout, out);
  else if (o.verb == "distill") cmd_distill(cfg, layout, out);
  else if (o.verb == "prune") cmd_prune(cfg, layout, out);
  else if (o.verb == "eval") cmd_eval(cfg, layout, out);
  else cmd_sweep(cfg, layout, out);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, const std::vector<std::pair<std::string, std::string>>& env,
        std::ostream& out, std::ostream& err) {
  CLI::App app{"Distillation and pruning toolkit for speech quality models"};
  app.require_subcommand(1);
  Options o;
  const std::pair<const char*, const char*> verbs[] = {
      {"synth", "generate the synthetic corpus"},
      {"train", "train the labeled-only baseline"},
      {"distill", "distill a student from the teacher"},
      {"prune", "run the pruning schedules"},
      {"eval", "write per-model test reports"},
      {"sweep", "tabulate quality against model size"},
  };
  for (const auto& [name, help] : verbs) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "experiment config (INI)");
    sub->add_option("--seed", o.seed, "override experiment.seed");
    sub->add_option("--out", o.out, "experiment directory (overrides experiment.out_dir)");
    sub->add_flag("--dry-run", o.dry_run, "validate and print the plan without running");
    sub->add_flag("--force", o.force, "overwrite this command's earlier outputs");
    sub->callback([&o, n = std::string(name)] { o.verb = n; });
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfigFailure;
  }

  try {
    return execute(o, env, out);
  } catch (const IoError& e) {
    err << "sqac: I/O error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const MissingPrerequisite& e) {
    err << "sqac: missing prerequisite: " << e.what() << '\n';
    return kMissingPrerequisite;
  } catch (const ConfigError& e) {
    err << "sqac: config error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const ScheduleExhausted& e) {
    err << "sqac: config error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const NumericalError& e) {
    err << "sqac: numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "sqac: I/O error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const std::exception& e) {
    err << "sqac: error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace sqac::cli
