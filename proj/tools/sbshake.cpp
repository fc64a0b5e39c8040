// Command-line surface for the sub-band shake experiments: synthetic corpus
// generation, featurization, training, patience sweeps and significance
// tests, reproducible from a config file plus seeds.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include "sbs/train.hpp"

namespace fs = std::filesystem;
using namespace sbs;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitConsistency = 4;

std::uint64_t default_root_seed() {
  if (const char* env = std::getenv("SUBBAND_SHAKE_SEED"))
    return std::strtoull(env, nullptr, 10);
  return 1234;
}

std::vector<Index> parse_index_list(const std::string& text, const char* what) {
  std::vector<Index> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string tok =
        text.substr(start, comma == std::string::npos ? comma : comma - start);
    if (!tok.empty()) {
      try {
        out.push_back(std::stoll(tok));
      } catch (const std::exception&) {
        throw ValueError(str("cannot parse ", what, " entry: ", tok));
      }
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw ValueError(str("empty ", what, " list"));
  return out;
}

void write_config_echo(const std::string& dir,
                       const std::map<std::string, std::string>& kv) {
  std::ofstream os(fs::path(dir) / "config.txt");
  if (!os) throw IoError(str("cannot write config echo under ", dir));
  for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
}

// Flat key=value config file; each key names a long option of the chosen
// subcommand. The pairs are spliced in front of the explicit flags, which
// therefore win.
std::vector<std::string> config_file_args(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(str("cannot open config file: ", path));
  std::vector<std::string> out;
  std::string line;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValueError(str("config line is not key=value: ", line));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ValueError(str("config line has no key: ", line));
    out.push_back("--" + key);
    if (!value.empty()) out.push_back(value);
  }
  return out;
}

// Runs jobs on up to `jobs` worker threads; each job owns its output files.
void run_jobs(std::vector<std::function<void()>> work, Index jobs) {
  if (jobs <= 1) {
    for (auto& w : work) w();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(work.size());
  for (Index t = 0; t < std::min<Index>(jobs, static_cast<Index>(work.size())); ++t)
    pool.emplace_back([&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= work.size()) return;
        try {
          work[i]();
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---- synth-data -----------------------------------------------------------

struct SynthArgs {
  std::string out;
  Index actors = 8;
  Index per_class = 20;
  double noise = 0.05;
  double min_sec = 1.0;
  double max_sec = 1.5;
  std::string corpus = "synth";
  std::uint64_t seed = default_root_seed();
};

int cmd_synth_data(const SynthArgs& a) {
  if (a.min_sec < 1.0 || a.max_sec > 3.0 || a.min_sec > a.max_sec)
    throw ValueError("durations must satisfy 1.0 <= min-sec <= max-sec <= 3.0");
  SynthSpec spec;
  spec.actor_count = a.actors;
  spec.per_class = a.per_class;
  spec.noise_level = a.noise;
  spec.min_seconds = a.min_sec;
  spec.max_seconds = a.max_sec;
  spec.corpus = a.corpus;
  spec.seed = a.seed;
  spec.out_dir = a.out;
  Manifest m = generate_synthetic_corpus(spec);
  save_manifest((fs::path(a.out) / "manifest.csv").string(), m);
  write_config_echo(a.out, {{"command", "synth-data"},
                            {"actors", str(a.actors)},
                            {"per_class", str(a.per_class)},
                            {"noise", str(a.noise)},
                            {"min_sec", str(a.min_sec)},
                            {"max_sec", str(a.max_sec)},
                            {"corpus", a.corpus},
                            {"seed", str(a.seed)}});
  std::cout << "wrote " << m.size() << " utterances under " << a.out << "\n";
  return kExitOk;
}

// ---- featurize ------------------------------------------------------------

struct FeaturizeArgs {
  std::string manifest;
  std::string featdir;
  bool force = false;
  bool fail_fast = false;
};

int cmd_featurize(const FeaturizeArgs& a) {
  Manifest m = load_manifest(a.manifest);
  const fs::path manifest_dir = fs::path(a.manifest).parent_path();
  const fs::path featdir =
      a.featdir.empty() ? manifest_dir / "feat" : fs::path(a.featdir);
  std::error_code ec;
  fs::create_directories(featdir, ec);
  if (ec) throw IoError(str("cannot create ", featdir.string(), ": ", ec.message()));

  Index written = 0, skipped_existing = 0, failed = 0;
  for (auto& rec : m) {
    const fs::path out = featdir / (rec.utterance_id + ".feat");
    try {
      if (fs::exists(out) && !a.force) {
        const auto t = load_features(out.string());
        std::cout << rec.utterance_id << ": " << t.dim(0) << "x" << t.dim(1)
                  << "x" << t.dim(2) << " (kept)\n";
        ++skipped_existing;
      } else {
        Waveform w =
            read_wav((manifest_dir / "wav" / (rec.utterance_id + ".wav")).string());
        FeatureSequence feats = make_features(w);
        save_features(out.string(), feats);
        std::cout << rec.utterance_id << ": " << feats.frames.dim(0) << "x"
                  << feats.frames.dim(1) << "x" << feats.frames.dim(2) << "\n";
        ++written;
      }
      rec.feature_path = out.string();
    } catch (const std::exception& e) {
      if (a.fail_fast) throw;
      std::cerr << "skipped " << rec.utterance_id << ": " << e.what() << "\n";
      ++failed;
    }
  }
  save_manifest(a.manifest, m);
  std::cout << "featurized " << written << ", kept " << skipped_existing
            << ", failed " << failed << "\n";
  return failed == 0 ? kExitOk : kExitIo;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string out;
  std::string name;
  std::string model = "shallow";
  std::string mode = "none";
  std::string granularity = "frame";
  std::string seeds = "1,2,3";
  std::string folds = "0,1,2,3";
  std::string precision = "f64";
  Index epochs = 200;
  Index batch_size = 64;
  double lr = 0.001;
  bool normalize_unshaken = false;
  Index jobs = 1;
  std::uint64_t root_seed = default_root_seed();
};

template <class S>
void run_one_training(const ModelSpec& arch, const FeatureStore& store,
                      const FoldSplit& split, HyperParams hp, Index fold,
                      const fs::path& run_dir) {
  auto result = train<S>(arch, store, split, hp, fold);
  fs::create_directories(run_dir);
  save_report((run_dir / "report.tsv").string(), result.report);
  Model<S> best(arch, 0);
  best.restore(result.best_snapshot);
  save_checkpoint((run_dir / "checkpoint.sbck").string(), best);
  std::map<std::string, std::string> echo(result.report.config.begin(),
                                          result.report.config.end());
  echo["precision"] = sizeof(S) == 8 ? "f64" : "f32";
  write_config_echo(run_dir.string(), echo);
}

int cmd_train(const TrainArgs& a) {
  if (a.precision != "f64" && a.precision != "f32")
    throw ValueError(str("unknown precision: ", a.precision));
  const ShakeMode mode = shake_mode_from_string(a.mode);
  const Granularity gran = granularity_from_string(a.granularity);
  ModelSpec arch;
  if (a.model == "shallow")
    arch = build_shallow(mode);
  else if (a.model == "deep")
    arch = build_deep(mode);
  else
    throw ValueError(str("unknown model: ", a.model));

  Manifest m = load_manifest(a.manifest);
  const FeatureStore store(m, fs::path(a.manifest).parent_path().string());

  ActorPartition partition = partition_actors(m, 4, a.root_seed);
  auto folds = make_folds(partition, m);

  const std::string name = a.name.empty() ? a.model + "-" + a.mode : a.name;
  const fs::path root = fs::path(a.out) / name;
  fs::create_directories(root);
  save_partition((root / "partitions.txt").string(), partition);

  const auto fold_list = parse_index_list(a.folds, "folds");
  const auto seed_list = parse_index_list(a.seeds, "seeds");
  for (Index f : fold_list)
    if (f < 0 || f >= static_cast<Index>(folds.size()))
      throw ValueError(str("fold ", f, " outside [0,", folds.size(), ")"));

  write_config_echo(root.string(),
                    {{"command", "train"},
                     {"name", name},
                     {"model", a.model},
                     {"mode", a.mode},
                     {"granularity", a.granularity},
                     {"normalize_unshaken", a.normalize_unshaken ? "1" : "0"},
                     {"epochs", str(a.epochs)},
                     {"batch_size", str(a.batch_size)},
                     {"lr", str(a.lr)},
                     {"seeds", a.seeds},
                     {"folds", a.folds},
                     {"precision", a.precision},
                     {"root_seed", str(a.root_seed)}});

  std::mutex print_mutex;
  std::vector<std::function<void()>> work;
  for (Index f : fold_list)
    for (Index s : seed_list) {
      work.push_back([&, f, s]() {
        HyperParams hp;
        hp.lr = a.lr;
        hp.batch_size = a.batch_size;
        hp.max_epochs = a.epochs;
        hp.mode = mode;
        hp.granularity = gran;
        hp.normalize_unshaken = a.normalize_unshaken;
        hp.seed = static_cast<std::uint64_t>(s);
        const fs::path run_dir = root / str("fold", f) / str("seed", s);
        if (a.precision == "f64")
          run_one_training<double>(arch, store, folds[static_cast<std::size_t>(f)],
                                   hp, f, run_dir);
        else
          run_one_training<float>(arch, store, folds[static_cast<std::size_t>(f)],
                                  hp, f, run_dir);
        const TrainReport rep = load_report((run_dir / "report.tsv").string());
        std::lock_guard<std::mutex> lock(print_mutex);
        std::cout << name << " fold " << f << " seed " << s << ": best valid UA "
                  << rep.valid_ua[static_cast<std::size_t>(rep.best_epoch - 1)]
                  << " at epoch " << rep.best_epoch << " (" << rep.wall_seconds
                  << " s)\n";
      });
    }
  run_jobs(std::move(work), a.jobs);
  std::cout << "reports under " << root.string() << "\n";
  return kExitOk;
}

// ---- sweep-patience ---------------------------------------------------------

struct RunGrid {
  std::string name;
  std::vector<std::pair<std::string, TrainReport>> cells;  // "foldF/seedS" -> report
};

RunGrid load_run_grid(const std::string& dir) {
  RunGrid grid;
  grid.name = fs::path(dir).filename().string();
  const fs::path config = fs::path(dir) / "config.txt";
  if (fs::exists(config)) {
    std::ifstream is(config);
    std::string line;
    while (std::getline(is, line))
      if (line.rfind("name=", 0) == 0) grid.name = line.substr(5);
  }
  std::vector<std::string> keys;
  for (const auto& fold_entry : fs::directory_iterator(dir)) {
    if (!fold_entry.is_directory()) continue;
    const std::string fold_name = fold_entry.path().filename().string();
    if (fold_name.rfind("fold", 0) != 0) continue;
    for (const auto& seed_entry : fs::directory_iterator(fold_entry.path())) {
      if (!seed_entry.is_directory()) continue;
      const fs::path report = seed_entry.path() / "report.tsv";
      if (!fs::exists(report)) continue;
      keys.push_back(fold_name + "/" + seed_entry.path().filename().string());
    }
  }
  std::sort(keys.begin(), keys.end());
  for (const auto& key : keys)
    grid.cells.emplace_back(key,
                            load_report((fs::path(dir) / key / "report.tsv").string()));
  if (grid.cells.empty())
    throw IoError(str("no fold*/seed*/report.tsv under ", dir));
  return grid;
}

struct SweepArgs {
  std::vector<std::string> runs;
  std::string patience = "9,11,13,15,17,19,21,26,31,36,41,46,51";
  std::string out_csv;
};

int cmd_sweep(const SweepArgs& a) {
  if (a.runs.empty()) throw ValueError("sweep-patience needs at least one --run");
  std::vector<std::string> names;
  std::vector<std::vector<TrainReport>> reports;
  std::size_t cell_count = 0;
  for (const auto& dir : a.runs) {
    RunGrid grid = load_run_grid(dir);
    if (!reports.empty() && grid.cells.size() != cell_count)
      throw ConsistencyError(str("run ", dir, " has ", grid.cells.size(),
                                 " fold/seed cells, expected ", cell_count));
    cell_count = grid.cells.size();
    names.push_back(grid.name);
    std::vector<TrainReport> reps;
    for (auto& [key, rep] : grid.cells) reps.push_back(std::move(rep));
    reports.push_back(std::move(reps));
  }
  const auto patience = parse_index_list(a.patience, "patience");
  SweepResult sweep = sweep_patience(names, reports, patience);
  std::cout << sweep_table_text(sweep);
  if (!a.out_csv.empty()) {
    std::ofstream os(a.out_csv);
    if (!os) throw IoError(str("cannot open for writing: ", a.out_csv));
    os << sweep_table_csv(sweep);
    std::cout << "csv written to " << a.out_csv << "\n";
  }
  return kExitOk;
}

// ---- stats ------------------------------------------------------------------

struct StatsArgs {
  std::vector<std::string> runs;
  Index patience = 0;  // 0 selects the final epoch (no early stopping)
};

int cmd_stats(const StatsArgs& a) {
  if (a.runs.size() < 2) throw ValueError("stats needs at least two --run");
  struct Scores {
    std::string name;
    std::vector<std::string> keys;
    std::vector<double> ua, gap;
  };
  std::vector<Scores> all;
  for (const auto& dir : a.runs) {
    RunGrid grid = load_run_grid(dir);
    Scores s;
    s.name = grid.name;
    for (auto& [key, rep] : grid.cells) {
      s.keys.push_back(key);
      if (a.patience > 0) {
        const auto sel = early_stop_select(rep, a.patience);
        s.ua.push_back(sel.valid_ua);
        s.gap.push_back(sel.gap);
      } else {
        s.ua.push_back(rep.valid_ua.back());
        s.gap.push_back(rep.train_ua.back() - rep.valid_ua.back());
      }
    }
    all.push_back(std::move(s));
  }
  for (std::size_t i = 1; i < all.size(); ++i)
    if (all[i].keys != all[0].keys)
      throw ConsistencyError(str("runs ", all[0].name, " and ", all[i].name,
                                 " cover different fold/seed grids"));

  const Index n = static_cast<Index>(all[0].keys.size());
  std::cout << "one-sided paired t-test over " << n
            << " (fold,seed) cells, df=" << (n - 1) << "\n";
  std::cout << "pair: p[valid UA, first higher]  p[gap, first smaller]\n";
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = 0; j < all.size(); ++j) {
      if (i == j) continue;
      std::cout << all[i].name << " vs " << all[j].name << ": ";
      try {
        const auto ua = paired_t_test_one_sided(all[i].ua, all[j].ua);
        std::cout << "ua p=" << ua.p;
      } catch (const ValueError& e) {
        std::cout << "ua degenerate (" << e.what() << ")";
      }
      try {
        const auto gap = paired_t_test_one_sided(all[j].gap, all[i].gap);
        std::cout << "  gap p=" << gap.p;
      } catch (const ValueError&) {
        std::cout << "  gap degenerate";
      }
      std::cout << "\n";
    }
  return kExitOk;
}

// ---- inspect-model ----------------------------------------------------------

int cmd_inspect(const std::string& model, const std::string& mode) {
  const ShakeMode m = shake_mode_from_string(mode);
  ModelSpec spec;
  if (model == "shallow")
    spec = build_shallow(m);
  else if (model == "deep")
    spec = build_deep(m);
  else
    throw ValueError(str("unknown model: ", model));
  std::cout << model_summary(spec);
  if (model == "shallow")
    std::cout << "branch parameters: "
              << branch_parameter_count(spec.stages[0].blocks[0], spec.prelim.out_ch)
              << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sub-band shake-shake experiments on a synthetic emotion corpus"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "generate the synthetic corpus");
  synth_cmd->add_option("--out", synth.out, "corpus directory")->required();
  synth_cmd->add_option("--actors", synth.actors, "number of actors");
  synth_cmd->add_option("--per-class", synth.per_class, "utterances per actor per class");
  synth_cmd->add_option("--noise", synth.noise, "additive noise level");
  synth_cmd->add_option("--min-sec", synth.min_sec, "minimum utterance seconds");
  synth_cmd->add_option("--max-sec", synth.max_sec, "maximum utterance seconds");
  synth_cmd->add_option("--corpus-name", synth.corpus, "corpus tag in the manifest");
  synth_cmd->add_option("--seed", synth.seed,
                        "root seed (default: SUBBAND_SHAKE_SEED or 1234)");

  FeaturizeArgs feat;
  auto* feat_cmd = app.add_subcommand("featurize", "extract features for a manifest");
  feat_cmd->add_option("--manifest", feat.manifest, "manifest.csv path")->required();
  feat_cmd->add_option("--featdir", feat.featdir,
                       "feature directory (default: <manifest dir>/feat)");
  feat_cmd->add_flag("--force", feat.force, "recompute existing feature files");
  feat_cmd->add_flag("--fail-fast", feat.fail_fast, "abort on the first bad WAV");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train a fold/seed grid for one model");
  train_cmd->add_option("--manifest", tr.manifest, "manifest.csv path")->required();
  train_cmd->add_option("--out", tr.out, "runs root directory")->required();
  train_cmd->add_option("--name", tr.name, "run name (default <model>-<mode>)");
  train_cmd->add_option("--model", tr.model, "shallow|deep");
  train_cmd->add_option("--mode", tr.mode, "none|full|upper|lower|both");
  train_cmd->add_option("--granularity", tr.granularity, "batch|sample|frame");
  train_cmd->add_option("--seeds", tr.seeds, "comma list of run seeds");
  train_cmd->add_option("--folds", tr.folds, "comma list of fold indices");
  train_cmd->add_option("--epochs", tr.epochs, "training epochs");
  train_cmd->add_option("--batch-size", tr.batch_size, "utterances per optimizer step");
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate");
  train_cmd->add_option("--precision", tr.precision, "f64|f32");
  train_cmd->add_flag("--normalize-unshaken", tr.normalize_unshaken,
                      "average instead of sum on unshaken sub-bands");
  train_cmd->add_option("--jobs", tr.jobs, "parallel fold/seed workers");
  train_cmd->add_option("--seed", tr.root_seed,
                        "root seed for partitioning (default: SUBBAND_SHAKE_SEED or 1234)");

  SweepArgs sweep;
  auto* sweep_cmd =
      app.add_subcommand("sweep-patience", "early-stopping sweep over finished runs");
  sweep_cmd->add_option("--run", sweep.runs, "run directory (repeatable)")->required();
  sweep_cmd->add_option("--patience", sweep.patience, "comma list of patience values");
  sweep_cmd->add_option("--out-csv", sweep.out_csv, "also write the table as CSV");

  StatsArgs stats;
  auto* stats_cmd = app.add_subcommand("stats", "pairwise one-sided paired t-tests");
  stats_cmd->add_option("--run", stats.runs, "run directory (repeatable)")->required();
  stats_cmd->add_option("--patience", stats.patience,
                        "early-stop patience; 0 uses final-epoch values");

  std::string inspect_model = "shallow", inspect_mode = "both";
  auto* inspect_cmd =
      app.add_subcommand("inspect-model", "print the layer/parameter table");
  inspect_cmd->add_option("--model", inspect_model, "shallow|deep");
  inspect_cmd->add_option("--mode", inspect_mode, "none|full|upper|lower|both");

  std::string unused_config;
  for (auto* sub : {synth_cmd, feat_cmd, train_cmd, sweep_cmd, stats_cmd, inspect_cmd}) {
    sub->add_option("--config", unused_config,
                    "key=value config file; explicit flags override it");
    for (auto* opt : sub->get_options())
      if (opt->get_type_size() == 1 && opt->get_expected_max() == 1)
        opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }

  int rc = kExitOk;
  synth_cmd->callback([&]() { rc = cmd_synth_data(synth); });
  feat_cmd->callback([&]() { rc = cmd_featurize(feat); });
  train_cmd->callback([&]() { rc = cmd_train(tr); });
  sweep_cmd->callback([&]() { rc = cmd_sweep(sweep); });
  stats_cmd->callback([&]() { rc = cmd_stats(stats); });
  inspect_cmd->callback([&]() { rc = cmd_inspect(inspect_model, inspect_mode); });

  try {
    // splice --config FILE contents in front of the explicit flags
    std::vector<std::string> args;
    std::string config_path;
    for (int i = 1; i < argc; ++i) {
      if (std::strcmp(argv[i], "--config") == 0 && i + 1 < argc)
        config_path = argv[++i];
      else
        args.emplace_back(argv[i]);
    }
    if (!config_path.empty()) {
      if (args.empty())
        throw ValueError("--config needs a subcommand");
      const auto cfg = config_file_args(config_path);
      args.insert(args.begin() + 1, cfg.begin(), cfg.end());
    }
    std::reverse(args.begin(), args.end());  // CLI11 vector parse order
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  } catch (const ConsistencyError& e) {
    std::cerr << "consistency error: " << e.what() << "\n";
    return kExitConsistency;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return rc;
}
