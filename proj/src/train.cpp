#include "sbs/train.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>

namespace sbs {

namespace fs = std::filesystem;

void save_report(const std::string& path, const TrainReport& report) {
  std::ofstream os(path);
  if (!os) throw IoError(str("cannot open for writing: ", path));
  for (const auto& [k, v] : report.config) os << "# " << k << "=" << v << "\n";
  os << "# best_epoch=" << report.best_epoch << "\n";
  os << "# wall_seconds=" << report.wall_seconds << "\n";
  os << "# columns: epoch train_loss train_ua valid_ua\n";
  os << std::setprecision(17);
  for (Index e = 0; e < report.epochs(); ++e)
    os << (e + 1) << ' ' << report.train_loss[static_cast<std::size_t>(e)] << ' '
       << report.train_ua[static_cast<std::size_t>(e)] << ' '
       << report.valid_ua[static_cast<std::size_t>(e)] << '\n';
  if (!os) throw IoError(str("short write to ", path));
}

TrainReport load_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(str("cannot open for reading: ", path));
  TrainReport r;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::size_t eq = line.find('=');
      if (eq != std::string::npos && line.size() > 2) {
        std::string key = line.substr(2, eq - 2);
        std::string val = line.substr(eq + 1);
        if (key == "best_epoch")
          r.best_epoch = std::stoll(val);
        else if (key == "wall_seconds")
          r.wall_seconds = std::stod(val);
        else
          r.config[key] = val;
      }
      continue;
    }
    std::istringstream row(line);
    Index epoch = 0;
    double loss = 0, tua = 0, vua = 0;
    if (!(row >> epoch >> loss >> tua >> vua))
      throw IoError(str("bad report row in ", path, ": ", line));
    r.train_loss.push_back(loss);
    r.train_ua.push_back(tua);
    r.valid_ua.push_back(vua);
  }
  if (r.valid_ua.empty()) throw IoError(str("report has no epochs: ", path));
  return r;
}

FeatureStore::FeatureStore(const Manifest& manifest, const std::string& base_dir) {
  features_.reserve(manifest.size());
  for (const auto& rec : manifest) {
    if (rec.feature_path.empty())
      throw IoError(str("no features for utterance ", rec.utterance_id,
                        " (empty feature_path; run featurize first)"));
    fs::path p(rec.feature_path);
    if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
    try {
      features_.push_back(load_features(p.string()));
    } catch (const IoError& e) {
      throw IoError(str("utterance ", rec.utterance_id, ": ", e.what()));
    }
    labels_.push_back(label_index(rec.label));
    ids_.push_back(rec.utterance_id);
  }
}

const Tensor<float>& FeatureStore::features(Index row) const {
  return features_[static_cast<std::size_t>(row)];
}

double unweighted_accuracy(std::span<const int> preds, std::span<const int> truth) {
  if (preds.size() != truth.size())
    throw ValueError(str("unweighted_accuracy: ", preds.size(), " preds vs ",
                         truth.size(), " labels"));
  if (truth.empty()) throw ValueError("unweighted_accuracy: empty input");
  std::map<int, std::pair<Index, Index>> per_class;  // label -> (correct, total)
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto& [correct, total] = per_class[truth[i]];
    total += 1;
    if (preds[i] == truth[i]) correct += 1;
  }
  double recall_sum = 0.0;
  for (const auto& [label, ct] : per_class)
    recall_sum += double(ct.first) / double(ct.second);
  return 100.0 * recall_sum / double(per_class.size());
}

namespace {

template <class S>
int argmax_row(const Tensor<S>& logits) {
  int best = 0;
  for (Index k = 1; k < logits.size(); ++k)
    if (logits[k] > logits[best]) best = static_cast<int>(k);
  return best;
}

}  // namespace

template <class S>
TrainResult<S> train(const ModelSpec& arch, const FeatureStore& store,
                     const FoldSplit& fold, const HyperParams& hp,
                     Index fold_index) {
  if (hp.batch_size < 1 || hp.max_epochs < 1)
    throw ValueError("train: batch_size and max_epochs must be >= 1");
  if (fold.train.empty() || fold.valid.empty())
    throw ValueError("train: empty train or validation split");

  const auto t0 = std::chrono::steady_clock::now();

  const std::uint64_t init_seed = derive_seed(hp.seed, "init-root", fold_index);
  const std::uint64_t run_seed = derive_seed(hp.seed, "run", fold_index);

  Model<S> model(arch, init_seed);
  auto params = model.parameters();
  AdamState<S> adam = make_adam_state<S>(params, static_cast<S>(hp.lr));

  TrainResult<S> result;
  TrainReport& report = result.report;
  report.config["model"] = arch.name;
  report.config["mode"] = to_string(hp.mode);
  report.config["granularity"] = to_string(hp.granularity);
  report.config["normalize_unshaken"] = hp.normalize_unshaken ? "1" : "0";
  report.config["lr"] = str(hp.lr);
  report.config["batch_size"] = str(hp.batch_size);
  report.config["epochs"] = str(hp.max_epochs);
  report.config["seed"] = str(hp.seed);
  report.config["fold"] = str(fold_index);

  std::vector<Index> order(fold.train.begin(), fold.train.end());
  std::vector<int> train_truth, train_preds, valid_truth, valid_preds;
  double best_ua = -1.0;
  Index total_steps = 0;

  for (Index epoch = 0; epoch < hp.max_epochs; ++epoch) {
    RandomStream shuffle_rng(derive_seed(run_seed, "order", epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

    train_truth.clear();
    train_preds.clear();
    double loss_sum = 0.0;

    const Index n_train = static_cast<Index>(order.size());
    Index pos = 0, step = 0;
    while (pos < n_train) {
      const Index batch = std::min(hp.batch_size, n_train - pos);
      const std::uint64_t step_seed = derive_seed(run_seed, "step", epoch, step);
      zero_grads<S>(params);
      for (Index i = 0; i < batch; ++i) {
        const Index row = order[static_cast<std::size_t>(pos + i)];
        const Tensor<S> frames = store.features(row).template cast<S>();
        ForwardCtx ctx;
        ctx.phase = Phase::Train;
        ctx.granularity = hp.granularity;
        ctx.normalize_unshaken = hp.normalize_unshaken;
        ctx.shake_step_seed = step_seed;
        ctx.sample_seed = derive_seed(run_seed, "sample", epoch, pos + i);
        Var<S> logits = model.forward(frames, ctx);
        const int label = store.label(row);
        const int labels[1] = {label};
        Var<S> loss = cross_entropy_loss(logits, std::span<const int>(labels, 1));
        loss_sum += static_cast<double>(loss->value[0]);
        backward(loss, S(1) / S(batch));
        train_truth.push_back(label);
        train_preds.push_back(argmax_row(logits->value));
      }
      adam_step<S>(params, adam);
      pos += batch;
      ++step;
      ++total_steps;
    }

    // validation pass, eval phase
    valid_truth.clear();
    valid_preds.clear();
    for (Index row : fold.valid) {
      const Tensor<S> frames = store.features(row).template cast<S>();
      ForwardCtx ctx;  // eval defaults
      Var<S> logits = model.forward(frames, ctx);
      valid_truth.push_back(store.label(row));
      valid_preds.push_back(argmax_row(logits->value));
    }

    report.train_loss.push_back(loss_sum / double(n_train));
    report.train_ua.push_back(unweighted_accuracy(train_preds, train_truth));
    report.valid_ua.push_back(unweighted_accuracy(valid_preds, valid_truth));

    if (report.valid_ua.back() > best_ua) {
      best_ua = report.valid_ua.back();
      report.best_epoch = epoch + 1;
      result.best_snapshot = model.snapshot();
    }
  }

  report.config["adam_steps"] = str(total_steps);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

EarlyStopSelection early_stop_select(const TrainReport& report, Index patience) {
  if (patience < 1) throw ValueError("early_stop_select: patience must be >= 1");
  const Index n = report.epochs();
  if (n < 1) throw ValueError("early_stop_select: empty report");

  EarlyStopSelection sel;
  Index best = 0;
  sel.truncated = true;
  sel.stopped_epoch = n;
  for (Index e = 1; e < n; ++e) {
    if (report.valid_ua[static_cast<std::size_t>(e)] >
        report.valid_ua[static_cast<std::size_t>(best)]) {
      best = e;
    } else if (e - best == patience) {
      sel.stopped_epoch = e + 1;
      sel.truncated = false;
      break;
    }
  }
  sel.selected_epoch = best + 1;
  sel.valid_ua = report.valid_ua[static_cast<std::size_t>(best)];
  sel.train_ua = report.train_ua[static_cast<std::size_t>(best)];
  sel.gap = sel.train_ua - sel.valid_ua;
  return sel;
}

SweepResult sweep_patience(std::span<const std::string> model_names,
                           const std::vector<std::vector<TrainReport>>& reports,
                           std::span<const Index> patience) {
  if (model_names.size() != reports.size())
    throw ConsistencyError(str("sweep_patience: ", model_names.size(),
                               " names for ", reports.size(), " report sets"));
  if (reports.empty() || patience.empty())
    throw ValueError("sweep_patience: need at least one model and one patience");
  for (std::size_t i = 1; i < patience.size(); ++i)
    if (patience[i] <= patience[i - 1])
      throw ValueError("sweep_patience: patience list must be strictly increasing");
  const std::size_t folds = reports[0].size();
  if (folds == 0) throw ValueError("sweep_patience: no reports");
  for (std::size_t m = 1; m < reports.size(); ++m)
    if (reports[m].size() != folds)
      throw ConsistencyError(str("sweep_patience: model ", model_names[m], " has ",
                                 reports[m].size(), " reports, expected ", folds));

  SweepResult out;
  out.model_names.assign(model_names.begin(), model_names.end());
  out.patience.assign(patience.begin(), patience.end());
  for (std::size_t m = 0; m < reports.size(); ++m) {
    std::vector<double> ua_row, gap_row;
    for (Index p : patience) {
      double ua = 0.0, gap = 0.0;
      for (const auto& rep : reports[m]) {
        const EarlyStopSelection sel = early_stop_select(rep, p);
        ua += sel.valid_ua;
        gap += sel.gap;
      }
      ua_row.push_back(ua / double(folds));
      gap_row.push_back(gap / double(folds));
    }
    out.mean_valid_ua.push_back(std::move(ua_row));
    out.mean_gap.push_back(std::move(gap_row));
  }
  return out;
}

namespace {

std::string format_cell(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

std::string sweep_block(const SweepResult& s,
                        const std::vector<std::vector<double>>& values,
                        const std::string& title) {
  std::ostringstream os;
  os << title << "\n";
  os << std::left << std::setw(12) << "model";
  for (Index p : s.patience) os << std::right << std::setw(9) << p;
  os << "\n";
  for (std::size_t m = 0; m < s.model_names.size(); ++m) {
    os << std::left << std::setw(12) << s.model_names[m];
    for (std::size_t j = 0; j < s.patience.size(); ++j)
      os << std::right << std::setw(9) << format_cell(values[m][j]);
    os << "\n";
  }
  return os.str();
}

}  // namespace

std::string sweep_table_text(const SweepResult& sweep) {
  return sweep_block(sweep, sweep.mean_valid_ua,
                     "validation UA (%) by patience") +
         "\n" + sweep_block(sweep, sweep.mean_gap, "train-validation UA gap (%) by patience");
}

std::string sweep_table_csv(const SweepResult& sweep) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "metric,model";
  for (Index p : sweep.patience) os << ",p" << p;
  os << "\n";
  for (std::size_t m = 0; m < sweep.model_names.size(); ++m) {
    os << "valid_ua," << sweep.model_names[m];
    for (double v : sweep.mean_valid_ua[m]) os << ',' << v;
    os << "\n";
  }
  for (std::size_t m = 0; m < sweep.model_names.size(); ++m) {
    os << "gap," << sweep.model_names[m];
    for (double v : sweep.mean_gap[m]) os << ',' << v;
    os << "\n";
  }
  return os.str();
}

// ---- Student-t upper tail -------------------------------------------------

namespace {

// Regularized incomplete beta via the textbook continued fraction with
// modified Lentz evaluation.
double incomplete_beta_cf(double x, double a, double b) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 200; ++m) {
    const double m2 = 2.0 * m;
    double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double mult = d * c;
    h *= mult;
    if (std::abs(mult - 1.0) < eps) break;
  }
  return h;
}

double regularized_incomplete_beta(double x, double a, double b) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0))
    return std::exp(ln_front) * incomplete_beta_cf(x, a, b) / a;
  return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(b) - std::lgamma(a) +
                        b * std::log1p(-x) + a * std::log(x)) *
                   incomplete_beta_cf(1.0 - x, b, a) / b;
}

}  // namespace

double student_t_upper_tail(double t, double df) {
  if (df <= 0.0) throw ValueError("student_t_upper_tail: df must be positive");
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const double x = df / (df + t * t);
  const double half_tail = 0.5 * regularized_incomplete_beta(x, df / 2.0, 0.5);
  return t >= 0.0 ? half_tail : 1.0 - half_tail;
}

TTestResult paired_t_test_one_sided(std::span<const double> a,
                                    std::span<const double> b) {
  if (a.size() != b.size())
    throw ValueError(str("paired_t_test: ", a.size(), " vs ", b.size(), " scores"));
  const Index n = static_cast<Index>(a.size());
  if (n < 2) throw ValueError("paired_t_test: need at least 2 pairs");

  double mean = 0.0;
  for (Index i = 0; i < n; ++i) mean += a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)];
  mean /= double(n);
  double ss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double d = a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / double(n - 1));
  if (sd == 0.0)
    throw ValueError("paired_t_test: degenerate variance (all differences equal)");

  TTestResult r;
  r.df = n - 1;
  r.t = mean / (sd / std::sqrt(double(n)));
  r.p = student_t_upper_tail(r.t, double(r.df));
  return r;
}

template TrainResult<float> train<float>(const ModelSpec&, const FeatureStore&,
                                         const FoldSplit&, const HyperParams&, Index);
template TrainResult<double> train<double>(const ModelSpec&, const FeatureStore&,
                                           const FoldSplit&, const HyperParams&, Index);

}  // namespace sbs
