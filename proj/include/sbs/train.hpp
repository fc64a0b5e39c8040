#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "sbs/data.hpp"
#include "sbs/model.hpp"

namespace sbs {

struct HyperParams {
  double lr = 0.001;
  Index batch_size = 64;
  Index max_epochs = 200;
  ShakeMode mode = ShakeMode::None;
  Granularity granularity = Granularity::Frame;
  bool normalize_unshaken = false;
  std::uint64_t seed = 1;
};

/// Per-epoch curves plus the configuration that produced them.
struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> train_ua;
  std::vector<double> valid_ua;
  Index best_epoch = 0;  // 1-based; earliest epoch with the highest valid UA
  double wall_seconds = 0.0;
  std::map<std::string, std::string> config;

  Index epochs() const { return static_cast<Index>(valid_ua.size()); }
};

void save_report(const std::string& path, const TrainReport& report);
TrainReport load_report(const std::string& path);

/// In-memory feature cache for a manifest (32-bit storage, as on disk).
class FeatureStore {
public:
  FeatureStore(const Manifest& manifest, const std::string& base_dir);

  Index size() const { return static_cast<Index>(features_.size()); }
  const Tensor<float>& features(Index row) const;
  int label(Index row) const { return labels_[static_cast<std::size_t>(row)]; }

private:
  std::vector<Tensor<float>> features_;
  std::vector<int> labels_;
  std::vector<std::string> ids_;
};

template <class S>
struct TrainResult {
  TrainReport report;
  std::vector<Tensor<S>> best_snapshot;  // Model::restore order
};

/// Trains one fold: shuffled mini-batches with per-utterance gradient
/// accumulation, Adam updates, per-epoch train and validation UA. Train UA
/// comes from the training-phase forward passes (so early gaps can be
/// negative); validation runs in eval phase. Fully deterministic given
/// hp.seed and the fold index.
template <class S>
TrainResult<S> train(const ModelSpec& arch, const FeatureStore& store,
                     const FoldSplit& fold, const HyperParams& hp, Index fold_index);

/// Mean over classes present in `truth` of per-class recall, times 100.
double unweighted_accuracy(std::span<const int> preds, std::span<const int> truth);

struct EarlyStopSelection {
  Index selected_epoch = 0;  // 1-based
  double valid_ua = 0.0;
  double train_ua = 0.0;
  double gap = 0.0;  // train UA - valid UA at the selected epoch
  Index stopped_epoch = 0;
  bool truncated = false;  // curve ended before patience ran out
};

/// Stops at the first epoch with `patience` non-improving epochs after the
/// incumbent best; returns the incumbent best epoch's metrics. Ties resolve
/// to the earliest best epoch.
EarlyStopSelection early_stop_select(const TrainReport& report, Index patience);

struct SweepResult {
  std::vector<std::string> model_names;
  std::vector<Index> patience;
  std::vector<std::vector<double>> mean_valid_ua;  // [model][patience]
  std::vector<std::vector<double>> mean_gap;
};

/// Applies early_stop_select per report per patience and averages across
/// reports (folds, and seeds when several are present).
SweepResult sweep_patience(std::span<const std::string> model_names,
                           const std::vector<std::vector<TrainReport>>& reports,
                           std::span<const Index> patience);

std::string sweep_table_text(const SweepResult& sweep);
std::string sweep_table_csv(const SweepResult& sweep);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  Index df = 0;
};

/// One-sided paired t-test of H1: mean(a - b) > 0. Uses the n-1 variance
/// divisor; p is the upper-tail Student-t probability with df = n - 1.
TTestResult paired_t_test_one_sided(std::span<const double> a,
                                    std::span<const double> b);

/// P(T > t) for Student's t with `df` degrees of freedom.
double student_t_upper_tail(double t, double df);

}  // namespace sbs
