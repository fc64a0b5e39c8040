#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sbs/nn.hpp"
#include "sbs/shake.hpp"

namespace sbs {

struct ConvGeom {
  Index out_ch = 1;
  Index kh = 1;
  Index kw = 1;
};

/// Ordered conv geometries of one residual branch; every conv is followed by
/// batch normalization, with ReLU between conv/BN pairs (not after the last).
/// All N branches of a block share one spec.
struct BranchSpec {
  std::vector<ConvGeom> convs;
};

struct BlockSpec {
  Index branch_count = 2;
  BranchSpec branch;
  ShakeMode shake_mode = ShakeMode::None;
  bool projection = false;  // 1x1 conv with bias; present iff channels change
};

struct StageSpec {
  std::string name;
  std::vector<BlockSpec> blocks;
};

enum class HeadKind {
  FlattenMlp,             // flatten, temporal mean-pool, dropout/linear stack
  GroupedAverageAffine,   // average over time and frequency groups, affine
};

struct ModelSpec {
  std::string name;
  ConvGeom prelim;
  bool prelim_batchnorm_relu = true;
  std::vector<StageSpec> stages;
  HeadKind head = HeadKind::FlattenMlp;
  Index class_count = 4;
  Index input_ctx = 16;    // context rows per spliced frame
  Index input_bins = 257;  // spectral bins per spliced frame
  Index freq_groups = 8;   // grouped-average head
  Index mlp_hidden = 256;  // flatten head
  double dropout_pool = 0.5;
  double dropout_hidden = 0.25;
  ShakeMode shake_mode = ShakeMode::None;
};

/// Table of learnable-parameter counts, one row per named stage plus head
/// entries; running statistics are excluded.
struct ParameterCounts {
  std::vector<std::pair<std::string, Index>> stages;
  Index total = 0;

  Index stage(const std::string& name) const;
};

ModelSpec build_shallow(ShakeMode mode);
ModelSpec build_deep(ShakeMode mode);

ParameterCounts count_parameters(const ModelSpec& spec);

/// Learnable scalars in one residual branch of the given block spec.
Index branch_parameter_count(const BlockSpec& block, Index in_channels);

/// Layer/parameter summary table as text.
std::string model_summary(const ModelSpec& spec);

/// Per-forward context: phase, shake configuration and the seeds that make
/// coefficient and dropout draws reproducible. `shake_step_seed` is shared
/// by every forward of one optimizer step (batch granularity draws from it);
/// `sample_seed` is unique per utterance forward.
struct ForwardCtx {
  Phase phase = Phase::Eval;
  Granularity granularity = Granularity::Frame;
  bool normalize_unshaken = false;
  std::uint64_t shake_step_seed = 0;
  std::uint64_t sample_seed = 0;
};

template <class S>
struct BranchNet {
  std::vector<ConvParams<S>> convs;
  std::vector<BatchNormState<S>> bns;

  Var<S> forward(Var<S> x, Phase phase);
};

template <class S>
struct ResidualBlockNet {
  std::vector<BranchNet<S>> branches;
  std::optional<ConvParams<S>> projection;
  ShakeMode mode = ShakeMode::None;

  Var<S> forward(const Var<S>& x, const ForwardCtx& ctx, Index block_ordinal);
};

/// A runnable network: maps one utterance's spliced-frame sequence
/// [T, ctx, bins] to class logits [1, K].
template <class S>
class Model {
public:
  Model(ModelSpec spec, std::uint64_t init_seed);

  const ModelSpec& spec() const { return spec_; }

  Var<S> forward(const Tensor<S>& frames, const ForwardCtx& ctx);

  std::vector<Var<S>> parameters() const;
  std::vector<std::pair<std::string, Var<S>>> named_parameters() const;
  /// Running statistics and other non-learnable state, for checkpoints.
  std::vector<std::pair<std::string, Tensor<S>*>> named_buffers();

  /// Copies of all parameter values, in parameters() order.
  std::vector<Tensor<S>> snapshot() const;
  void restore(const std::vector<Tensor<S>>& values);

private:
  ModelSpec spec_;
  ConvParams<S> prelim_;
  std::optional<BatchNormState<S>> prelim_bn_;
  std::vector<std::vector<ResidualBlockNet<S>>> stages_;
  // flatten head
  Var<S> fc1_w_, fc1_b_, fc2_w_, fc2_b_, out_w_, out_b_;
  // grouped-average head
  Var<S> affine_w_;
};

template <class S>
void save_checkpoint(const std::string& path, Model<S>& model);

template <class S>
void load_checkpoint(const std::string& path, Model<S>& model);

/// Counts from a materialized model; must agree with the spec-level count.
template <class S>
ParameterCounts count_parameters(const Model<S>& model);

}  // namespace sbs
