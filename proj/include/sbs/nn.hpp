#pragma once

#include <optional>
#include <span>
#include <vector>

#include "sbs/autodiff.hpp"

namespace sbs {

/// Learnable convolution parameters: weights [out_ch, in_ch, H, W] and a
/// per-filter bias [out_ch].
template <class S>
struct ConvParams {
  Var<S> weight;
  Var<S> bias;

  Index out_ch() const { return weight->value.dim(0); }
  Index in_ch() const { return weight->value.dim(1); }
  Index kh() const { return weight->value.dim(2); }
  Index kw() const { return weight->value.dim(3); }
};

/// He-normal initialized conv parameters (zero bias).
template <class S>
ConvParams<S> make_conv_params(Index out_ch, Index in_ch, Index kh, Index kw,
                               RandomStream& rng);

/// Same-padding, stride-1 2D convolution over [B, C, H, W]. Zero fill; for
/// even kernel extents the extra pad row/column sits at the high-index side.
/// Differentiable in the input, the weights and the bias.
template <class S>
Var<S> conv2d(const Var<S>& input, const Var<S>& weight, const Var<S>& bias);

template <class S>
Var<S> conv2d(const Var<S>& input, const ConvParams<S>& params) {
  return conv2d(input, params.weight, params.bias);
}

/// Batch-norm state: learnable gamma/beta plus running statistics updated by
/// exponential moving average in the train phase. Batch and running variance
/// are the biased (population) estimates.
template <class S>
struct BatchNormState {
  Var<S> gamma;        // [C]
  Var<S> beta_shift;   // [C]
  Tensor<S> running_mean;
  Tensor<S> running_var;
  S momentum = S(0.1);
  S epsilon = S(1e-5);
};

template <class S>
BatchNormState<S> make_batchnorm_state(Index channels);

/// Train phase normalizes with batch statistics over (B, H, W) per channel
/// and updates the running stats; eval phase uses the running stats.
template <class S>
Var<S> batchnorm2d(const Var<S>& input, BatchNormState<S>& state, Phase phase);

template <class S>
Var<S> relu(const Var<S>& input);

/// [B, D] x [D, K] (+ bias [K]) -> [B, K].
template <class S>
Var<S> linear(const Var<S>& input, const Var<S>& weights, const Var<S>& bias);

/// Inverted dropout: train phase zeroes entries with probability p and
/// scales survivors by 1/(1-p); eval phase is the identity.
template <class S>
Var<S> dropout(const Var<S>& input, double p, Phase phase, RandomStream& rng);

/// Mean over the time axis of [T, D] -> [D].
template <class S>
Var<S> mean_pool_time(const Var<S>& input);

/// Mean of -log softmax(logits)[label] over the batch, stabilized by
/// max-subtraction. Logits are [B, K].
template <class S>
Var<S> cross_entropy_loss(const Var<S>& logits, std::span<const int> labels);

/// Softmax rows of a plain [B, K] tensor (no graph participation).
template <class S>
Tensor<S> softmax_rows(const Tensor<S>& logits);

/// Adam optimizer state over an ordered parameter list.
template <class S>
struct AdamState {
  Index step_count = 0;
  std::vector<Tensor<S>> first_moment;
  std::vector<Tensor<S>> second_moment;
  S lr = S(0.001);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
};

template <class S>
AdamState<S> make_adam_state(std::span<const Var<S>> params, S lr = S(0.001));

/// One bias-corrected Adam update; reads each parameter's accumulated grad
/// (missing grads count as zero) and updates values in place.
template <class S>
void adam_step(std::span<const Var<S>> params, AdamState<S>& state);

template <class S>
void zero_grads(std::span<const Var<S>> params);

}  // namespace sbs
