#pragma once

#include <span>
#include <string>

#include "sbs/autodiff.hpp"

namespace sbs {

/// Which part of the spectral axis gets stochastic branch mixing.
enum class ShakeMode { None, Full, Upper, Lower, Both };

/// Unit at which independent coefficient draws are made.
enum class Granularity { Batch, Sample, Frame };

std::string to_string(ShakeMode mode);
std::string to_string(Granularity g);
ShakeMode shake_mode_from_string(const std::string& s);
Granularity granularity_from_string(const std::string& s);

/// Uniform draw from the (n-1)-simplex, realized by normalizing n
/// independent unit-rate exponentials. For n = 2 this coincides with
/// (u, 1-u) for u uniform on [0,1].
template <class S>
ArrayX<S> sample_simplex(Index n, RandomStream& rng);

/// Deterministic core of the sampler; exposed for oracle tests.
template <class S>
ArrayX<S> simplex_from_exponentials(std::span<const double> draws);

/// Forward (alpha) and backward (beta) simplex rows, one per granularity
/// cell. Alphas and betas are drawn independently; rows are [cells x N].
template <class S>
struct ShakeCoefficients {
  Tensor<S> alphas;
  Tensor<S> betas;
  Granularity granularity = Granularity::Frame;
  Index batch = 1;   // B samples
  Index frames = 1;  // T frames per sample

  Index cells() const { return alphas.dim(0); }
  Index branch_count() const { return alphas.dim(1); }
};

/// Cells: batch -> 1, sample -> B, frame -> B*T. Every cell holds an
/// independent alpha draw and an independent beta draw (alphas first, then
/// betas, in cell order). Eval phase yields the constant 1/N cell.
template <class S>
ShakeCoefficients<S> make_shake_coefficients(Granularity granularity, Index batch,
                                             Index frames, Index n,
                                             RandomStream& rng, Phase phase);

/// Two halves of a tensor along its spectral axis. Index 0 is the lowest
/// frequency; lower covers [0, floor(F/2)), upper covers [floor(F/2), F).
template <class S>
struct SubbandPair {
  Tensor<S> upper;
  Tensor<S> lower;
  Dims source_dims;
  Index axis = 0;
};

template <class S>
SubbandPair<S> split_subbands(const Tensor<S>& x, Index spectral_axis);

/// Inverse of split_subbands: places each half back at its source indices.
template <class S>
Tensor<S> merge_subbands(const SubbandPair<S>& pair);

/// Stochastic branch mix: the train-phase forward value is sum_n alpha_n B_n
/// while the backward pass routes beta_n * g into branch n; in eval phase
/// the coefficients are the constant 1/N so the result is the branch mean.
/// Branch tensors are [F, C, H, W] with F = coeffs.batch * coeffs.frames.
template <class S>
Var<S> shake_aggregate(std::span<const Var<S>> branches,
                       const ShakeCoefficients<S>& coeffs, Phase phase);

/// Residual merge of a block: shortcut plus the (optionally band-split)
/// branch combination. `band_coeffs` carries one entry for Full/Upper/Lower
/// and two for Both (upper band first, then lower); None ignores it.
/// The unshaken sub-band of Upper/Lower is the literal branch sum;
/// `normalize_unshaken` divides it by N instead.
template <class S>
Var<S> residual_shake_block(const Var<S>& shortcut,
                            std::span<const Var<S>> branches, ShakeMode mode,
                            std::span<const ShakeCoefficients<S>> band_coeffs,
                            Phase phase, bool normalize_unshaken = false);

}  // namespace sbs
