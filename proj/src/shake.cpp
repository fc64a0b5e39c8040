#include "sbs/shake.hpp"

#include <algorithm>

namespace sbs {

std::string to_string(ShakeMode mode) {
  switch (mode) {
    case ShakeMode::None: return "none";
    case ShakeMode::Full: return "full";
    case ShakeMode::Upper: return "upper";
    case ShakeMode::Lower: return "lower";
    case ShakeMode::Both: return "both";
  }
  return "?";
}

std::string to_string(Granularity g) {
  switch (g) {
    case Granularity::Batch: return "batch";
    case Granularity::Sample: return "sample";
    case Granularity::Frame: return "frame";
  }
  return "?";
}

ShakeMode shake_mode_from_string(const std::string& s) {
  if (s == "none") return ShakeMode::None;
  if (s == "full") return ShakeMode::Full;
  if (s == "upper") return ShakeMode::Upper;
  if (s == "lower") return ShakeMode::Lower;
  if (s == "both") return ShakeMode::Both;
  throw ValueError(str("unknown shake mode: ", s));
}

Granularity granularity_from_string(const std::string& s) {
  if (s == "batch") return Granularity::Batch;
  if (s == "sample") return Granularity::Sample;
  if (s == "frame") return Granularity::Frame;
  throw ValueError(str("unknown granularity: ", s));
}

template <class S>
ArrayX<S> simplex_from_exponentials(std::span<const double> draws) {
  const Index n = static_cast<Index>(draws.size());
  if (n < 1) throw ValueError("simplex: branch count must be >= 1");
  if (n == 1) return ArrayX<S>::Constant(1, S(1));
  double total = 0.0;
  for (double d : draws) total += d;
  ArrayX<S> out(n);
  if (total <= 0.0) {
    out.setConstant(S(1.0 / double(n)));
    return out;
  }
  for (Index i = 0; i < n; ++i)
    out[i] = static_cast<S>(draws[static_cast<std::size_t>(i)] / total);
  return out;
}

template <class S>
ArrayX<S> sample_simplex(Index n, RandomStream& rng) {
  if (n < 1) throw ValueError("sample_simplex: branch count must be >= 1");
  std::vector<double> draws(static_cast<std::size_t>(n));
  for (auto& d : draws) d = rng.exponential();
  return simplex_from_exponentials<S>(draws);
}

template <class S>
ShakeCoefficients<S> make_shake_coefficients(Granularity granularity, Index batch,
                                             Index frames, Index n,
                                             RandomStream& rng, Phase phase) {
  if (batch < 1 || frames < 1)
    throw ValueError(str("make_shake_coefficients: B, T must be >= 1, got B=",
                         batch, " T=", frames));
  if (n < 1) throw ValueError("make_shake_coefficients: branch count must be >= 1");

  ShakeCoefficients<S> c;
  c.granularity = granularity;
  c.batch = batch;
  c.frames = frames;

  Index cells = 1;
  switch (granularity) {
    case Granularity::Batch: cells = 1; break;
    case Granularity::Sample: cells = batch; break;
    case Granularity::Frame: cells = batch * frames; break;
  }

  if (phase == Phase::Eval) {
    c.alphas = Tensor<S>::full({1, n}, S(1.0 / double(n)));
    c.betas = c.alphas;
    return c;
  }

  c.alphas = Tensor<S>::zeros({cells, n});
  c.betas = Tensor<S>::zeros({cells, n});
  for (Index cell = 0; cell < cells; ++cell)
    c.alphas.raw().segment(cell * n, n) = sample_simplex<S>(n, rng);
  for (Index cell = 0; cell < cells; ++cell)
    c.betas.raw().segment(cell * n, n) = sample_simplex<S>(n, rng);
  return c;
}

template <class S>
SubbandPair<S> split_subbands(const Tensor<S>& x, Index spectral_axis) {
  if (spectral_axis < 0 || spectral_axis >= x.rank())
    throw ValueError(str("split_subbands: axis ", spectral_axis,
                         " out of rank ", x.rank()));
  const Index F = x.dim(spectral_axis);
  if (F < 2)
    throw ValueError(str("split_subbands: band too narrow, spectral axis has ",
                         F, " bin(s), need >= 2"));
  const Index mid = F / 2;

  Index outer = 1, inner = 1;
  for (Index i = 0; i < spectral_axis; ++i) outer *= x.dim(i);
  for (Index i = spectral_axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  Dims low_dims = x.dims(), up_dims = x.dims();
  low_dims[static_cast<std::size_t>(spectral_axis)] = mid;
  up_dims[static_cast<std::size_t>(spectral_axis)] = F - mid;

  SubbandPair<S> pair;
  pair.lower = Tensor<S>::zeros(low_dims);
  pair.upper = Tensor<S>::zeros(up_dims);
  pair.source_dims = x.dims();
  pair.axis = spectral_axis;
  for (Index o = 0; o < outer; ++o) {
    pair.lower.raw().segment(o * mid * inner, mid * inner) =
        x.raw().segment(o * F * inner, mid * inner);
    pair.upper.raw().segment(o * (F - mid) * inner, (F - mid) * inner) =
        x.raw().segment(o * F * inner + mid * inner, (F - mid) * inner);
  }
  return pair;
}

template <class S>
Tensor<S> merge_subbands(const SubbandPair<S>& pair) {
  const Index F = pair.source_dims[static_cast<std::size_t>(pair.axis)];
  const Index mid = F / 2;
  Index outer = 1, inner = 1;
  for (Index i = 0; i < pair.axis; ++i) outer *= pair.source_dims[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(pair.axis) + 1; i < pair.source_dims.size(); ++i)
    inner *= pair.source_dims[i];
  Tensor<S> out = Tensor<S>::zeros(pair.source_dims);
  for (Index o = 0; o < outer; ++o) {
    out.raw().segment(o * F * inner, mid * inner) =
        pair.lower.raw().segment(o * mid * inner, mid * inner);
    out.raw().segment(o * F * inner + mid * inner, (F - mid) * inner) =
        pair.upper.raw().segment(o * (F - mid) * inner, (F - mid) * inner);
  }
  return out;
}

namespace {

// Frame index -> coefficient cell, for tensors laid out [B*T, C, H, W].
inline Index cell_of_frame(Granularity g, Index frame, Index frames_per_sample) {
  switch (g) {
    case Granularity::Batch: return 0;
    case Granularity::Sample: return frame / frames_per_sample;
    case Granularity::Frame: return frame;
  }
  return 0;
}

template <class S>
void check_branches(std::span<const Var<S>> branches) {
  if (branches.empty()) throw ValueError("shake: need at least one branch");
  for (std::size_t i = 1; i < branches.size(); ++i)
    if (!branches[i]->value.same_dims(branches[0]->value))
      throw ShapeError(str("shake: branch ", i, " dims ",
                           dims_to_string(branches[i]->value.dims()),
                           " differ from branch 0 ",
                           dims_to_string(branches[0]->value.dims())));
}

}  // namespace

template <class S>
Var<S> shake_aggregate(std::span<const Var<S>> branches,
                       const ShakeCoefficients<S>& coeffs, Phase phase) {
  check_branches(branches);
  const Index N = static_cast<Index>(branches.size());
  if (coeffs.branch_count() != N)
    throw ShapeError(str("shake_aggregate: coefficients cover ",
                         coeffs.branch_count(), " branches, got ", N));
  const Tensor<S>& b0 = branches[0]->value;
  const Index F = b0.rank() >= 1 ? b0.dim(0) : 1;
  const bool eval_like = coeffs.cells() == 1;
  if (!eval_like && F != coeffs.batch * coeffs.frames)
    throw ShapeError(str("shake_aggregate: tensors carry ", F,
                         " frames but coefficients were made for ",
                         coeffs.batch * coeffs.frames));
  (void)phase;

  const Index stride = b0.size() / F;
  Tensor<S> out = Tensor<S>::zeros(b0.dims());
  for (Index f = 0; f < F; ++f) {
    const Index cell = eval_like ? 0 : cell_of_frame(coeffs.granularity, f, coeffs.frames);
    auto seg = out.raw().segment(f * stride, stride);
    for (Index n = 0; n < N; ++n)
      seg += coeffs.alphas.at({cell, n}) *
             branches[static_cast<std::size_t>(n)]->value.raw().segment(f * stride, stride);
  }

  std::vector<Var<S>> parents(branches.begin(), branches.end());
  auto node = make_node(std::move(out), std::move(parents));
  if (node->requires_grad) {
    auto betas = std::make_shared<Tensor<S>>(coeffs.betas);
    const Granularity gran = coeffs.granularity;
    const Index frames_per_sample = coeffs.frames;
    std::vector<Var<S>> brs(branches.begin(), branches.end());
    node->backprop = [brs, betas, gran, frames_per_sample, F, stride, N,
                      eval_like](Node<S>& self) {
      for (Index n = 0; n < N; ++n) {
        const auto& br = brs[static_cast<std::size_t>(n)];
        if (!br->requires_grad) continue;
        if (!br->has_grad()) br->grad = Tensor<S>::zeros(br->value.dims());
        for (Index f = 0; f < F; ++f) {
          const Index cell = eval_like ? 0 : cell_of_frame(gran, f, frames_per_sample);
          br->grad.raw().segment(f * stride, stride) +=
              betas->at({cell, n}) * self.grad.raw().segment(f * stride, stride);
        }
      }
    };
  }
  return node;
}

template <class S>
Var<S> residual_shake_block(const Var<S>& shortcut,
                            std::span<const Var<S>> branches, ShakeMode mode,
                            std::span<const ShakeCoefficients<S>> band_coeffs,
                            Phase phase, bool normalize_unshaken) {
  check_branches(branches);
  if (!branches[0]->value.same_dims(shortcut->value))
    throw ShapeError(str("residual_shake_block: shortcut dims ",
                         dims_to_string(shortcut->value.dims()),
                         " differ from branch dims ",
                         dims_to_string(branches[0]->value.dims())));
  const Index N = static_cast<Index>(branches.size());

  auto branch_sum = [&](auto&& slicer) -> Var<S> {
    Var<S> acc = slicer(branches[0]);
    for (Index n = 1; n < N; ++n) acc = add(acc, slicer(branches[static_cast<std::size_t>(n)]));
    if (normalize_unshaken) acc = scale(acc, S(1.0 / double(N)));
    return acc;
  };
  auto identity = [](const Var<S>& v) { return v; };

  const Index needed = mode == ShakeMode::Both ? 2
                       : (mode == ShakeMode::None ? 0 : 1);
  if (static_cast<Index>(band_coeffs.size()) < needed)
    throw ValueError(str("residual_shake_block: mode ", to_string(mode),
                         " needs ", needed, " coefficient set(s), got ",
                         band_coeffs.size()));

  const Index F = branches[0]->value.dims().back();
  if ((mode == ShakeMode::Upper || mode == ShakeMode::Lower ||
       mode == ShakeMode::Both) &&
      F < 2)
    throw ValueError(str("residual_shake_block: band too narrow, spectral axis has ",
                         F, " bin(s), need >= 2 for mode ", to_string(mode)));
  const Index mid = F / 2;

  auto lower_of = [mid](const Var<S>& v) { return slice_last(v, Index(0), mid); };
  auto upper_of = [mid, F](const Var<S>& v) { return slice_last(v, mid, F - mid); };

  auto aggregate_band = [&](auto&& slicer, const ShakeCoefficients<S>& c) -> Var<S> {
    std::vector<Var<S>> parts;
    parts.reserve(static_cast<std::size_t>(N));
    for (const auto& b : branches) parts.push_back(slicer(b));
    return shake_aggregate(std::span<const Var<S>>(parts), c, phase);
  };

  Var<S> merged;
  switch (mode) {
    case ShakeMode::None:
      merged = branch_sum(identity);
      break;
    case ShakeMode::Full:
      merged = shake_aggregate(branches, band_coeffs[0], phase);
      break;
    case ShakeMode::Upper:
      merged = concat_last(branch_sum(lower_of),
                           aggregate_band(upper_of, band_coeffs[0]));
      break;
    case ShakeMode::Lower:
      merged = concat_last(aggregate_band(lower_of, band_coeffs[0]),
                           branch_sum(upper_of));
      break;
    case ShakeMode::Both:
      merged = concat_last(aggregate_band(lower_of, band_coeffs[1]),
                           aggregate_band(upper_of, band_coeffs[0]));
      break;
  }
  return add(shortcut, merged);
}

#define SBS_INSTANTIATE(S)                                                       \
  template ArrayX<S> simplex_from_exponentials<S>(std::span<const double>);      \
  template ArrayX<S> sample_simplex<S>(Index, RandomStream&);                    \
  template ShakeCoefficients<S> make_shake_coefficients<S>(                      \
      Granularity, Index, Index, Index, RandomStream&, Phase);                   \
  template SubbandPair<S> split_subbands<S>(const Tensor<S>&, Index);            \
  template Tensor<S> merge_subbands<S>(const SubbandPair<S>&);                   \
  template Var<S> shake_aggregate<S>(std::span<const Var<S>>,                    \
                                     const ShakeCoefficients<S>&, Phase);        \
  template Var<S> residual_shake_block<S>(                                       \
      const Var<S>&, std::span<const Var<S>>, ShakeMode,                         \
      std::span<const ShakeCoefficients<S>>, Phase, bool);

SBS_INSTANTIATE(float)
SBS_INSTANTIATE(double)
#undef SBS_INSTANTIATE

}  // namespace sbs
