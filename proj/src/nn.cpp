#include "sbs/nn.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace sbs {

namespace {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<RowMat<S>>;
template <class S>
using CMatMap = Eigen::Map<const RowMat<S>>;

// ---- convolution kernels -------------------------------------------------
//
// All convolutions are lowered to a "valid" correlation over an explicitly
// zero-padded copy of the input. The inner loop accumulates a register tile
// of output columns across the whole kernel, which keeps the hot path in
// fused multiply-adds on rows that stay in L1.

constexpr Index kTile = 128;

template <class S>
std::vector<S> pad_nchw(const S* x, Index B, Index C, Index H, Index W,
                        Index pad_top, Index pad_left, Index Hp, Index Wp) {
  std::vector<S> out(static_cast<std::size_t>(B * C * Hp * Wp), S(0));
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < H; ++h) {
        const S* src = x + ((b * C + c) * H + h) * W;
        S* dst = out.data() + ((b * C + c) * Hp + h + pad_top) * Wp + pad_left;
        std::copy(src, src + W, dst);
      }
  return out;
}

template <class S, int TW>
inline void conv_tile_fixed(S* acc, const S* xrow, const S* wrow, Index kw_count) {
  for (Index kw = 0; kw < kw_count; ++kw) {
    const S wv = wrow[kw];
    const S* xp = xrow + kw;
    for (int j = 0; j < TW; ++j) acc[j] += wv * xp[j];
  }
}

template <class S>
inline void conv_tile_dyn(S* acc, Index tw, const S* xrow, const S* wrow, Index kw_count) {
  for (Index kw = 0; kw < kw_count; ++kw) {
    const S wv = wrow[kw];
    const S* xp = xrow + kw;
    for (Index j = 0; j < tw; ++j) acc[j] += wv * xp[j];
  }
}

// y[b,oc,h,w] = bias[oc] + sum_{ic,kh,kw} w[oc,ic,kh,kw] * xp[b,ic,h+kh,w+kw]
template <class S>
void conv_valid(const S* xp, Index B, Index C, Index Hp, Index Wp, const S* w,
                const S* bias, Index OC, Index KH, Index KW, S* y) {
  const Index Hout = Hp - KH + 1;
  const Index Wout = Wp - KW + 1;
  S acc[kTile];
  for (Index b = 0; b < B; ++b)
    for (Index oc = 0; oc < OC; ++oc) {
      const S bval = bias ? bias[oc] : S(0);
      for (Index h = 0; h < Hout; ++h) {
        S* yrow = y + ((b * OC + oc) * Hout + h) * Wout;
        for (Index w0 = 0; w0 < Wout; w0 += kTile) {
          const Index tw = std::min(kTile, Wout - w0);
          for (Index j = 0; j < tw; ++j) acc[j] = bval;
          for (Index ic = 0; ic < C; ++ic) {
            const S* xbase = xp + ((b * C + ic) * Hp + h) * Wp + w0;
            const S* wbase = w + ((oc * C + ic) * KH) * KW;
            for (Index kh = 0; kh < KH; ++kh) {
              const S* xrow = xbase + kh * Wp;
              const S* wrow = wbase + kh * KW;
              if (tw == kTile)
                conv_tile_fixed<S, kTile>(acc, xrow, wrow, KW);
              else
                conv_tile_dyn(acc, tw, xrow, wrow, KW);
            }
          }
          for (Index j = 0; j < tw; ++j) yrow[w0 + j] = acc[j];
        }
      }
    }
}

// dw[oc,ic,kh,kw] += sum_{b,h,w} dy[b,oc,h,w] * xp[b,ic,h+kh,w+kw].
// Same tile structure as the forward, with the upstream grad row playing
// the role of the kernel: a register tile of dw entries accumulates across
// the whole output row.
template <class S>
void conv_weight_grad(const S* xp, Index B, Index C, Index Hp, Index Wp,
                      const S* dy, Index OC, Index H, Index W, Index KH,
                      Index KW, S* dw) {
  S acc[kTile];
  for (Index b = 0; b < B; ++b)
    for (Index oc = 0; oc < OC; ++oc)
      for (Index h = 0; h < H; ++h) {
        const S* dyrow = dy + ((b * OC + oc) * H + h) * W;
        for (Index ic = 0; ic < C; ++ic)
          for (Index kh = 0; kh < KH; ++kh) {
            const S* xrow = xp + ((b * C + ic) * Hp + h + kh) * Wp;
            S* dwrow = dw + ((oc * C + ic) * KH + kh) * KW;
            for (Index k0 = 0; k0 < KW; k0 += kTile) {
              const Index tk = std::min(kTile, KW - k0);
              for (Index j = 0; j < tk; ++j) acc[j] = S(0);
              if (tk == kTile)
                conv_tile_fixed<S, kTile>(acc, xrow + k0, dyrow, W);
              else
                conv_tile_dyn(acc, tk, xrow + k0, dyrow, W);
              for (Index j = 0; j < tk; ++j) dwrow[k0 + j] += acc[j];
            }
          }
      }
}

template <class S>
struct ConvGeometry {
  Index B, C, H, W, OC, KH, KW;
  Index pad_top, pad_left;
};

template <class S>
ConvGeometry<S> conv_geometry(const Tensor<S>& x, const Tensor<S>& w) {
  if (x.rank() != 4)
    throw ShapeError(str("conv2d: input must be [B,C,H,W], got ",
                         dims_to_string(x.dims())));
  if (w.rank() != 4)
    throw ShapeError(str("conv2d: weight must be [out,in,KH,KW], got ",
                         dims_to_string(w.dims())));
  if (x.dim(1) != w.dim(1))
    throw ShapeError(str("conv2d: input has ", x.dim(1),
                         " channels but weights expect ", w.dim(1)));
  ConvGeometry<S> g;
  g.B = x.dim(0);
  g.C = x.dim(1);
  g.H = x.dim(2);
  g.W = x.dim(3);
  g.OC = w.dim(0);
  g.KH = w.dim(2);
  g.KW = w.dim(3);
  // same padding, stride 1; even kernels put the extra pad at the
  // high-index side.
  g.pad_top = (g.KH - 1) / 2;
  g.pad_left = (g.KW - 1) / 2;
  return g;
}

}  // namespace

template <class S>
ConvParams<S> make_conv_params(Index out_ch, Index in_ch, Index kh, Index kw,
                               RandomStream& rng) {
  if (out_ch < 1 || kh < 1 || kw < 1)
    throw ValueError("make_conv_params: out_ch, H, W must be >= 1");
  const S stddev = static_cast<S>(std::sqrt(2.0 / double(in_ch * kh * kw)));
  ConvParams<S> p;
  p.weight = make_leaf(Tensor<S>::randn({out_ch, in_ch, kh, kw}, rng, stddev), true);
  p.bias = make_leaf(Tensor<S>::zeros({out_ch}), true);
  return p;
}

template <class S>
Var<S> conv2d(const Var<S>& input, const Var<S>& weight, const Var<S>& bias) {
  const auto g = conv_geometry(input->value, weight->value);
  if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != g.OC))
    throw ShapeError(str("conv2d: bias must be [", g.OC, "], got ",
                         dims_to_string(bias->value.dims())));

  const Index Hp = g.H + g.KH - 1, Wp = g.W + g.KW - 1;
  auto xp = std::make_shared<std::vector<S>>(
      pad_nchw(input->value.data(), g.B, g.C, g.H, g.W, g.pad_top, g.pad_left,
               Hp, Wp));
  Tensor<S> out = Tensor<S>::zeros({g.B, g.OC, g.H, g.W});
  conv_valid(xp->data(), g.B, g.C, Hp, Wp, weight->value.data(),
             bias ? bias->value.data() : nullptr, g.OC, g.KH, g.KW, out.data());

  std::vector<Var<S>> parents = {input, weight};
  if (bias) parents.push_back(bias);
  auto n = make_node(std::move(out), std::move(parents));
  if (n->requires_grad) {
    if (!weight->requires_grad) xp.reset();  // padded copy only needed for dw
    n->backprop = [input, weight, bias, g, xp](Node<S>& self) {
      const S* dy = self.grad.data();
      if (bias && bias->requires_grad) {
        ArrayX<S> db = ArrayX<S>::Zero(g.OC);
        const Index plane = g.H * g.W;
        for (Index b = 0; b < g.B; ++b)
          for (Index oc = 0; oc < g.OC; ++oc)
            db[oc] += self.grad.raw().segment((b * g.OC + oc) * plane, plane).sum();
        bias->accumulate_grad(db);
      }
      if (weight->requires_grad) {
        const Index Hp = g.H + g.KH - 1, Wp = g.W + g.KW - 1;
        Tensor<S> dw = Tensor<S>::zeros(weight->value.dims());
        conv_weight_grad(xp->data(), g.B, g.C, Hp, Wp, dy, g.OC, g.H, g.W, g.KH,
                         g.KW, dw.data());
        weight->accumulate_grad(dw.raw());
      }
      if (input->requires_grad) {
        // grad wrt input = valid correlation of the padded upstream grad
        // with channel-transposed, spatially flipped weights.
        const Index pt = g.KH - 1 - g.pad_top, pl = g.KW - 1 - g.pad_left;
        const Index Hp = g.H + g.KH - 1, Wp = g.W + g.KW - 1;
        auto dyp = pad_nchw(dy, g.B, g.OC, g.H, g.W, pt, pl, Hp, Wp);
        Tensor<S> wf = Tensor<S>::zeros({g.C, g.OC, g.KH, g.KW});
        const S* w = weight->value.data();
        for (Index oc = 0; oc < g.OC; ++oc)
          for (Index ic = 0; ic < g.C; ++ic)
            for (Index kh = 0; kh < g.KH; ++kh)
              for (Index kw = 0; kw < g.KW; ++kw)
                wf.data()[((ic * g.OC + oc) * g.KH + kh) * g.KW + kw] =
                    w[((oc * g.C + ic) * g.KH + (g.KH - 1 - kh)) * g.KW +
                      (g.KW - 1 - kw)];
        Tensor<S> dx = Tensor<S>::zeros(input->value.dims());
        conv_valid(dyp.data(), g.B, g.OC, Hp, Wp, wf.data(),
                   static_cast<const S*>(nullptr), g.C, g.KH, g.KW, dx.data());
        input->accumulate_grad(dx.raw());
      }
    };
  }
  return n;
}

template <class S>
BatchNormState<S> make_batchnorm_state(Index channels) {
  BatchNormState<S> s;
  s.gamma = make_leaf(Tensor<S>::full({channels}, S(1)), true);
  s.beta_shift = make_leaf(Tensor<S>::zeros({channels}), true);
  s.running_mean = Tensor<S>::zeros({channels});
  s.running_var = Tensor<S>::full({channels}, S(1));
  return s;
}

template <class S>
Var<S> batchnorm2d(const Var<S>& input, BatchNormState<S>& state, Phase phase) {
  const Tensor<S>& x = input->value;
  if (x.rank() != 4)
    throw ShapeError(str("batchnorm2d: input must be [B,C,H,W], got ",
                         dims_to_string(x.dims())));
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C != state.gamma->value.dim(0))
    throw ShapeError(str("batchnorm2d: ", C, " channels vs state of ",
                         state.gamma->value.dim(0)));
  const Index plane = H * W;
  const Index m = B * plane;

  ArrayX<S> mean(C), inv_std(C);
  if (phase == Phase::Train) {
    if (m < 2)
      throw ValueError(str("batchnorm2d: degenerate batch, B*H*W = ", m,
                           " < 2 in train phase"));
    for (Index c = 0; c < C; ++c) {
      S sum(0), sq(0);
      for (Index b = 0; b < B; ++b) {
        auto seg = x.raw().segment((b * C + c) * plane, plane);
        sum += seg.sum();
        sq += seg.square().sum();
      }
      const S mu = sum / S(m);
      const S var = sq / S(m) - mu * mu;
      mean[c] = mu;
      inv_std[c] = S(1) / std::sqrt(var + state.epsilon);
      state.running_mean[c] =
          (S(1) - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] =
          (S(1) - state.momentum) * state.running_var[c] + state.momentum * var;
    }
  } else {
    for (Index c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = S(1) / std::sqrt(state.running_var[c] + state.epsilon);
    }
  }

  Tensor<S> out = Tensor<S>::zeros(x.dims());
  const ArrayX<S>& gam = state.gamma->value.raw();
  const ArrayX<S>& bet = state.beta_shift->value.raw();
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      auto xin = x.raw().segment((b * C + c) * plane, plane);
      out.raw().segment((b * C + c) * plane, plane) =
          (xin - mean[c]) * (gam[c] * inv_std[c]) + bet[c];
    }

  auto gamma = state.gamma;
  auto beta = state.beta_shift;
  auto n = make_node(std::move(out), {input, gamma, beta});
  if (n->requires_grad) {
    n->backprop = [input, gamma, beta, mean, inv_std, B, C, plane, m,
                   phase](Node<S>& self) {
      const ArrayX<S>& gam = gamma->value.raw();
      ArrayX<S> dgamma = ArrayX<S>::Zero(C);
      ArrayX<S> dbeta = ArrayX<S>::Zero(C);
      ArrayX<S> gsum = ArrayX<S>::Zero(C);   // sum of upstream grad
      ArrayX<S> gxsum = ArrayX<S>::Zero(C);  // sum of grad * normalized x
      for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c) {
          auto gseg = self.grad.raw().segment((b * C + c) * plane, plane);
          auto xseg = input->value.raw().segment((b * C + c) * plane, plane);
          gsum[c] += gseg.sum();
          gxsum[c] += (gseg * (xseg - mean[c]) * inv_std[c]).sum();
        }
      dbeta = gsum;
      dgamma = gxsum;
      if (gamma->requires_grad) gamma->accumulate_grad(dgamma);
      if (beta->requires_grad) beta->accumulate_grad(dbeta);
      if (input->requires_grad) {
        ArrayX<S> dx(input->value.size());
        for (Index b = 0; b < B; ++b)
          for (Index c = 0; c < C; ++c) {
            auto gseg = self.grad.raw().segment((b * C + c) * plane, plane);
            auto xseg = input->value.raw().segment((b * C + c) * plane, plane);
            auto xhat = (xseg - mean[c]) * inv_std[c];
            if (phase == Phase::Train) {
              dx.segment((b * C + c) * plane, plane) =
                  (gam[c] * inv_std[c] / S(m)) *
                  (S(m) * gseg - gsum[c] - xhat * gxsum[c]);
            } else {
              dx.segment((b * C + c) * plane, plane) = gseg * gam[c] * inv_std[c];
            }
          }
        input->accumulate_grad(dx);
      }
    };
  }
  return n;
}

template <class S>
Var<S> relu(const Var<S>& input) {
  Tensor<S> out(input->value.dims(), input->value.raw().max(S(0)));
  auto n = make_node(std::move(out), {input});
  if (n->requires_grad) {
    n->backprop = [input](Node<S>& self) {
      if (!input->requires_grad) return;
      // subgradient at 0 is 0
      ArrayX<S> dx = (input->value.raw() > S(0))
                         .select(self.grad.raw(), ArrayX<S>::Zero(self.grad.size()));
      input->accumulate_grad(dx);
    };
  }
  return n;
}

template <class S>
Var<S> linear(const Var<S>& input, const Var<S>& weights, const Var<S>& bias) {
  const Tensor<S>& x = input->value;
  const Tensor<S>& w = weights->value;
  if (x.rank() != 2 || w.rank() != 2)
    throw ShapeError(str("linear: expected [B,D] x [D,K], got ",
                         dims_to_string(x.dims()), " x ", dims_to_string(w.dims())));
  if (x.dim(1) != w.dim(0))
    throw ShapeError(str("linear: inner dims disagree, ", x.dim(1), " vs ",
                         w.dim(0)));
  const Index B = x.dim(0), D = x.dim(1), K = w.dim(1);
  if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != K))
    throw ShapeError(str("linear: bias must be [", K, "], got ",
                         dims_to_string(bias->value.dims())));

  Tensor<S> out = Tensor<S>::zeros({B, K});
  MatMap<S>(out.data(), B, K).noalias() =
      CMatMap<S>(x.data(), B, D) * CMatMap<S>(w.data(), D, K);
  if (bias)
    MatMap<S>(out.data(), B, K).rowwise() +=
        Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias->value.data(), K);

  std::vector<Var<S>> parents = {input, weights};
  if (bias) parents.push_back(bias);
  auto n = make_node(std::move(out), std::move(parents));
  if (n->requires_grad) {
    n->backprop = [input, weights, bias, B, D, K](Node<S>& self) {
      CMatMap<S> dy(self.grad.data(), B, K);
      if (input->requires_grad) {
        Tensor<S> dx = Tensor<S>::zeros({B, D});
        MatMap<S>(dx.data(), B, D).noalias() =
            dy * CMatMap<S>(weights->value.data(), D, K).transpose();
        input->accumulate_grad(dx.raw());
      }
      if (weights->requires_grad) {
        Tensor<S> dw = Tensor<S>::zeros({D, K});
        MatMap<S>(dw.data(), D, K).noalias() =
            CMatMap<S>(input->value.data(), B, D).transpose() * dy;
        weights->accumulate_grad(dw.raw());
      }
      if (bias && bias->requires_grad) {
        ArrayX<S> db = dy.colwise().sum().transpose().array();
        bias->accumulate_grad(db);
      }
    };
  }
  return n;
}

template <class S>
Var<S> dropout(const Var<S>& input, double p, Phase phase, RandomStream& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ValueError(str("dropout: p must lie in [0,1), got ", p));
  if (phase == Phase::Eval || p == 0.0) {
    Tensor<S> out = input->value;
    auto n = make_node(std::move(out), {input});
    if (n->requires_grad) {
      n->backprop = [input](Node<S>& self) {
        if (input->requires_grad) input->accumulate_grad(self.grad.raw());
      };
    }
    return n;
  }
  const S keep_scale = S(1.0 / (1.0 - p));
  auto mask = std::make_shared<ArrayX<S>>(input->value.size());
  for (Index i = 0; i < input->value.size(); ++i)
    (*mask)[i] = rng.uniform01() < p ? S(0) : keep_scale;
  Tensor<S> out(input->value.dims(), input->value.raw() * (*mask));
  auto n = make_node(std::move(out), {input});
  if (n->requires_grad) {
    n->backprop = [input, mask](Node<S>& self) {
      if (input->requires_grad)
        input->accumulate_grad((self.grad.raw() * (*mask)).eval());
    };
  }
  return n;
}

template <class S>
Var<S> mean_pool_time(const Var<S>& input) {
  const Tensor<S>& x = input->value;
  if (x.rank() != 2)
    throw ShapeError(str("mean_pool_time: expected [T,D], got ",
                         dims_to_string(x.dims())));
  const Index T = x.dim(0), D = x.dim(1);
  if (T < 1) throw ValueError("mean_pool_time: empty sequence (T = 0)");
  Tensor<S> out = Tensor<S>::zeros({D});
  for (Index t = 0; t < T; ++t) out.raw() += x.raw().segment(t * D, D);
  out.raw() /= S(T);
  auto n = make_node(std::move(out), {input});
  if (n->requires_grad) {
    n->backprop = [input, T, D](Node<S>& self) {
      if (!input->requires_grad) return;
      if (!input->has_grad()) input->grad = Tensor<S>::zeros(input->value.dims());
      for (Index t = 0; t < T; ++t)
        input->grad.raw().segment(t * D, D) += self.grad.raw() / S(T);
    };
  }
  return n;
}

template <class S>
Tensor<S> softmax_rows(const Tensor<S>& logits) {
  if (logits.rank() != 2)
    throw ShapeError(str("softmax_rows: expected [B,K], got ",
                         dims_to_string(logits.dims())));
  const Index B = logits.dim(0), K = logits.dim(1);
  Tensor<S> out = Tensor<S>::zeros({B, K});
  for (Index b = 0; b < B; ++b) {
    auto row = logits.raw().segment(b * K, K);
    const S mx = row.maxCoeff();
    ArrayX<S> e = (row - mx).exp();
    out.raw().segment(b * K, K) = e / e.sum();
  }
  return out;
}

template <class S>
Var<S> cross_entropy_loss(const Var<S>& logits, std::span<const int> labels) {
  const Tensor<S>& z = logits->value;
  if (z.rank() != 2)
    throw ShapeError(str("cross_entropy_loss: expected [B,K], got ",
                         dims_to_string(z.dims())));
  const Index B = z.dim(0), K = z.dim(1);
  if (static_cast<Index>(labels.size()) != B)
    throw ShapeError(str("cross_entropy_loss: ", labels.size(), " labels for ",
                         B, " rows"));
  for (int lab : labels)
    if (lab < 0 || lab >= K)
      throw std::out_of_range(str("cross_entropy_loss: label ", lab,
                                  " outside [0,", K, ")"));

  auto probs = std::make_shared<Tensor<S>>(softmax_rows(z));
  S loss(0);
  for (Index b = 0; b < B; ++b) {
    auto row = z.raw().segment(b * K, K);
    const S mx = row.maxCoeff();
    const S lse = std::log((row - mx).exp().sum()) + mx;
    loss += lse - row[labels[b]];
  }
  loss /= S(B);

  std::vector<int> labs(labels.begin(), labels.end());
  auto n = make_node(Tensor<S>::scalar(loss), {logits});
  if (n->requires_grad) {
    n->backprop = [logits, probs, labs = std::move(labs), B, K](Node<S>& self) {
      if (!logits->requires_grad) return;
      const S g = self.grad[0] / S(B);
      ArrayX<S> dz = probs->raw() * g;
      for (Index b = 0; b < B; ++b) dz[b * K + labs[static_cast<std::size_t>(b)]] -= g;
      logits->accumulate_grad(dz);
    };
  }
  return n;
}

template <class S>
AdamState<S> make_adam_state(std::span<const Var<S>> params, S lr) {
  AdamState<S> st;
  st.lr = lr;
  st.first_moment.reserve(params.size());
  st.second_moment.reserve(params.size());
  for (const auto& p : params) {
    st.first_moment.push_back(Tensor<S>::zeros(p->value.dims()));
    st.second_moment.push_back(Tensor<S>::zeros(p->value.dims()));
  }
  return st;
}

template <class S>
void adam_step(std::span<const Var<S>> params, AdamState<S>& state) {
  if (params.size() != state.first_moment.size())
    throw ShapeError(str("adam_step: state tracks ", state.first_moment.size(),
                         " tensors, got ", params.size()));
  state.step_count += 1;
  const S b1 = state.beta1, b2 = state.beta2;
  const S corr1 = S(1) - static_cast<S>(std::pow(double(b1), double(state.step_count)));
  const S corr2 = S(1) - static_cast<S>(std::pow(double(b2), double(state.step_count)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    ArrayX<S>& m = state.first_moment[i].raw();
    ArrayX<S>& v = state.second_moment[i].raw();
    if (!p->value.same_dims(state.first_moment[i]))
      throw ShapeError(str("adam_step: parameter ", i, " dims ",
                           dims_to_string(p->value.dims()), " vs state ",
                           dims_to_string(state.first_moment[i].dims())));
    if (!p->has_grad()) continue;  // zero gradient: moments and value unchanged
    const ArrayX<S>& g = p->grad.raw();
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.square();
    p->value.raw() -= state.lr * (m / corr1) / ((v / corr2).sqrt() + state.eps);
  }
}

template <class S>
void zero_grads(std::span<const Var<S>> params) {
  for (const auto& p : params) p->clear_grad();
}

#define SBS_INSTANTIATE(S)                                                     \
  template ConvParams<S> make_conv_params<S>(Index, Index, Index, Index,       \
                                             RandomStream&);                   \
  template Var<S> conv2d<S>(const Var<S>&, const Var<S>&, const Var<S>&);      \
  template BatchNormState<S> make_batchnorm_state<S>(Index);                   \
  template Var<S> batchnorm2d<S>(const Var<S>&, BatchNormState<S>&, Phase);    \
  template Var<S> relu<S>(const Var<S>&);                                      \
  template Var<S> linear<S>(const Var<S>&, const Var<S>&, const Var<S>&);      \
  template Var<S> dropout<S>(const Var<S>&, double, Phase, RandomStream&);     \
  template Var<S> mean_pool_time<S>(const Var<S>&);                            \
  template Tensor<S> softmax_rows<S>(const Tensor<S>&);                        \
  template Var<S> cross_entropy_loss<S>(const Var<S>&, std::span<const int>);  \
  template AdamState<S> make_adam_state<S>(std::span<const Var<S>>, S);        \
  template void adam_step<S>(std::span<const Var<S>>, AdamState<S>&);          \
  template void zero_grads<S>(std::span<const Var<S>>);

SBS_INSTANTIATE(float)
SBS_INSTANTIATE(double)
#undef SBS_INSTANTIATE

}  // namespace sbs
