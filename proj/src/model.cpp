#include "sbs/model.hpp"

#include <fstream>
#include <sstream>

namespace sbs {

namespace {

constexpr std::uint8_t kCheckpointVersion = 1;

Index conv_param_count(Index out_ch, Index in_ch, Index kh, Index kw) {
  return out_ch * in_ch * kh * kw + out_ch;  // weights + bias
}

Index bn_param_count(Index channels) { return 2 * channels; }

struct FreqGroups {
  std::vector<Index> offset;
  std::vector<Index> size;
};

// Contiguous frequency groups; the remainder bins go to the highest groups.
FreqGroups make_freq_groups(Index bins, Index groups) {
  FreqGroups fg;
  const Index base = bins / groups;
  const Index rem = bins % groups;
  Index off = 0;
  for (Index g = 0; g < groups; ++g) {
    const Index sz = base + (g >= groups - rem ? 1 : 0);
    fg.offset.push_back(off);
    fg.size.push_back(sz);
    off += sz;
  }
  return fg;
}

// Average over time, context rows and the bins of each frequency group:
// [T, C, H, W] -> [1, C*G].
template <class S>
Var<S> group_average(const Var<S>& input, Index groups) {
  const Tensor<S>& x = input->value;
  if (x.rank() != 4)
    throw ShapeError(str("group_average: expected [T,C,H,W], got ",
                         dims_to_string(x.dims())));
  const Index T = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (groups < 1 || groups > W)
    throw ValueError(str("group_average: ", groups, " groups over ", W, " bins"));
  const FreqGroups fg = make_freq_groups(W, groups);

  Tensor<S> out = Tensor<S>::zeros({1, C * groups});
  for (Index t = 0; t < T; ++t)
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < H; ++h) {
        const S* row = x.data() + ((t * C + c) * H + h) * W;
        for (Index g = 0; g < groups; ++g) {
          S acc(0);
          for (Index w = fg.offset[static_cast<std::size_t>(g)];
               w < fg.offset[static_cast<std::size_t>(g)] + fg.size[static_cast<std::size_t>(g)]; ++w)
            acc += row[w];
          out[c * groups + g] += acc;
        }
      }
  for (Index c = 0; c < C; ++c)
    for (Index g = 0; g < groups; ++g)
      out[c * groups + g] /= S(T * H * fg.size[static_cast<std::size_t>(g)]);

  auto n = make_node(std::move(out), {input});
  if (n->requires_grad) {
    n->backprop = [input, T, C, H, W, groups, fg](Node<S>& self) {
      if (!input->requires_grad) return;
      if (!input->has_grad()) input->grad = Tensor<S>::zeros(input->value.dims());
      for (Index t = 0; t < T; ++t)
        for (Index c = 0; c < C; ++c)
          for (Index h = 0; h < H; ++h) {
            S* row = input->grad.data() + ((t * C + c) * H + h) * W;
            for (Index g = 0; g < groups; ++g) {
              const S gv = self.grad[c * groups + g] /
                           S(T * H * fg.size[static_cast<std::size_t>(g)]);
              for (Index w = fg.offset[static_cast<std::size_t>(g)];
                   w < fg.offset[static_cast<std::size_t>(g)] + fg.size[static_cast<std::size_t>(g)]; ++w)
                row[w] += gv;
            }
          }
    };
  }
  return n;
}

}  // namespace

Index ParameterCounts::stage(const std::string& name) const {
  for (const auto& [n, c] : stages)
    if (n == name) return c;
  throw ValueError(str("no stage named ", name));
}

ModelSpec build_shallow(ShakeMode mode) {
  ModelSpec spec;
  spec.name = "shallow";
  spec.shake_mode = mode;
  spec.prelim = {4, 2, 16};
  spec.prelim_batchnorm_relu = true;
  BlockSpec block;
  block.branch_count = 2;
  block.branch.convs = {{4, 2, 64}, {4, 4, 128}};
  block.shake_mode = mode;
  block.projection = false;  // 4 -> 4 channels, identity shortcut
  spec.stages.push_back({"block", {block}});
  spec.head = HeadKind::FlattenMlp;
  return spec;
}

ModelSpec build_deep(ShakeMode mode) {
  ModelSpec spec;
  spec.name = "deep";
  spec.shake_mode = mode;
  spec.prelim = {4, 2, 16};
  spec.prelim_batchnorm_relu = false;
  auto stage = [&](const std::string& name, Index channels, Index blocks,
                   bool first_projects) {
    StageSpec st;
    st.name = name;
    for (Index i = 0; i < blocks; ++i) {
      BlockSpec b;
      b.branch_count = 2;
      b.branch.convs = {{channels, 2, 16}, {channels, 2, 16}};
      b.shake_mode = mode;
      b.projection = (i == 0) && first_projects;
      st.blocks.push_back(b);
    }
    spec.stages.push_back(st);
  };
  stage("res-8", 8, 3, true);
  stage("res-16", 16, 1, true);
  stage("res-32", 32, 1, true);
  spec.head = HeadKind::GroupedAverageAffine;
  return spec;
}

Index branch_parameter_count(const BlockSpec& block, Index in_channels) {
  Index count = 0;
  Index ic = in_channels;
  for (const auto& cg : block.branch.convs) {
    count += conv_param_count(cg.out_ch, ic, cg.kh, cg.kw);
    count += bn_param_count(cg.out_ch);
    ic = cg.out_ch;
  }
  return count;
}

ParameterCounts count_parameters(const ModelSpec& spec) {
  ParameterCounts pc;
  Index ch = 1;
  {
    Index n = conv_param_count(spec.prelim.out_ch, ch, spec.prelim.kh, spec.prelim.kw);
    if (spec.prelim_batchnorm_relu) n += bn_param_count(spec.prelim.out_ch);
    pc.stages.emplace_back("prelim-conv", n);
    ch = spec.prelim.out_ch;
  }
  for (const auto& st : spec.stages) {
    Index n = 0;
    for (const auto& b : st.blocks) {
      const Index out_ch = b.branch.convs.back().out_ch;
      n += b.branch_count * branch_parameter_count(b, ch);
      if (b.projection) n += conv_param_count(out_ch, ch, 1, 1);
      ch = out_ch;
    }
    pc.stages.emplace_back(st.name, n);
  }
  {
    Index n = 0;
    if (spec.head == HeadKind::FlattenMlp) {
      const Index d = ch * spec.input_ctx * spec.input_bins;
      n += d * spec.mlp_hidden + spec.mlp_hidden;
      n += spec.mlp_hidden * spec.mlp_hidden + spec.mlp_hidden;
      n += spec.mlp_hidden * spec.class_count + spec.class_count;
      pc.stages.emplace_back("head", n);
    } else {
      n = ch * spec.freq_groups * spec.class_count;  // affine without bias
      pc.stages.emplace_back("affine", n);
    }
  }
  for (const auto& [name, n] : pc.stages) pc.total += n;
  return pc;
}

std::string model_summary(const ModelSpec& spec) {
  const ParameterCounts pc = count_parameters(spec);
  std::ostringstream os;
  os << "model: " << spec.name << "  (shake mode: " << to_string(spec.shake_mode)
     << ", branches: "
     << (spec.stages.empty() ? 2 : spec.stages[0].blocks[0].branch_count) << ")\n";
  os << "layer          structure                       no.params\n";
  auto row = [&](const std::string& name, const std::string& structure, Index n) {
    os << name;
    for (std::size_t i = name.size(); i < 15; ++i) os << ' ';
    os << structure << ' ';
    for (std::size_t i = structure.size(); i + 1 < 36; ++i) os << ' ';
    os << n << "\n";
  };
  row("prelim-conv",
      str("[", spec.prelim.kh, "x", spec.prelim.kw, ", ", spec.prelim.out_ch, "] x 1",
          spec.prelim_batchnorm_relu ? " + BN + ReLU" : ""),
      pc.stage("prelim-conv"));
  for (const auto& st : spec.stages) {
    const auto& b = st.blocks[0];
    std::string structure = "[";
    for (std::size_t i = 0; i < b.branch.convs.size(); ++i) {
      const auto& cg = b.branch.convs[i];
      if (i) structure += "; ";
      structure += str(cg.kh, "x", cg.kw, ", ", cg.out_ch);
    }
    structure += str("] x ", st.blocks.size());
    row(st.name, structure, pc.stage(st.name));
  }
  if (spec.head == HeadKind::FlattenMlp) {
    row("head",
        str("pool + Linear(", spec.mlp_hidden, ") x 2 + Linear(", spec.class_count, ")"),
        pc.stage("head"));
  } else {
    row("average", "-", 0);
    row("affine", str(spec.stages.back().blocks.back().branch.convs.back().out_ch *
                          spec.freq_groups,
                      "x", spec.class_count),
        pc.stage("affine"));
  }
  row("total", "-", pc.total);
  return os.str();
}

// ---- runtime network -----------------------------------------------------

template <class S>
Var<S> BranchNet<S>::forward(Var<S> x, Phase phase) {
  for (std::size_t i = 0; i < convs.size(); ++i) {
    x = conv2d(x, convs[i]);
    x = batchnorm2d(x, bns[i], phase);
    if (i + 1 < convs.size()) x = relu(x);
  }
  return x;
}

template <class S>
Var<S> ResidualBlockNet<S>::forward(const Var<S>& x, const ForwardCtx& ctx,
                                    Index block_ordinal) {
  std::vector<Var<S>> outs;
  outs.reserve(branches.size());
  for (auto& br : branches) outs.push_back(br.forward(x, ctx.phase));

  Var<S> sc = projection ? conv2d(x, *projection) : x;

  const Index N = static_cast<Index>(branches.size());
  const Index T = x->value.dim(0);
  std::vector<ShakeCoefficients<S>> coeffs;
  if (mode != ShakeMode::None) {
    const Index sets = mode == ShakeMode::Both ? 2 : 1;
    for (Index s = 0; s < sets; ++s) {
      if (ctx.phase == Phase::Eval) {
        RandomStream unused(0);
        coeffs.push_back(make_shake_coefficients<S>(ctx.granularity, 1, T, N,
                                                    unused, Phase::Eval));
      } else {
        // Batch granularity shares one draw across the whole optimizer step;
        // the per-block stream keeps shake decoupled from other randomness.
        const std::uint64_t base = ctx.granularity == Granularity::Batch
                                       ? ctx.shake_step_seed
                                       : ctx.sample_seed;
        RandomStream rs(derive_seed(base, "shake", block_ordinal, s));
        coeffs.push_back(make_shake_coefficients<S>(ctx.granularity, 1, T, N, rs,
                                                    Phase::Train));
      }
    }
  }
  return residual_shake_block<S>(sc, outs, mode, coeffs, ctx.phase,
                                 ctx.normalize_unshaken);
}

template <class S>
Model<S>::Model(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  Index ordinal = 0;
  auto stream = [&]() { return RandomStream(derive_seed(init_seed, "init", ordinal++)); };
  auto conv = [&](Index oc, Index ic, Index kh, Index kw) {
    RandomStream rs = stream();
    return make_conv_params<S>(oc, ic, kh, kw, rs);
  };
  auto lin = [&](Index d, Index k, double gain) {
    RandomStream rs = stream();
    const S stddev = static_cast<S>(std::sqrt(gain / double(d)));
    return make_leaf(Tensor<S>::randn({d, k}, rs, stddev), true);
  };

  Index ch = 1;
  prelim_ = conv(spec_.prelim.out_ch, ch, spec_.prelim.kh, spec_.prelim.kw);
  ch = spec_.prelim.out_ch;
  if (spec_.prelim_batchnorm_relu) prelim_bn_ = make_batchnorm_state<S>(ch);

  for (const auto& st : spec_.stages) {
    std::vector<ResidualBlockNet<S>> blocks;
    for (const auto& bs : st.blocks) {
      ResidualBlockNet<S> blk;
      blk.mode = bs.shake_mode;
      const Index out_ch = bs.branch.convs.back().out_ch;
      for (Index n = 0; n < bs.branch_count; ++n) {
        BranchNet<S> br;
        Index ic = ch;
        for (const auto& cg : bs.branch.convs) {
          br.convs.push_back(conv(cg.out_ch, ic, cg.kh, cg.kw));
          br.bns.push_back(make_batchnorm_state<S>(cg.out_ch));
          ic = cg.out_ch;
        }
        blk.branches.push_back(std::move(br));
      }
      if (bs.projection) blk.projection = conv(out_ch, ch, 1, 1);
      ch = out_ch;
      blocks.push_back(std::move(blk));
    }
    stages_.push_back(std::move(blocks));
  }

  // classifier outputs start near zero so the first steps see ~uniform softmax
  auto classifier = [&](Index d, Index k) {
    RandomStream rs = stream();
    return make_leaf(Tensor<S>::randn({d, k}, rs, S(0.01)), true);
  };
  if (spec_.head == HeadKind::FlattenMlp) {
    const Index d = ch * spec_.input_ctx * spec_.input_bins;
    fc1_w_ = lin(d, spec_.mlp_hidden, 2.0);
    fc1_b_ = make_leaf(Tensor<S>::zeros({spec_.mlp_hidden}), true);
    fc2_w_ = lin(spec_.mlp_hidden, spec_.mlp_hidden, 2.0);
    fc2_b_ = make_leaf(Tensor<S>::zeros({spec_.mlp_hidden}), true);
    out_w_ = classifier(spec_.mlp_hidden, spec_.class_count);
    out_b_ = make_leaf(Tensor<S>::zeros({spec_.class_count}), true);
  } else {
    affine_w_ = classifier(ch * spec_.freq_groups, spec_.class_count);
  }
}

template <class S>
Var<S> Model<S>::forward(const Tensor<S>& frames, const ForwardCtx& ctx) {
  if (frames.rank() != 3 || frames.dim(1) != spec_.input_ctx ||
      frames.dim(2) != spec_.input_bins)
    throw ShapeError(str("model forward: expected [T,", spec_.input_ctx, ",",
                         spec_.input_bins, "], got ", dims_to_string(frames.dims())));
  const Index T = frames.dim(0);

  Var<S> x = make_leaf(frames.reshaped({T, 1, spec_.input_ctx, spec_.input_bins}));
  x = conv2d(x, prelim_);
  if (prelim_bn_) {
    x = batchnorm2d(x, *prelim_bn_, ctx.phase);
    x = relu(x);
  }

  Index ordinal = 0;
  for (auto& stage : stages_)
    for (auto& blk : stage) {
      x = blk.forward(x, ctx, ordinal++);
      if (spec_.head == HeadKind::FlattenMlp) x = relu(x);
    }

  if (spec_.head == HeadKind::FlattenMlp) {
    const Index d = x->value.size() / T;
    x = reshape(x, {T, d});
    x = mean_pool_time(x);
    x = reshape(x, {Index(1), d});
    RandomStream drop1(derive_seed(ctx.sample_seed, "dropout", 0));
    RandomStream drop2(derive_seed(ctx.sample_seed, "dropout", 1));
    x = dropout(x, spec_.dropout_pool, ctx.phase, drop1);
    x = relu(linear(x, fc1_w_, fc1_b_));
    x = dropout(x, spec_.dropout_hidden, ctx.phase, drop2);
    x = relu(linear(x, fc2_w_, fc2_b_));
    x = linear(x, out_w_, out_b_);
  } else {
    x = group_average(x, spec_.freq_groups);
    x = linear(x, affine_w_, Var<S>());
  }
  return x;
}

namespace {

template <class S>
struct Entry {
  std::string name;
  Var<S> param;        // set for learnables
  Tensor<S>* buffer = nullptr;  // set for running stats
};

template <class S>
struct EntryCollector {
  std::vector<Entry<S>> entries;

  void param(std::string name, const Var<S>& v) {
    if (v) entries.push_back({std::move(name), v, nullptr});
  }
  void buffer(std::string name, Tensor<S>& t) {
    entries.push_back({std::move(name), nullptr, &t});
  }
  void conv(const std::string& prefix, const ConvParams<S>& c) {
    param(prefix + ".weight", c.weight);
    param(prefix + ".bias", c.bias);
  }
  void bn(const std::string& prefix, BatchNormState<S>& b) {
    param(prefix + ".gamma", b.gamma);
    param(prefix + ".beta", b.beta_shift);
    buffer(prefix + ".running_mean", b.running_mean);
    buffer(prefix + ".running_var", b.running_var);
  }
};

}  // namespace

template <class S>
std::vector<std::pair<std::string, Var<S>>> Model<S>::named_parameters() const {
  auto& self = const_cast<Model<S>&>(*this);
  EntryCollector<S> ec;
  ec.conv("prelim.conv", self.prelim_);
  if (self.prelim_bn_) ec.bn("prelim.bn", *self.prelim_bn_);
  for (std::size_t si = 0; si < self.stages_.size(); ++si) {
    const std::string stage_name = self.spec_.stages[si].name;
    for (std::size_t bi = 0; bi < self.stages_[si].size(); ++bi) {
      auto& blk = self.stages_[si][bi];
      const std::string bp = str(stage_name, ".block", bi);
      for (std::size_t ni = 0; ni < blk.branches.size(); ++ni) {
        auto& br = blk.branches[ni];
        for (std::size_t ci = 0; ci < br.convs.size(); ++ci) {
          ec.conv(str(bp, ".branch", ni, ".conv", ci), br.convs[ci]);
          ec.bn(str(bp, ".branch", ni, ".bn", ci), br.bns[ci]);
        }
      }
      if (blk.projection) ec.conv(bp + ".shortcut", *blk.projection);
    }
  }
  ec.param("head.fc1.weight", self.fc1_w_);
  ec.param("head.fc1.bias", self.fc1_b_);
  ec.param("head.fc2.weight", self.fc2_w_);
  ec.param("head.fc2.bias", self.fc2_b_);
  ec.param("head.out.weight", self.out_w_);
  ec.param("head.out.bias", self.out_b_);
  ec.param("affine.weight", self.affine_w_);

  std::vector<std::pair<std::string, Var<S>>> out;
  for (auto& e : ec.entries)
    if (e.param) out.emplace_back(e.name, e.param);
  return out;
}

template <class S>
std::vector<std::pair<std::string, Tensor<S>*>> Model<S>::named_buffers() {
  std::vector<std::pair<std::string, Tensor<S>*>> out;
  auto add_bn = [&](const std::string& prefix, BatchNormState<S>& b) {
    out.emplace_back(prefix + ".running_mean", &b.running_mean);
    out.emplace_back(prefix + ".running_var", &b.running_var);
  };
  if (prelim_bn_) add_bn("prelim.bn", *prelim_bn_);
  for (std::size_t si = 0; si < stages_.size(); ++si)
    for (std::size_t bi = 0; bi < stages_[si].size(); ++bi) {
      auto& blk = stages_[si][bi];
      for (std::size_t ni = 0; ni < blk.branches.size(); ++ni)
        for (std::size_t ci = 0; ci < blk.branches[ni].bns.size(); ++ci)
          add_bn(str(spec_.stages[si].name, ".block", bi, ".branch", ni, ".bn", ci),
                 blk.branches[ni].bns[ci]);
    }
  return out;
}

template <class S>
std::vector<Var<S>> Model<S>::parameters() const {
  std::vector<Var<S>> out;
  for (auto& [name, v] : named_parameters()) out.push_back(v);
  return out;
}

template <class S>
std::vector<Tensor<S>> Model<S>::snapshot() const {
  std::vector<Tensor<S>> out;
  for (auto& [name, v] : named_parameters()) out.push_back(v->value);
  auto& self = const_cast<Model<S>&>(*this);
  for (auto& [name, t] : self.named_buffers()) out.push_back(*t);
  return out;
}

template <class S>
void Model<S>::restore(const std::vector<Tensor<S>>& values) {
  auto params = named_parameters();
  auto buffers = named_buffers();
  if (values.size() != params.size() + buffers.size())
    throw ShapeError(str("restore: snapshot holds ", values.size(),
                         " tensors, model needs ", params.size() + buffers.size()));
  std::size_t i = 0;
  for (auto& [name, v] : params) v->value = values[i++];
  for (auto& [name, t] : buffers) *t = values[i++];
}

template <class S>
ParameterCounts count_parameters(const Model<S>& model) {
  ParameterCounts pc;
  auto bump = [&](const std::string& stage, Index n) {
    for (auto& [name, c] : pc.stages)
      if (name == stage) {
        c += n;
        return;
      }
    pc.stages.emplace_back(stage, n);
  };
  for (const auto& [name, v] : model.named_parameters()) {
    std::string stage = name.substr(0, name.find('.'));
    if (stage == "prelim") stage = "prelim-conv";
    if (stage == "affine") stage = "affine";
    bump(stage, v->value.size());
    pc.total += v->value.size();
  }
  return pc;
}

template <class S>
void save_checkpoint(const std::string& path, Model<S>& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(str("cannot open for writing: ", path));

  std::vector<std::pair<std::string, const Tensor<S>*>> entries;
  for (auto& [name, v] : model.named_parameters()) entries.emplace_back(name, &v->value);
  for (auto& [name, t] : model.named_buffers()) entries.emplace_back(name, t);

  std::ostringstream manifest;
  for (auto& [name, t] : entries) {
    manifest << name;
    for (Index i = 0; i < t->rank(); ++i)
      manifest << (i ? "x" : " ") << t->dim(i);
    manifest << "\n";
  }
  const std::string m = manifest.str();
  os.write("SBCP", 4);
  os.put(static_cast<char>(kCheckpointVersion));
  const std::uint32_t mlen = static_cast<std::uint32_t>(m.size());
  os.write(reinterpret_cast<const char*>(&mlen), 4);
  os.write(m.data(), static_cast<std::streamsize>(m.size()));
  if (!os) throw IoError(str("short write to ", path));

  const TensorDType dtype = sizeof(S) == 8 ? TensorDType::F64 : TensorDType::F32;
  for (auto& [name, t] : entries) write_tensor(os, *t, dtype, path);
}

template <class S>
void load_checkpoint(const std::string& path, Model<S>& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(str("cannot open for reading: ", path));

  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::string(magic, 4) != "SBCP")
    throw IoError(str("bad checkpoint magic in ", path));
  const int version = is.get();
  if (version != kCheckpointVersion)
    throw IoError(str("unsupported checkpoint version ", version, " in ", path));
  std::uint32_t mlen = 0;
  is.read(reinterpret_cast<char*>(&mlen), 4);
  std::string manifest(mlen, '\0');
  is.read(manifest.data(), mlen);
  if (!is) throw IoError(str("truncated checkpoint manifest in ", path));

  std::vector<std::string> names;
  std::istringstream ms(manifest);
  std::string line;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    names.push_back(line.substr(0, line.find(' ')));
  }

  auto params = model.named_parameters();
  auto buffers = model.named_buffers();
  if (names.size() != params.size() + buffers.size())
    throw IoError(str("checkpoint ", path, " holds ", names.size(),
                      " tensors, model needs ", params.size() + buffers.size()));
  std::size_t idx = 0;
  auto take = [&](const std::string& expect, Tensor<S>& dst) {
    if (names[idx] != expect)
      throw IoError(str("checkpoint ", path, " entry ", idx, " is ", names[idx],
                        ", expected ", expect));
    Tensor<S> t = read_tensor<S>(is, path);
    if (!t.same_dims(dst))
      throw IoError(str("checkpoint ", path, ": dims for ", expect, " are ",
                        dims_to_string(t.dims()), ", expected ",
                        dims_to_string(dst.dims())));
    dst = std::move(t);
    ++idx;
  };
  for (auto& [name, v] : params) take(name, v->value);
  for (auto& [name, t] : buffers) take(name, *t);
}

#define SBS_INSTANTIATE(S)                                                  \
  template struct BranchNet<S>;                                             \
  template struct ResidualBlockNet<S>;                                      \
  template class Model<S>;                                                  \
  template void save_checkpoint<S>(const std::string&, Model<S>&);          \
  template void load_checkpoint<S>(const std::string&, Model<S>&);          \
  template ParameterCounts count_parameters<S>(const Model<S>&);

SBS_INSTANTIATE(float)
SBS_INSTANTIATE(double)
#undef SBS_INSTANTIATE

}  // namespace sbs
