#include "doctest.h"

#include <cstdio>

#include "sbs/model.hpp"

using namespace sbs;

TEST_CASE("shallow branch holds 10,264 learnable scalars") {
  ModelSpec spec = build_shallow(ShakeMode::None);
  const BlockSpec& block = spec.stages[0].blocks[0];
  // paper rounds this to 10.2 K
  CHECK(branch_parameter_count(block, 4) == 10264);
}

TEST_CASE("deep model reproduces the per-stage parameter counts") {
  ModelSpec spec = build_deep(ShakeMode::Both);
  ParameterCounts pc = count_parameters(spec);
  CHECK(pc.stage("prelim-conv") == 132);  // exact
  CHECK(pc.stage("affine") == 1024);      // 256 x 4, no bias
  CHECK(pc.stage("res-8") == 22856);      // within 0.1% of the rounded 22.84 K

  auto within = [](Index got, double target, double pct) {
    return std::abs(double(got) - target) <= target * pct;
  };
  CHECK(within(pc.stage("res-8"), 22840.0, 0.005));
  CHECK(within(pc.stage("res-16"), 24880.0, 0.005));
  CHECK(within(pc.stage("res-32"), 99170.0, 0.005));
  CHECK(within(pc.total, 148000.0, 0.005));
}

TEST_CASE("deep model stage layout: 3+1+1 blocks, channels 4->8->16->32") {
  ModelSpec spec = build_deep(ShakeMode::Full);
  REQUIRE(spec.stages.size() == 3);
  CHECK(spec.stages[0].blocks.size() == 3);
  CHECK(spec.stages[1].blocks.size() == 1);
  CHECK(spec.stages[2].blocks.size() == 1);
  CHECK(spec.prelim.out_ch == 4);
  CHECK(spec.stages[0].blocks[0].branch.convs.back().out_ch == 8);
  CHECK(spec.stages[1].blocks[0].branch.convs.back().out_ch == 16);
  CHECK(spec.stages[2].blocks[0].branch.convs.back().out_ch == 32);
  // projection exactly where the channel count changes
  CHECK(spec.stages[0].blocks[0].projection);
  CHECK_FALSE(spec.stages[0].blocks[1].projection);
  CHECK_FALSE(spec.stages[0].blocks[2].projection);
  CHECK(spec.stages[1].blocks[0].projection);
  CHECK(spec.stages[2].blocks[0].projection);
}

TEST_CASE("shake mode never changes the parameter count") {
  const ParameterCounts base_s = count_parameters(build_shallow(ShakeMode::None));
  const ParameterCounts base_d = count_parameters(build_deep(ShakeMode::None));
  for (ShakeMode mode : {ShakeMode::Full, ShakeMode::Upper, ShakeMode::Lower,
                         ShakeMode::Both}) {
    CHECK(count_parameters(build_shallow(mode)).total == base_s.total);
    CHECK(count_parameters(build_deep(mode)).total == base_d.total);
  }
}

TEST_CASE("materialized models agree with the spec-level count") {
  for (const ModelSpec& spec :
       {build_shallow(ShakeMode::Both), build_deep(ShakeMode::None)}) {
    Model<double> model(spec, 7);
    ParameterCounts from_spec = count_parameters(spec);
    ParameterCounts from_model = count_parameters(model);
    CHECK(from_model.total == from_spec.total);
    for (const auto& [name, count] : from_spec.stages)
      CHECK(from_model.stage(name) == count);
  }
}

TEST_CASE("shallow forward maps [T,16,257] to [1,4]") {
  Model<double> model(build_shallow(ShakeMode::Both), 11);
  RandomStream rng(3);
  Tensor<double> frames = Tensor<double>::randn({3, 16, 257}, rng);
  ForwardCtx ctx;
  ctx.phase = Phase::Train;
  ctx.granularity = Granularity::Frame;
  ctx.sample_seed = 5;
  ctx.shake_step_seed = 6;
  auto logits = model.forward(frames, ctx);
  CHECK(logits->value.dims() == Dims{1, 4});

  ForwardCtx eval_ctx;
  auto eval_logits = model.forward(frames, eval_ctx);
  CHECK(eval_logits->value.dims() == Dims{1, 4});

  CHECK_THROWS_AS(model.forward(Tensor<double>::zeros({3, 8, 257}), eval_ctx),
                  ShapeError);
}

TEST_CASE("deep forward runs end to end") {
  Model<double> model(build_deep(ShakeMode::Upper), 13);
  RandomStream rng(5);
  Tensor<double> frames = Tensor<double>::randn({2, 16, 257}, rng);
  ForwardCtx ctx;
  ctx.phase = Phase::Train;
  ctx.sample_seed = 44;
  auto logits = model.forward(frames, ctx);
  CHECK(logits->value.dims() == Dims{1, 4});
}

TEST_CASE("identical init seeds give identical parameters across modes") {
  Model<double> a(build_shallow(ShakeMode::None), 99);
  Model<double> b(build_shallow(ShakeMode::Both), 99);
  auto pa = a.parameters();
  auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK((pa[i]->value.raw() == pb[i]->value.raw()).all());
}

TEST_CASE("checkpoint round-trip reproduces eval outputs bitwise") {
  Model<double> model(build_shallow(ShakeMode::Full), 21);
  RandomStream rng(8);
  Tensor<double> frames = Tensor<double>::randn({2, 16, 257}, rng);

  // drift the running stats away from their init values first
  ForwardCtx train_ctx;
  train_ctx.phase = Phase::Train;
  train_ctx.sample_seed = 1;
  train_ctx.shake_step_seed = 2;
  model.forward(frames, train_ctx);

  ForwardCtx eval_ctx;
  auto before = model.forward(frames, eval_ctx);

  const std::string path = "/tmp/sbs_ckpt_test.sbck";
  save_checkpoint(path, model);

  Model<double> reloaded(build_shallow(ShakeMode::Full), 12345);  // other init
  load_checkpoint(path, reloaded);
  auto after = reloaded.forward(frames, eval_ctx);
  CHECK((after->value.raw() == before->value.raw()).all());

  Model<double> wrong(build_deep(ShakeMode::Full), 1);
  CHECK_THROWS_AS(load_checkpoint(path, wrong), IoError);
  std::remove(path.c_str());
}

TEST_CASE("snapshot/restore captures parameters and running stats") {
  Model<double> model(build_shallow(ShakeMode::None), 31);
  RandomStream rng(9);
  Tensor<double> frames = Tensor<double>::randn({2, 16, 257}, rng);

  ForwardCtx train_ctx;
  train_ctx.phase = Phase::Train;
  train_ctx.sample_seed = 3;
  model.forward(frames, train_ctx);

  ForwardCtx eval_ctx;
  auto before = model.forward(frames, eval_ctx);
  auto snap = model.snapshot();

  // keep training; outputs drift, restore brings them back
  train_ctx.sample_seed = 4;
  model.forward(frames, train_ctx);
  model.restore(snap);
  auto after = model.forward(frames, eval_ctx);
  CHECK((after->value.raw() == before->value.raw()).all());
}

TEST_CASE("model summary lists the stages and counts") {
  const std::string s = model_summary(build_deep(ShakeMode::Both));
  CHECK(s.find("prelim-conv") != std::string::npos);
  CHECK(s.find("res-8") != std::string::npos);
  CHECK(s.find("affine") != std::string::npos);
  CHECK(s.find("132") != std::string::npos);
  CHECK(s.find("1024") != std::string::npos);

  const std::string t = model_summary(build_shallow(ShakeMode::Full));
  CHECK(t.find("block") != std::string::npos);
  CHECK(t.find("full") != std::string::npos);
}
