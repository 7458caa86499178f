#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "mda/archive.hpp"
#include "mda/error.hpp"
#include "mda/trainer.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace mda;

namespace {

TrainConfig toy_config(const std::filesystem::path& out) {
  TrainConfig c;
  c.batch_size = 1;
  c.crop = 32;
  c.max_steps = 4;
  c.synthetic_pairs = 2;
  c.synthetic_size = 40;
  c.net.channels = 4;
  c.net.reduction = 2;
  c.seed = 3;
  c.out_dir = out.string();
  return c;
}

Trainer make_trainer(const TrainConfig& c) {
  return Trainer(c, load_training_data(c), load_backbone(c.backbone, c.seed, apply_ablation(c).backbone_depth));
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(TrainConfig, JsonRoundTripAndUnknownKeys) {
  TrainConfig c;
  c.ablation = Ablation::VggDepth3;
  c.loss.lambda[2] = 0.5;
  const nlohmann::json j = c;
  const auto back = j.get<TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  nlohmann::json bad = j;
  bad["batchsize"] = 3;
  EXPECT_THROW(bad.get<TrainConfig>(), PreconditionError);
  testutil::TempDir dir;
  std::ofstream(dir / "c.json") << R"({"batch_size": 2, "loss": {"beta": 5.0}})";
  const auto loaded = load_train_config(dir / "c.json");
  EXPECT_EQ(loaded.batch_size, 2);
  EXPECT_EQ(loaded.loss.beta, 5.0);
  EXPECT_EQ(loaded.loss.gamma, 2.0);
}

TEST(TrainConfig, OverridesAndValidation) {
  TrainConfig c;
  apply_override(c, "learning_rate=3e-4");
  apply_override(c, "loss.zeta=7");
  apply_override(c, "info.window=11");
  apply_override(c, "ablation=fuse_sum");
  apply_override(c, "out_dir=runs/x");
  apply_override(c, "data=123");
  EXPECT_EQ(c.learning_rate, 3e-4);
  EXPECT_EQ(c.loss.zeta, 7.0);
  EXPECT_EQ(c.info.window, 11);
  EXPECT_EQ(c.ablation, Ablation::FuseSum);
  EXPECT_EQ(c.out_dir, "runs/x");
  EXPECT_EQ(c.data, "123");
  EXPECT_THROW(apply_override(c, "nope=1"), PreconditionError);
  EXPECT_THROW(apply_override(c, "loss.nope=1"), PreconditionError);
  EXPECT_THROW(apply_override(c, "batch_size"), PreconditionError);
  EXPECT_THROW(apply_override(c, "ablation=bogus"), PreconditionError);
  TrainConfig v;
  v.crop = 30;
  EXPECT_THROW(v.validate(), PreconditionError);
  v = {};
  v.crop = 16;
  EXPECT_THROW(v.validate(), PreconditionError);
  v = {};
  v.batch_size = 0;
  EXPECT_THROW(v.validate(), PreconditionError);
  v = {};
  v.crop = 32;
  v.synthetic_size = 64;
  v.ablation = Ablation::VggDepth3;
  EXPECT_NO_THROW(v.validate());
  v.ablation = Ablation::VggDepth4;
  EXPECT_THROW(v.validate(), PreconditionError);
  v.crop = 56;
  EXPECT_NO_THROW(v.validate());
}

TEST(TrainConfig, HashIgnoresRunControl) {
  TrainConfig a, b;
  b.max_steps = 99;
  b.out_dir = "elsewhere";
  b.checkpoint_every = 5;
  b.resume = "x.ckpt";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.learning_rate = 2e-5;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 8u);
}

TEST(Ablation, Wiring) {
  TrainConfig c;
  for (const char* s : {"none", "fuse_sum", "fuse_concat", "fixed_image_weights", "fixed_patch_weights", "vgg_depth_3",
                        "vgg_depth_4"})
    EXPECT_EQ(to_string(ablation_from_string(s)), s);
  auto p = apply_ablation(c);
  EXPECT_EQ(p.net, c.net);
  EXPECT_TRUE(p.adaptive_image && p.adaptive_patch);
  EXPECT_EQ(p.backbone_depth, 2);
  c.ablation = Ablation::FuseSum;
  EXPECT_EQ(apply_ablation(c).net.fusion, FusionMode::Sum);
  c.ablation = Ablation::FuseConcat;
  EXPECT_EQ(apply_ablation(c).net.fusion, FusionMode::Concat);
  c.ablation = Ablation::FixedImageWeights;
  EXPECT_FALSE(apply_ablation(c).adaptive_image);
  c.ablation = Ablation::FixedPatchWeights;
  EXPECT_FALSE(apply_ablation(c).adaptive_patch);
  c.ablation = Ablation::VggDepth3;
  EXPECT_EQ(apply_ablation(c).info.vgg_depth, 3);
  EXPECT_EQ(apply_ablation(c).backbone_depth, 3);
  c.ablation = Ablation::VggDepth4;
  EXPECT_EQ(apply_ablation(c).backbone_depth, 4);
}

TEST(BatchSlot, EpochIsAPermutation) {
  std::set<std::size_t> seen;
  for (int step = 0; step < 4; ++step)
    for (int slot = 0; slot < 2; ++slot) seen.insert(batch_slot(9, step, slot, 2, 8).index);
  EXPECT_EQ(seen.size(), 8u);
  EXPECT_EQ(batch_slot(9, 5, 1, 2, 8).index, batch_slot(9, 5, 1, 2, 8).index);
  EXPECT_EQ(batch_slot(9, 5, 1, 2, 8).crop_seed, batch_slot(9, 5, 1, 2, 8).crop_seed);
  EXPECT_NE(batch_slot(9, 5, 1, 2, 8).crop_seed, batch_slot(9, 5, 0, 2, 8).crop_seed);
  EXPECT_THROW(batch_slot(0, 0, 0, 1, 0), EmptyManifestError);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  ModelParams p;
  p.add("w", Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}));
  p.get("w").node()->accumulate(Tensor({3}, std::vector<double>{0.3, -4.0, 0.0}));
  Adam opt(p, 0.1, 0.9, 0.999, 1e-8);
  opt.step(p);
  const Tensor& w = p.get("w").value();
  EXPECT_NEAR(w[0], 1.0 - 0.1, 1e-7);
  EXPECT_NEAR(w[1], -2.0 + 0.1, 1e-7);
  EXPECT_EQ(w[2], 0.5);
  EXPECT_EQ(opt.t, 1);
}

TEST(Trainer, ShortRunReducesLossAndKeepsBackboneFrozen) {
  testutil::TempDir dir;
  auto c = toy_config(dir.path());
  c.synthetic_pairs = 1;
  c.learning_rate = 1e-3;
  auto t = make_trainer(c);
  const Tensor w0 = t.backbone().stage(1)[0].weight.value();
  const auto pair = crop_patch(load_training_data(c)[0], 32, 0);
  const double before = t.evaluate(pair).total;
  for (int i = 0; i < 15; ++i) {
    const auto r = t.step();
    EXPECT_TRUE(std::isfinite(r.total));
  }
  EXPECT_TRUE(t.params().all_finite());
  EXPECT_LT(t.evaluate(pair).total, before);
  EXPECT_EQ(t.backbone().stage(1)[0].weight.value().vec(), w0.vec());
  EXPECT_EQ(t.steps_done(), 15);
  EXPECT_EQ(t.history().size(), 15u);
}

TEST(Trainer, FixedImageWeightsLogHalf) {
  testutil::TempDir dir;
  auto c = toy_config(dir.path());
  c.ablation = Ablation::FixedImageWeights;
  auto t = make_trainer(c);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(t.step().weights, WeightSet{});
  c.ablation = Ablation::None;
  auto a = make_trainer(c);
  EXPECT_NE(a.step().weights, WeightSet{});
}

TEST(Trainer, FixedPatchWeightsUseUniformGrid) {
  testutil::TempDir dir;
  auto c = toy_config(dir.path());
  c.ablation = Ablation::FixedPatchWeights;
  auto t = make_trainer(c);
  const auto b = t.evaluate(crop_patch(load_training_data(c)[0], 32, 1));
  for (const auto& cell : b.grid.cells) EXPECT_EQ(cell, WeightSet{});
  EXPECT_NE(b.weights, WeightSet{});
}

TEST(Trainer, VggDepthAblationChangesStageCount) {
  testutil::TempDir dir;
  auto c = toy_config(dir.path());
  c.ablation = Ablation::VggDepth3;
  auto t = make_trainer(c);
  EXPECT_EQ(t.backbone().depth(), 3);
  EXPECT_EQ(t.pipeline().info.vgg_depth, 3);
  const auto crop = crop_patch(load_training_data(c)[0], 32, 2);
  InfoConfig info = c.info;
  info.vgg_depth = 3;
  EXPECT_EQ(extract_features(crop.ir, t.backbone(), info.vgg_depth).stages.size(), 3u);
  EXPECT_EQ(t.evaluate(crop).weights.int_ir, image_weights(crop.ir, crop.vis_y, t.backbone(), info).int_ir);
  info.vgg_depth = 2;
  EXPECT_NE(t.evaluate(crop).weights.int_ir, image_weights(crop.ir, crop.vis_y, t.backbone(), info).int_ir);
}

TEST(Trainer, SumAblationTrains) {
  testutil::TempDir dir;
  auto c = toy_config(dir.path());
  c.ablation = Ablation::FuseSum;
  auto t = make_trainer(c);
  EXPECT_FALSE(t.params().has("fuse1.ca.fc1.w"));
  EXPECT_TRUE(std::isfinite(t.step().total));
}

TEST(Trainer, CheckpointRoundTripAndResumeEquality) {
  testutil::TempDir dir;
  auto c = toy_config(dir.path());
  c.batch_size = 2;
  auto straight = make_trainer(c);
  for (int i = 0; i < 5; ++i) straight.step();

  auto first = make_trainer(c);
  for (int i = 0; i < 2; ++i) first.step();
  first.save_checkpoint(dir / "k.ckpt");
  auto resumed = make_trainer(c);
  resumed.load_checkpoint(dir / "k.ckpt");
  EXPECT_EQ(resumed.steps_done(), 2);
  EXPECT_EQ(resumed.params().checksum(), first.params().checksum());
  EXPECT_EQ(resumed.optimizer().t, first.optimizer().t);
  for (std::size_t i = 0; i < first.optimizer().m.size(); ++i) {
    EXPECT_EQ(resumed.optimizer().m[i].vec(), first.optimizer().m[i].vec());
    EXPECT_EQ(resumed.optimizer().v[i].vec(), first.optimizer().v[i].vec());
  }
  for (int i = 0; i < 3; ++i) EXPECT_EQ(resumed.step(), straight.history()[2 + i]);
  EXPECT_EQ(resumed.params().checksum(), straight.params().checksum());

  const auto model = load_params(dir / "k.ckpt");
  EXPECT_EQ(model.checksum(), first.params().checksum());

  auto other = c;
  other.learning_rate = 1.0;
  auto mismatched = make_trainer(other);
  EXPECT_THROW(mismatched.load_checkpoint(dir / "k.ckpt"), PreconditionError);
}

TEST(Trainer, NanWritesDumpAndThrows) {
  testutil::TempDir dir;
  auto c = toy_config(dir.path());
  auto t = make_trainer(c);
  t.params().get("recon.conv2.b").mutable_value()[0] = std::nan("");
  EXPECT_THROW(t.step(), NumericError);
  EXPECT_TRUE(std::filesystem::exists(dir / "nan_dump_step0.json"));
  const auto j = nlohmann::json::parse(std::ifstream(dir / "nan_dump_step0.json"));
  EXPECT_TRUE(j["items"][0].contains("terms"));
  EXPECT_TRUE(std::filesystem::exists(dir / "nan_dump_step0.mda"));
}

TEST(Train, DriverWritesArtifactsAndResumes) {
  testutil::TempDir dir;
  auto c = toy_config(dir / "run");
  c.checkpoint_every = 2;
  std::vector<StepRecord> seen;
  const auto r = train(c, [&](const StepRecord& s) { seen.push_back(s); });
  EXPECT_EQ(r.history.size(), 4u);
  EXPECT_EQ(seen.size(), 4u);
  EXPECT_TRUE(std::filesystem::exists(r.final_checkpoint));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "run" / "step_000002.ckpt"));
  const auto lines = read_lines(r.loss_csv);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], csv_header());
  EXPECT_EQ(lines[3], csv_row(r.history[2]));
  const auto run = nlohmann::json::parse(std::ifstream(r.run_manifest));
  EXPECT_EQ(run["config_hash"], config_hash(c));

  auto more = c;
  more.max_steps = 6;
  more.resume = (dir.path() / "run" / "step_000002.ckpt").string();
  more.out_dir = (dir.path() / "run2").string();
  const auto r2 = train(more);
  ASSERT_EQ(r2.history.size(), 4u);
  EXPECT_EQ(r2.history[0], r.history[2]);
  EXPECT_EQ(r2.history[1], r.history[3]);
  EXPECT_EQ(r2.history.back().step, 5);
}
