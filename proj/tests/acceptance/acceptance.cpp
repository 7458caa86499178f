// Acceptance runner: one PASS/FAIL line per criterion. Criterion 10 is a
// comparison report and never fails the run.

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <tuple>
#include <random>
#include <sstream>

#include "mda/error.hpp"
#include "mda/losses.hpp"
#include "mda/metrics.hpp"
#include "mda/trainer.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace mda;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    if (failures_++ < 3) msgs_ << (msgs_.tellp() > 0 ? "; " : "") << what;
  }
  Outcome done(const std::string& summary) const {
    if (failures_ == 0) return {true, summary};
    return {false, std::to_string(failures_) + " failure(s): " + msgs_.str()};
  }

 private:
  int failures_ = 0;
  std::ostringstream msgs_;
};

std::string fmtd(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

ag::Var var(const Tensor& t) { return ag::Var::constant(t); }

NetConfig toy_net(FusionMode mode = FusionMode::Attention) {
  NetConfig c;
  c.channels = 4;
  c.reduction = 2;
  c.fusion = mode;
  return c;
}

Outcome weight_normalization() {
  Checker ck;
  const auto backbone = load_backbone("random", 0, 2);
  const InfoConfig info;
  double worst = 0.0;
  std::size_t cells = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    GrayImage ir, vis;
    if (i % 2 == 0) {
      const ImagePair p = make_synthetic_pair({64, 64, i});
      ir = p.ir;
      vis = p.vis_y;
    } else {
      ir = oracle::random_image(64, 64, 2 * i);
      vis = oracle::textured_image(64, 64, 2 * i + 1);
    }
    const WeightSet w = image_weights(ir, vis, backbone, info);
    worst = std::max({worst, std::abs(w.int_ir + w.int_vis - 1.0), std::abs(w.grad_ir + w.grad_vis - 1.0)});
    const PatchWeightGrid g = patch_weights(ir, vis, info);
    for (const auto& c : g.cells)
      worst = std::max({worst, std::abs(c.int_ir + c.int_vis - 1.0), std::abs(c.grad_ir + c.grad_vis - 1.0)});
    cells += g.cells.size();
    if (i % 10 == 0) {
      ck.expect(image_weights(ir, ir, backbone, info) == WeightSet{}, "identical pair image weights not 0.5");
      for (const auto& c : patch_weights(vis, vis, info).cells) ck.expect(c == WeightSet{}, "identical pair cell not 0.5");
    }
  }
  ck.expect(worst <= 1e-6, "sum deviates by " + fmtd(worst));
  ck.expect(cells == 100u * 9u, "unexpected patch cell count");
  return ck.done("100 pairs, " + std::to_string(cells) + " cells, max |sum-1| " + fmtd(worst));
}

Outcome attention_composition() {
  Checker ck;
  const ModelParams p = init_params(toy_net(), 21);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Tensor a = oracle::random_tensor({4, 8, 8}, 1000 + s), b = oracle::random_tensor({4, 8, 8}, 2000 + s);
    const int block = std::array{0, 2, 4}[s % 3];
    const std::string name = "fuse" + std::to_string(block + 1);
    const BlockTrace t = fuse_block(var(a), var(b), p, block);
    const auto [cm_ir, cm_vis] = channel_attention(var(a), var(b), p, name);
    const auto [sm_ir, sm_vis] = spatial_attention(var(a), var(b), p, name);
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          const double want = cm_ir.value()[c] * (sm_ir.value().at(c, y, x) * a.at(c, y, x)) +
                              cm_vis.value()[c] * (sm_vis.value().at(c, y, x) * b.at(c, y, x));
          worst = std::max(worst, std::abs(t.out.value().at(c, y, x) - want));
        }
  }
  ck.expect(worst <= 1e-6, "max deviation " + fmtd(worst));
  return ck.done("50 toy tensors, max deviation " + fmtd(worst));
}

Outcome gradient_correctness() {
  Checker ck;
  std::mt19937_64 rng(42);
  const double h = 1e-6, tol = 1e-3;
  double worst_a = 0.0, worst_b = 0.0;

  // (a) with respect to the fused image
  {
    const auto backbone = load_backbone("random", 3, 2);
    const ImagePair pair = crop_at(make_synthetic_pair({32, 32, 9}), {4, 4}, 24);
    const InfoConfig info;
    const WeightSet w = image_weights(pair.ir, pair.vis_y, backbone, info);
    const PatchWeightGrid grid = patch_weights(pair.ir, pair.vis_y, info);
    const ModelParams p = init_params(toy_net(), 5);
    ForwardResult fwd;
    {
      ag::NoGradGuard guard;
      fwd = forward(pair, p);
    }
    fwd.fused = ag::Var::parameter(oracle::random_image(24, 24, 10, 0.2, 0.8).tensor());
    const LossConfig cfg;
    auto total = [&] { return total_loss(fwd, var(pair.ir.tensor()), var(pair.vis_y.tensor()), w, grid, backbone, cfg); };
    ag::backward(total().graph);
    const Tensor g = fwd.fused.grad();
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t k = std::uniform_int_distribution<std::size_t>(0, g.size() - 1)(rng);
      const double num = oracle::central_difference(
          [&] {
            ag::NoGradGuard guard;
            return total().total;
          },
          fwd.fused.mutable_value()[k], h);
      const double err = oracle::relative_error(g[k], num, 1e-7);
      worst_a = std::max(worst_a, err);
      ck.expect(err <= tol, "fused[" + std::to_string(k) + "] rel " + fmtd(err));
    }
  }

  // (b) with respect to every parameter group of a toy model
  {
    const auto backbone = load_backbone("random", 4, 2);
    const ImagePair crop = crop_patch(make_synthetic_pair({32, 32, 8}), 16, 1);
    InfoConfig info;
    info.window = info.stride = 15;
    const WeightSet w = image_weights(crop.ir, crop.vis_y, backbone, info);
    const PatchWeightGrid grid = patch_weights(crop.ir, crop.vis_y, info);
    ModelParams p = init_params(toy_net(), 17);
    const LossConfig cfg;
    const ag::Var ir = var(crop.ir.tensor()), vis = var(crop.vis_y.tensor());
    auto total = [&] { return total_loss(forward(ir, vis, p), ir, vis, w, grid, backbone, cfg); };
    p.zero_grad();
    ag::backward(total().graph);
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t e = 0; e < p.entries().size(); ++e) coords.emplace_back(e, 0);
    while (coords.size() < std::max<std::size_t>(100, p.entries().size()))
      coords.emplace_back(std::uniform_int_distribution<std::size_t>(0, p.entries().size() - 1)(rng), 0);
    for (auto& [e, k] : coords) {
      ag::Var& v = p.entries()[e].second;
      k = std::uniform_int_distribution<std::size_t>(0, v.value().size() - 1)(rng);
      const double analytic = v.grad()[k];
      const double num = oracle::central_difference(
          [&] {
            ag::NoGradGuard guard;
            return total().total;
          },
          v.mutable_value()[k], h);
      const double err = oracle::relative_error(analytic, num, 1e-7);
      worst_b = std::max(worst_b, err);
      ck.expect(err <= tol, p.entries()[e].first + "[" + std::to_string(k) + "] rel " + fmtd(err));
    }
  }
  return ck.done("fused image max rel " + fmtd(worst_a) + ", parameters max rel " + fmtd(worst_b));
}

std::array<BlockTrace, 5> random_blocks(std::uint64_t seed) {
  std::array<BlockTrace, 5> b;
  for (int t = 0; t < 5; ++t) {
    b[t].out = var(oracle::random_tensor({4, 12, 12}, seed + 3 * t));
    b[t].in_ir = var(oracle::random_tensor({4, 12, 12}, seed + 3 * t + 1));
    b[t].in_vis = var(oracle::random_tensor({4, 12, 12}, seed + 3 * t + 2));
  }
  return b;
}

Outcome loss_identities() {
  Checker ck;
  const auto backbone = load_backbone("random", 0, 2);
  const LossConfig cfg;
  const InfoConfig info;
  double worst_zero = 0.0, worst_add = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const GrayImage x = oracle::textured_image(48, 48, s);
    const ag::Var v = var(x.tensor());
    const WeightSet w = image_weights(x, x, backbone, info);
    const PatchWeightGrid grid = patch_weights(x, x, info);
    ForwardResult same;
    same.fused = v;
    same.blocks = random_blocks(10 * s);
    for (auto& b : same.blocks) b.in_ir = b.in_vis = b.out;
    const LossBreakdown z = total_loss(same, v, v, w, grid, backbone, cfg);
    for (double t : {z.image, z.patch, z.style, z.feature, z.total}) worst_zero = std::max(worst_zero, std::abs(t));

    const ImagePair pair = make_synthetic_pair({48, 48, 100 + s});
    ForwardResult fwd;
    fwd.fused = var(oracle::random_image(48, 48, 200 + s).tensor());
    fwd.blocks = random_blocks(50 + 10 * s);
    const LossBreakdown b =
        total_loss(fwd, var(pair.ir.tensor()), var(pair.vis_y.tensor()), image_weights(pair.ir, pair.vis_y, backbone, info),
                   patch_weights(pair.ir, pair.vis_y, info), backbone, cfg);
    const double recomposed = b.pixel + cfg.alpha * b.feature + cfg.beta * b.style;
    const double pixel = b.image + cfg.gamma * b.patch;
    worst_add = std::max({worst_add, std::abs(recomposed - b.total) / std::abs(b.total),
                          std::abs(pixel - b.pixel) / std::abs(b.pixel),
                          std::abs(b.graph.item() - b.total) / std::abs(b.total)});
    ck.expect(b.image > 0 && b.patch > 0 && b.feature > 0 && b.style > 0, "non-identical inputs gave a zero term");
  }
  ck.expect(worst_zero <= 1e-8, "identity residual " + fmtd(worst_zero));
  ck.expect(worst_add <= 1e-6, "additivity rel error " + fmtd(worst_add));
  return ck.done("max identity residual " + fmtd(worst_zero) + ", additivity rel " + fmtd(worst_add));
}

Outcome metric_oracles() {
  Checker ck;
  double worst_exact = 0.0, worst_rel = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const GrayImage ir = oracle::textured_image(32, 32, 3 * s), vis = oracle::textured_image(32, 32, 3 * s + 1);
    const GrayImage f = s % 2 ? oracle::random_image(32, 32, 3 * s + 2) : oracle::textured_image(32, 32, 3 * s + 2);
    const std::pair<double, double> exact[] = {
        {metrics::en(f), oracle::en(f)},           {metrics::sd(f), oracle::sd(f)},
        {metrics::mse(f, ir, vis), oracle::mse(f, ir, vis)}, {metrics::ag(f), oracle::ag(f)},
        {metrics::cc(f, ir, vis), oracle::cc(f, ir, vis)},   {metrics::scd(f, ir, vis), oracle::scd(f, ir, vis)}};
    for (const auto& [got, want] : exact) worst_exact = std::max(worst_exact, std::abs(got - want));
    const std::pair<double, double> approx[] = {{metrics::vif(f, ir, vis), oracle::vif(f, ir, vis)},
                                                {metrics::qabf(f, ir, vis), oracle::qabf(f, ir, vis)}};
    for (const auto& [got, want] : approx) worst_rel = std::max(worst_rel, oracle::relative_error(got, want, 1e-12));
  }
  ck.expect(worst_exact <= 1e-6, "EN/SD/MSE/AG/CC/SCD deviation " + fmtd(worst_exact));
  ck.expect(worst_rel <= 1e-3, "VIF/Q^AB/F rel deviation " + fmtd(worst_rel));

  const GrayImage flat(32, 32, 0.4);
  const GrayImage x = oracle::textured_image(32, 32, 77), y = oracle::textured_image(32, 32, 78);
  ck.expect(metrics::en(flat) == 0.0, "EN(const) != 0");
  ck.expect(ssim(x, x).mssim == 1.0, "SSIM(x,x) != 1");
  ck.expect(metrics::cc(x, x, x) == 1.0, "CC(x,x) != 1");
  ck.expect(metrics::ag(flat) == 0.0, "AG(const) != 0");
  ck.expect(metrics::qabf(flat, x, y) == 0.0, "Q^AB/F(const fused) != 0");
  return ck.done("20 fixtures, exact metrics max dev " + fmtd(worst_exact) + ", VIF/Q^AB/F max rel " + fmtd(worst_rel) +
                 ", anchors hold");
}

Outcome shape_pyramid() {
  Checker ck;
  const ModelParams p = init_params(NetConfig{}, 1);
  ag::NoGradGuard guard;
  const ForwardResult r = forward(make_synthetic_pair({64, 64, 2}), p);
  const int sizes[5] = {64, 64, 32, 32, 16};
  for (int k = 0; k < 5; ++k)
    ck.expect(r.blocks[k].out.shape() == Shape{32, sizes[k], sizes[k]},
              "M" + std::to_string(k + 1) + " is " + shape_str(r.blocks[k].out.shape()));
  ck.expect(r.fused.shape() == Shape{1, 64, 64}, "fused is " + shape_str(r.fused.shape()));
  for (double v : r.fused.value().vec()) ck.expect(v >= 0.0 && v <= 1.0, "fused value outside [0,1]");
  return ck.done("M1..M5 = 64,64,32,32,16 squared x 32; fused 64x64 in [0,1]");
}

struct SmokeRun {
  TrainResult result;
  std::uint32_t checksum = 0;
  ModelParams params;
};

SmokeRun smoke_run(const std::filesystem::path& out) {
  TrainConfig c;
  c.batch_size = 2;
  c.crop = 96;
  c.learning_rate = 1e-5;
  c.seed = 0;
  c.synthetic_pairs = 8;
  c.max_steps = 200;
  c.out_dir = out.string();
  SmokeRun r;
  r.result = train(c);
  r.params = load_params(r.result.final_checkpoint);
  r.checksum = r.params.checksum();
  return r;
}

std::optional<ModelParams> g_smoke_model;

Outcome training_smoke() {
  Checker ck;
  testutil::TempDir dir("mda_accept");
  const auto t0 = std::chrono::steady_clock::now();
  const SmokeRun a = smoke_run(dir / "run_a");
  const SmokeRun b = smoke_run(dir / "run_b");
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  const auto& h = a.result.history;
  ck.expect(h.size() == 200u, "history has " + std::to_string(h.size()) + " steps");
  bool finite = true;
  for (const auto& r : h) finite = finite && std::isfinite(r.total);
  ck.expect(finite, "non-finite loss");
  double first = 0.0, last = 0.0, reduction = 0.0;
  if (h.size() >= 40) {
    for (int i = 0; i < 20; ++i) {
      first += h[static_cast<std::size_t>(i)].total / 20.0;
      last += h[h.size() - 20 + static_cast<std::size_t>(i)].total / 20.0;
    }
    reduction = 1.0 - last / first;
  }
  ck.expect(reduction >= 0.30, "moving-average reduction " + fmtd(100 * reduction) + "%");
  ck.expect(a.result.history == b.result.history, "loss histories differ between runs");
  ck.expect(a.checksum == b.checksum, "final parameters differ between runs");
  ck.expect(minutes < 15.0, "two runs took " + fmtd(minutes) + " min");
  g_smoke_model = a.params;
  return ck.done("MA20 " + fmtd(first) + " -> " + fmtd(last) + " (" + fmtd(100 * reduction) +
                 "% lower), bit-identical reruns, " + fmtd(minutes) + " min for two runs");
}

TrainConfig toy_train(const std::filesystem::path& out) {
  TrainConfig c;
  c.batch_size = 1;
  c.crop = 32;
  c.max_steps = 4;
  c.synthetic_pairs = 2;
  c.synthetic_size = 40;
  c.net = toy_net();
  c.seed = 3;
  c.out_dir = out.string();
  return c;
}

Trainer make_trainer(const TrainConfig& c) {
  return Trainer(c, load_training_data(c), load_backbone(c.backbone, c.seed, apply_ablation(c).backbone_depth));
}

Outcome ablation_wiring() {
  Checker ck;
  testutil::TempDir dir("mda_accept");

  const ModelParams ps = init_params(toy_net(FusionMode::Sum), 0);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor a = oracle::random_tensor({4, 8, 8}, s), b = oracle::random_tensor({4, 8, 8}, 50 + s);
    const AttentionMaps ones{var(Tensor({4}, 1.0)), var(Tensor({4}, 1.0)), var(Tensor({4, 8, 8}, 1.0)),
                             var(Tensor({4, 8, 8}, 1.0))};
    ck.expect(fuse_block(var(a), var(b), ps, 0).out.value() == compose_attention(var(a), var(b), ones).value(),
              "fuse_sum differs from all-ones attention");
  }

  TrainConfig c = toy_train(dir.path());
  c.ablation = Ablation::FixedImageWeights;
  Trainer fixed = make_trainer(c);
  for (int i = 0; i < 3; ++i) ck.expect(fixed.step().weights == WeightSet{}, "fixed image weights are not 0.5");

  for (const auto& [abl, depth, crop] : {std::tuple{Ablation::None, 2, 32}, std::tuple{Ablation::VggDepth3, 3, 32},
                                        std::tuple{Ablation::VggDepth4, 4, 64}}) {
    TrainConfig d = toy_train(dir.path());
    d.ablation = abl;
    d.crop = crop;
    d.synthetic_size = crop + 8;
    Trainer t = make_trainer(d);
    const ImagePair pc = crop_patch(load_training_data(d)[0], crop, 2);
    const auto feats = extract_features(pc.ir, t.backbone(), t.pipeline().info.vgg_depth);
    ck.expect(t.pipeline().info.vgg_depth == depth, to_string(abl) + " depth " + std::to_string(t.pipeline().info.vgg_depth));
    ck.expect(static_cast<int>(feats.stages.size()) == depth, to_string(abl) + " stage count");
    InfoConfig info = d.info;
    info.vgg_depth = depth;
    ck.expect(t.evaluate(pc).weights == image_weights(pc.ir, pc.vis_y, t.backbone(), info),
              to_string(abl) + " weights do not use " + std::to_string(depth) + " stages");
  }
  return ck.done("fuse_sum == all-ones attention, fixed weights log 0.5, stage counts 2/3/4");
}

Outcome persistence() {
  Checker ck;
  testutil::TempDir dir("mda_accept");
  TrainConfig c = toy_train(dir.path());
  c.batch_size = 2;
  c.max_steps = 15;

  Trainer straight = make_trainer(c);
  for (int i = 0; i < 15; ++i) straight.step();

  Trainer first = make_trainer(c);
  for (int i = 0; i < 5; ++i) first.step();
  first.save_checkpoint(dir / "mid.ckpt");
  Trainer resumed = make_trainer(c);
  resumed.load_checkpoint(dir / "mid.ckpt");
  ck.expect(resumed.params().checksum() == first.params().checksum(), "parameters changed across save/load");
  ck.expect(resumed.optimizer().m == first.optimizer().m && resumed.optimizer().v == first.optimizer().v &&
                resumed.optimizer().t == first.optimizer().t,
            "optimizer state changed across save/load");
  ck.expect(resumed.steps_done() == 5, "step counter not restored");
  bool bit_exact = true;
  for (std::size_t i = 0; i < first.params().entries().size(); ++i)
    bit_exact = bit_exact && first.params().entries()[i].second.value() == resumed.params().entries()[i].second.value();
  ck.expect(bit_exact, "parameter values differ after load");

  for (int i = 0; i < 10; ++i) {
    const StepRecord r = resumed.step();
    ck.expect(r == straight.history()[static_cast<std::size_t>(5 + i)], "step " + std::to_string(5 + i) + " differs");
  }
  ck.expect(resumed.params().checksum() == straight.params().checksum(), "final parameters differ");
  return ck.done("bit-exact round trip; 10 resumed steps match the uninterrupted run");
}

Outcome reference_report() {
  const char* ckpt = std::getenv("MDA_REFERENCE_CKPT");
  const char* manifest = std::getenv("MDA_REFERENCE_MANIFEST");
  const std::vector<std::string> names{"en", "vif", "scd", "qabf"};
  const double paper[] = {7.129, 0.861, 1.858, 0.356};
  std::vector<std::string> ids;
  std::vector<GrayImage> fused, ir, vis;
  std::string source;
  if (ckpt && manifest) {
    const ModelParams p = load_params(ckpt);
    for (const auto& e : read_manifest_jsonl(manifest).entries) {
      const ImagePair pair = load_pair(e.ir, e.vis, e.id);
      ids.push_back(e.id);
      fused.push_back(fuse_y(pair.ir, pair.vis_y, p));
      ir.push_back(pair.ir);
      vis.push_back(pair.vis_y);
    }
    source = std::string(ckpt) + " on " + manifest;
  } else if (g_smoke_model) {
    for (std::uint64_t i = 0; i < 4; ++i) {
      const ImagePair pair = make_synthetic_pair({128, 128, 500 + i});
      ids.push_back(std::to_string(i));
      fused.push_back(fuse_y(pair.ir, pair.vis_y, *g_smoke_model));
      ir.push_back(pair.ir);
      vis.push_back(pair.vis_y);
    }
    source = "200-step desk model on 4 synthetic pairs";
  } else {
    return {true, "no model available; reference EN 7.129, VIF 0.861, SCD 1.858, Q^AB/F 0.356"};
  }
  const auto report = metrics::evaluate_pairs(ids, fused, ir, vis, names);
  std::string line = source + ":";
  for (std::size_t i = 0; i < names.size(); ++i)
    line += " " + names[i] + " " + fmtd(report.mean[i]) + " (ref " + fmtd(paper[i]) + ")";
  return {true, line};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<std::tuple<int, std::string, std::function<Outcome()>>> criteria{
      {1, "weight normalization", weight_normalization},
      {2, "attention composition oracle", attention_composition},
      {3, "gradient correctness", gradient_correctness},
      {4, "loss identities and additivity", loss_identities},
      {5, "metric oracles and anchors", metric_oracles},
      {6, "shape pyramid", shape_pyramid},
      {7, "desk-scale training smoke", training_smoke},
      {8, "ablation wiring", ablation_wiring},
      {9, "determinism and persistence", persistence},
      {10, "reference regression (non-gating)", reference_report},
  };
  int failed = 0;
  for (const auto& [id, name, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool gating = id != 10;
    const char* verdict = o.pass ? "PASS" : (gating ? "FAIL" : "INFO");
    if (!gating && o.pass) verdict = "INFO";
    std::printf("criterion %2d %s  %s: %s [%.1fs]\n", id, verdict, name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    if (gating && !o.pass) ++failed;
  }
  std::printf("%d gating criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
