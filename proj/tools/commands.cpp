#include "commands.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "mda/archive.hpp"
#include "mda/backbone.hpp"
#include "mda/error.hpp"
#include "mda/infoweights.hpp"
#include "mda/metrics.hpp"
#include "mda/network.hpp"
#include "mda/trainer.hpp"

namespace fs = std::filesystem;

namespace mda::cli {

namespace {

struct FuseArgs {
  std::string ir, vis, manifest, ckpt, out;
  bool gray = false;
};

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  int log_every = 10;
};

struct EvalArgs {
  std::string manifest, fused, out, metrics;
};

struct AttnArgs {
  std::string ir, vis, ckpt, out;
};

struct WeightsArgs {
  std::string ir, vis, out, backbone = "random";
  std::uint64_t seed = 0;
  int vgg_depth = 2;
};

struct FixtureArgs {
  std::string out;
  int n = 0;
  std::uint64_t seed = 0;
  int size = 128;
};

std::string stem_id(const std::string& path) { return fs::path(path).stem().string(); }

std::vector<ManifestEntry> fuse_inputs(const FuseArgs& a) {
  const bool single = !a.ir.empty() || !a.vis.empty();
  if (single == !a.manifest.empty())
    throw UsageError("fuse needs either --ir and --vis, or --manifest");
  if (!single) return read_manifest_jsonl(a.manifest).entries;
  if (a.ir.empty() || a.vis.empty()) throw UsageError("fuse needs both --ir and --vis");
  return {{stem_id(a.ir), a.ir, a.vis}};
}

int cmd_fuse(const FuseArgs& a) {
  const auto entries = fuse_inputs(a);
  const ModelParams params = load_params(a.ckpt);
  fs::create_directories(a.out);
  if (a.gray) fs::create_directories(fs::path(a.out) / "y");
  for (const auto& e : entries) {
    const ImagePair pair = load_pair(e.ir, e.vis, e.id);
    const GrayImage y = fuse_y(pair.ir, pair.vis_y, params);
    const fs::path color = fs::path(a.out) / (e.id + ".png");
    save_color(color, ycbcr_to_rgb(y, pair.vis_cb, pair.vis_cr));
    if (a.gray) save_gray(fs::path(a.out) / "y" / (e.id + ".png"), y);
    std::cout << color.string() << '\n';
  }
  spdlog::info("fused {} pair(s) into {}", entries.size(), a.out);
  return kExitOk;
}

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = load_train_config(a.config);
  for (const auto& s : a.sets) {
    try {
      apply_override(cfg, s);
    } catch (const PreconditionError& e) {
      throw UsageError(e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const PreconditionError& e) {
    throw UsageError(e.what());
  }
  const int every = std::max(1, a.log_every);
  const TrainResult r = train(cfg, [&](const StepRecord& s) {
    if (s.step % every == 0)
      spdlog::info("step {} total {:.6g} image {:.4g} patch {:.4g} feature {:.4g} style {:.4g}", s.step, s.total, s.image,
                   s.patch, s.feature, s.style);
  });
  std::cout << "steps_done " << (r.history.empty() ? 0 : r.history.back().step + 1) << '\n'
            << "checkpoint " << r.final_checkpoint.string() << '\n'
            << "loss_csv " << r.loss_csv.string() << '\n';
  return kExitOk;
}

int cmd_eval(const EvalArgs& a) {
  std::vector<std::string> names;
  try {
    names = metrics::parse_list(a.metrics);
  } catch (const PreconditionError& e) {
    throw UsageError(e.what());
  }
  const auto report = metrics::evaluate_dataset(read_manifest_jsonl(a.manifest), a.fused, names);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  if (out.extension() == ".json")
    report.write_json(out);
  else
    report.write_csv(out);
  for (std::size_t i = 0; i < names.size(); ++i) std::cout << names[i] << ' ' << report.mean[i] << '\n';
  return kExitOk;
}

// Channels tiled row-major into a near-square grid, each normalized to its
// own range; constant channels keep their raw value.
GrayImage channel_grid(const Tensor& maps) {
  const int c = maps.channels(), h = maps.height(), w = maps.width();
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(c))));
  const int rows = (c + cols - 1) / cols;
  std::vector<double> px(static_cast<std::size_t>(rows) * h * cols * w, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    const auto plane = maps.plane(ch);
    const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
    const double range = *hi - *lo;
    const int r0 = (ch / cols) * h, c0 = (ch % cols) * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = plane[static_cast<std::size_t>(y) * w + x];
        px[static_cast<std::size_t>(r0 + y) * cols * w + c0 + x] =
            range > 1e-12 ? (v - *lo) / range : std::clamp(v, 0.0, 1.0);
      }
  }
  return GrayImage(rows * h, cols * w, std::move(px));
}

int cmd_attn_dump(const AttnArgs& a) {
  const ModelParams params = load_params(a.ckpt);
  if (params.config.fusion != FusionMode::Attention)
    throw Error("model uses " + to_string(params.config.fusion) + " fusion and has no attention maps");
  const ImagePair pair = load_pair(a.ir, a.vis, stem_id(a.ir));
  const int pb = (4 - pair.height() % 4) % 4, pr = (4 - pair.width() % 4) % 4;
  ag::NoGradGuard guard;
  const ForwardResult fwd = forward(ag::Var::constant(pad_reflect(pair.ir.tensor(), pb, pr)),
                                    ag::Var::constant(pad_reflect(pair.vis_y.tensor(), pb, pr)), params);
  fs::create_directories(a.out);
  Archive dump;
  dump.kind = "mda_attention";
  dump.meta["id"] = pair.id;
  dump.meta["padded_size"] = {pair.height() + pb, pair.width() + pr};
  for (int k = 0; k < 5; ++k) {
    const AttentionMaps& m = fwd.blocks[k].attention;
    const std::string block = "fuse" + std::to_string(k + 1);
    save_gray(fs::path(a.out) / (block + "_sm_ir.png"), channel_grid(m.sm_ir.value()));
    save_gray(fs::path(a.out) / (block + "_sm_vis.png"), channel_grid(m.sm_vis.value()));
    dump.put(block + "/sm_ir", m.sm_ir.value());
    dump.put(block + "/sm_vis", m.sm_vis.value());
    dump.put(block + "/cm_ir", m.cm_ir.value());
    dump.put(block + "/cm_vis", m.cm_vis.value());
  }
  save_archive(fs::path(a.out) / "attention.mda", dump);
  std::cout << (fs::path(a.out) / "attention.mda").string() << '\n';
  return kExitOk;
}

int cmd_weights_dump(const WeightsArgs& a) {
  InfoConfig info;
  info.vgg_depth = a.vgg_depth;
  try {
    info.validate();
  } catch (const PreconditionError& e) {
    throw UsageError(e.what());
  }
  const ImagePair pair = load_pair(a.ir, a.vis, stem_id(a.ir));
  const BackboneWeights backbone = load_backbone(a.backbone, a.seed, std::max(2, info.vgg_depth));
  const WeightSet w = image_weights(pair.ir, pair.vis_y, backbone, info);
  const PatchWeightGrid grid = patch_weights(pair.ir, pair.vis_y, info);
  fs::create_directories(a.out);
  nlohmann::json j = w;
  j["id"] = pair.id;
  j["grid"] = {{"rows", grid.rows}, {"cols", grid.cols}, {"window", grid.window}, {"stride", grid.stride}};
  std::ofstream(fs::path(a.out) / "weights.json") << j.dump(2) << '\n';
  std::ofstream csv(fs::path(a.out) / "patch_weights.csv");
  csv << "row,col,y,x,int_ir,int_vis,grad_ir,grad_vis\n";
  csv.precision(17);
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    const auto& c = grid.cells[i];
    csv << i / grid.cols << ',' << i % grid.cols << ',' << grid.origins[i].y << ',' << grid.origins[i].x << ','
        << c.int_ir << ',' << c.int_vis << ',' << c.grad_ir << ',' << c.grad_vis << '\n';
  }
  std::cout << j.dump() << '\n';
  return kExitOk;
}

int cmd_make_fixtures(const FixtureArgs& a) {
  if (a.n < 1) throw UsageError("--n must be at least 1");
  if (a.size < 32) throw UsageError("--size must be at least 32");
  const fs::path root(a.out);
  fs::create_directories(root / "ir");
  fs::create_directories(root / "vis");
  DatasetManifest m;
  m.root = root;
  for (int i = 0; i < a.n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "pair_%03d", i);
    const ImagePair p = make_synthetic_pair({a.size, a.size, a.seed * 7919 + static_cast<std::uint64_t>(i)});
    const fs::path ir = root / "ir" / (std::string(id) + ".png"), vis = root / "vis" / (std::string(id) + ".png");
    save_gray(ir, p.ir);
    save_color(vis, p.vis);
    m.entries.push_back({id, fs::path("ir") / ir.filename(), fs::path("vis") / vis.filename()});
  }
  write_manifest_jsonl(m, root / "manifest.jsonl");
  std::cout << (root / "manifest.jsonl").string() << '\n';
  return kExitOk;
}

spdlog::level::level_enum parse_level(const std::string& s) {
  const auto lvl = spdlog::level::from_str(s);
  if (lvl == spdlog::level::off && s != "off") throw UsageError("unknown log level '" + s + "'");
  return lvl;
}

}  // namespace

int run(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("mda"));

  CLI::App app{"MDA infrared-visible image fusion"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string level = "info";
  app.add_option("--log-level", level, "trace, debug, info, warn, error or off")->capture_default_str();

  FuseArgs fa;
  auto* fuse = app.add_subcommand("fuse", "Fuse one pair or every pair of a manifest");
  fuse->add_option("--ir", fa.ir, "Infrared image")->check(CLI::ExistingFile);
  fuse->add_option("--vis", fa.vis, "Visible image")->check(CLI::ExistingFile);
  fuse->add_option("--manifest", fa.manifest, "manifest.jsonl of pairs")->check(CLI::ExistingFile);
  fuse->add_option("--ckpt", fa.ckpt, "Model or training checkpoint")->required()->check(CLI::ExistingFile);
  fuse->add_option("--out", fa.out, "Output directory")->required();
  fuse->add_flag("--gray", fa.gray, "Also write the fused Y plane under <out>/y/");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train from a JSON config");
  tr->add_option("--config", ta.config, "Train config JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--set", ta.sets, "Override a config field, e.g. --set loss.beta=1e5");
  tr->add_option("--log-every", ta.log_every, "Log every N steps")->capture_default_str();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Compute fusion metrics over a manifest");
  ev->add_option("--manifest", ea.manifest, "manifest.jsonl of source pairs")->required()->check(CLI::ExistingFile);
  ev->add_option("--fused", ea.fused, "Directory of <id>.png fused images")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out", ea.out, "Report path (.csv or .json)")->required();
  ev->add_option("--metrics", ea.metrics, "Comma-separated subset of en,vif,scd,mse,ag,cc,qabf,sd");

  AttnArgs aa;
  auto* at = app.add_subcommand("attn-dump", "Write spatial attention maps of every fusion block");
  at->add_option("--ir", aa.ir, "Infrared image")->required()->check(CLI::ExistingFile);
  at->add_option("--vis", aa.vis, "Visible image")->required()->check(CLI::ExistingFile);
  at->add_option("--ckpt", aa.ckpt, "Model or training checkpoint")->required()->check(CLI::ExistingFile);
  at->add_option("--out", aa.out, "Output directory")->required();

  WeightsArgs wa;
  auto* wd = app.add_subcommand("weights-dump", "Write image- and patch-level loss weights of a pair");
  wd->add_option("--ir", wa.ir, "Infrared image")->required()->check(CLI::ExistingFile);
  wd->add_option("--vis", wa.vis, "Visible image")->required()->check(CLI::ExistingFile);
  wd->add_option("--out", wa.out, "Output directory")->required();
  wd->add_option("--backbone", wa.backbone, "\"random\" or a vgg16 weight archive")->capture_default_str();
  wd->add_option("--seed", wa.seed, "Seed of the random backbone")->capture_default_str();
  wd->add_option("--vgg-depth", wa.vgg_depth, "Pooling stages averaged")->capture_default_str();

  FixtureArgs xa;
  auto* mf = app.add_subcommand("make-fixtures", "Write synthetic pairs and a manifest");
  mf->add_option("--out", xa.out, "Output directory")->required();
  mf->add_option("--n", xa.n, "Number of pairs")->required();
  mf->add_option("--seed", xa.seed, "Seed")->required();
  mf->add_option("--size", xa.size, "Image side length")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    spdlog::set_level(parse_level(level));
    if (*fuse) return cmd_fuse(fa);
    if (*tr) return cmd_train(ta);
    if (*ev) return cmd_eval(ea);
    if (*at) return cmd_attn_dump(aa);
    if (*wd) return cmd_weights_dump(wa);
    if (*mf) return cmd_make_fixtures(xa);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace mda::cli
