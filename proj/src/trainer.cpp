#include "mda/trainer.hpp"

#include <algorithm>
#include <boost/crc.hpp>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <numeric>
#include <random>
#include <spdlog/spdlog.h>

#include "mda/archive.hpp"
#include "mda/error.hpp"

namespace mda {

namespace {

const std::vector<std::pair<Ablation, std::string>>& ablation_names() {
  static const std::vector<std::pair<Ablation, std::string>> names{
      {Ablation::None, "none"},
      {Ablation::FuseSum, "fuse_sum"},
      {Ablation::FuseConcat, "fuse_concat"},
      {Ablation::FixedImageWeights, "fixed_image_weights"},
      {Ablation::FixedPatchWeights, "fixed_patch_weights"},
      {Ablation::VggDepth3, "vgg_depth_3"},
      {Ablation::VggDepth4, "vgg_depth_4"},
  };
  return names;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::string to_string(Ablation a) {
  for (const auto& [v, n] : ablation_names())
    if (v == a) return n;
  return "none";
}

Ablation ablation_from_string(const std::string& s) {
  for (const auto& [v, n] : ablation_names())
    if (n == s) return v;
  throw PreconditionError("unknown ablation '" + s + "'");
}

void TrainConfig::validate() const {
  MDA_REQUIRE(batch_size >= 1, PreconditionError, "batch_size must be at least 1");
  MDA_REQUIRE(crop >= 21 && crop % 4 == 0, PreconditionError, "crop must be divisible by 4 and at least 21");
  MDA_REQUIRE(crop >= info.window, PreconditionError, "crop must cover at least one patch window");
  MDA_REQUIRE(epochs >= 1 && max_steps >= 0, PreconditionError, "epochs must be positive, max_steps non-negative");
  MDA_REQUIRE(learning_rate > 0 && beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0,
              PreconditionError, "invalid optimizer settings");
  MDA_REQUIRE(clip_grad_norm >= 0 && checkpoint_every >= 0, PreconditionError,
              "clip_grad_norm and checkpoint_every must be non-negative");
  MDA_REQUIRE(synthetic_pairs >= 1 && synthetic_size >= crop, PreconditionError,
              "synthetic data needs at least one pair no smaller than the crop");
  loss.validate();
  info.validate();
  net.validate();
  const Pipeline pipe = apply_ablation(*this);
  MDA_REQUIRE((crop >> (pipe.info.vgg_depth - 1)) >= info.log_size, PreconditionError,
              "crop " + std::to_string(crop) + " leaves VGG stage " + std::to_string(pipe.info.vgg_depth) +
                  " smaller than the LoG kernel");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"max_steps", c.max_steps},
       {"crop", c.crop},
       {"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"clip_grad_norm", c.clip_grad_norm},
       {"seed", c.seed},
       {"ablation", to_string(c.ablation)},
       {"data", c.data},
       {"synthetic_pairs", c.synthetic_pairs},
       {"synthetic_size", c.synthetic_size},
       {"backbone", c.backbone},
       {"out_dir", c.out_dir},
       {"checkpoint_every", c.checkpoint_every},
       {"resume", c.resume},
       {"loss", c.loss},
       {"info", c.info},
       {"net", c.net}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  MDA_REQUIRE(j.is_object(), PreconditionError, "train config must be a JSON object");
  const nlohmann::json defaults = TrainConfig{};
  for (const auto& [key, value] : j.items())
    MDA_REQUIRE(defaults.contains(key), PreconditionError, "unknown train config key '" + key + "'");
  TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.crop = j.value("crop", d.crop);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.clip_grad_norm = j.value("clip_grad_norm", d.clip_grad_norm);
  c.seed = j.value("seed", d.seed);
  c.ablation = ablation_from_string(j.value("ablation", to_string(d.ablation)));
  c.data = j.value("data", d.data);
  c.synthetic_pairs = j.value("synthetic_pairs", d.synthetic_pairs);
  c.synthetic_size = j.value("synthetic_size", d.synthetic_size);
  c.backbone = j.value("backbone", d.backbone);
  c.out_dir = j.value("out_dir", d.out_dir);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.resume = j.value("resume", d.resume);
  c.loss = j.contains("loss") ? j.at("loss").get<LossConfig>() : d.loss;
  c.info = j.contains("info") ? j.at("info").get<InfoConfig>() : d.info;
  c.net = j.contains("net") ? j.at("net").get<NetConfig>() : d.net;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  MDA_REQUIRE(in, Error, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw PreconditionError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  TrainConfig c = j.get<TrainConfig>();
  c.validate();
  return c;
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  MDA_REQUIRE(eq != std::string::npos && eq > 0, PreconditionError, "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json j = cfg;
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    MDA_REQUIRE(node->is_object() && node->contains(part), PreconditionError, "unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  if (node->is_string() && !value.is_string()) value = raw;
  *node = value;
  cfg = j.get<TrainConfig>();
}

std::string config_hash(const TrainConfig& cfg) {
  nlohmann::json j = cfg;
  for (const char* k : {"max_steps", "epochs", "out_dir", "checkpoint_every", "resume"}) j.erase(k);
  const std::string s = j.dump();
  boost::crc_32_type crc;
  crc.process_bytes(s.data(), s.size());
  return fmt::format("{:08x}", crc.checksum());
}

Pipeline apply_ablation(const TrainConfig& cfg) {
  Pipeline p;
  p.net = cfg.net;
  p.info = cfg.info;
  switch (cfg.ablation) {
    case Ablation::None: break;
    case Ablation::FuseSum: p.net.fusion = FusionMode::Sum; break;
    case Ablation::FuseConcat: p.net.fusion = FusionMode::Concat; break;
    case Ablation::FixedImageWeights: p.adaptive_image = false; break;
    case Ablation::FixedPatchWeights: p.adaptive_patch = false; break;
    case Ablation::VggDepth3: p.info.vgg_depth = 3; break;
    case Ablation::VggDepth4: p.info.vgg_depth = 4; break;
  }
  p.backbone_depth = std::max(2, p.info.vgg_depth);
  return p;
}

std::string csv_header() { return "step,total,image,patch,feature,style,int_ir,int_vis,grad_ir,grad_vis"; }

std::string csv_row(const StepRecord& r) {
  return fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", r.step, r.total,
                     r.image, r.patch, r.feature, r.style, r.weights.int_ir, r.weights.int_vis, r.weights.grad_ir,
                     r.weights.grad_vis);
}

Adam::Adam(const ModelParams& p, double lr_, double b1, double b2, double e) : lr(lr_), beta1(b1), beta2(b2), eps(e) {
  for (const auto& [name, var] : p.entries()) {
    m.emplace_back(var.shape(), 0.0);
    v.emplace_back(var.shape(), 0.0);
  }
}

void Adam::step(ModelParams& p) {
  MDA_REQUIRE(m.size() == p.entries().size(), PreconditionError, "optimizer state does not match the parameters");
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < m.size(); ++i) {
    ag::Var& var = p.entries()[i].second;
    const Tensor g = var.grad();
    Tensor& w = var.mutable_value();
    double* mi = m[i].data();
    double* vi = v[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      mi[k] = beta1 * mi[k] + (1.0 - beta1) * g[k];
      vi[k] = beta2 * vi[k] + (1.0 - beta2) * g[k] * g[k];
      const double mh = mi[k] / bc1, vh = vi[k] / bc2;
      w[k] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

BatchSlot batch_slot(std::uint64_t seed, std::int64_t step, int slot, int batch_size, std::size_t dataset_size) {
  MDA_REQUIRE(dataset_size > 0, EmptyManifestError, "empty training set");
  const std::uint64_t flat = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch_size) +
                             static_cast<std::uint64_t>(slot);
  const std::uint64_t epoch = flat / dataset_size;
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(epoch + 1)));
  std::shuffle(order.begin(), order.end(), rng);
  BatchSlot s;
  s.index = order[flat % dataset_size];
  s.crop_seed = splitmix64(splitmix64(seed + 0x5151) ^ flat);
  return s;
}

Trainer::Trainer(TrainConfig cfg, std::vector<ImagePair> data, BackboneWeights backbone)
    : cfg_(std::move(cfg)), data_(std::move(data)), backbone_(std::move(backbone)) {
  cfg_.validate();
  MDA_REQUIRE(!data_.empty(), EmptyManifestError, "no training pairs");
  for (const auto& p : data_)
    MDA_REQUIRE(p.height() >= cfg_.crop && p.width() >= cfg_.crop, PreconditionError,
                "training pair '" + p.id + "' is smaller than the crop size");
  pipe_ = apply_ablation(cfg_);
  MDA_REQUIRE(backbone_.depth() >= pipe_.backbone_depth, PreconditionError,
              "backbone has fewer stages than the pipeline needs");
  params_ = init_params(pipe_.net, cfg_.seed);
  adam_ = Adam(params_, cfg_.learning_rate, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);
}

std::int64_t Trainer::total_steps() const {
  if (cfg_.max_steps > 0) return cfg_.max_steps;
  const auto per_epoch = static_cast<std::int64_t>((data_.size() + cfg_.batch_size - 1) / cfg_.batch_size);
  return per_epoch * cfg_.epochs;
}

LossBreakdown Trainer::evaluate(const ImagePair& crop) {
  const int depth = std::max(2, pipe_.info.vgg_depth);
  PerceptualFeatures ir_feats = extract_features(crop.ir, backbone_, depth, SourceTag::Ir);
  WeightSet w;
  if (pipe_.adaptive_image) {
    PerceptualFeatures a = ir_feats, b = extract_features(crop.vis_y, backbone_, pipe_.info.vgg_depth, SourceTag::Vis);
    a.stages.resize(static_cast<std::size_t>(pipe_.info.vgg_depth));
    w = weights_from_features(a, b, pipe_.info);
  }
  const PatchWeightGrid grid = pipe_.adaptive_patch
                                   ? patch_weights(crop.ir, crop.vis_y, pipe_.info)
                                   : PatchWeightGrid::uniform(crop.height(), crop.width(), pipe_.info.window,
                                                              pipe_.info.stride);
  ag::Var ir = ag::Var::constant(crop.ir.tensor());
  ag::Var vis = ag::Var::constant(crop.vis_y.tensor());
  ForwardResult fwd = forward(ir, vis, params_);
  return total_loss(fwd, ir, vis, w, grid, backbone_, cfg_.loss, &ir_feats.stages);
}

void Trainer::numeric_failure(const std::string& what, const std::vector<ImagePair>& batch,
                              const std::vector<LossBreakdown>& parts) const {
  std::filesystem::create_directories(cfg_.out_dir);
  const auto dump = std::filesystem::path(cfg_.out_dir) / fmt::format("nan_dump_step{}", step_);
  nlohmann::json j;
  j["step"] = step_;
  j["reason"] = what;
  j["items"] = nlohmann::json::array();
  Archive a;
  a.kind = "mda_nan_dump";
  for (std::size_t i = 0; i < batch.size(); ++i) {
    nlohmann::json item{{"id", batch[i].id}};
    if (i < parts.size()) {
      const auto& b = parts[i];
      item["terms"] = {{"total", b.total}, {"image", b.image}, {"patch", b.patch},
                       {"feature", b.feature}, {"style", b.style}};
      item["weights"] = b.weights;
    }
    j["items"].push_back(item);
    a.put(fmt::format("{}/ir", i), batch[i].ir.tensor());
    a.put(fmt::format("{}/vis_y", i), batch[i].vis_y.tensor());
  }
  a.meta = j;
  save_archive(dump.string() + ".mda", a);
  std::ofstream(dump.string() + ".json") << j.dump(2) << '\n';
  spdlog::error("{} at step {}; diagnostics written to {}.json", what, step_, dump.string());
  throw NumericError(fmt::format("{} at step {} (see {}.json)", what, step_, dump.string()));
}

StepRecord Trainer::step() {
  params_.zero_grad();
  std::vector<ImagePair> batch;
  std::vector<LossBreakdown> parts;
  for (int s = 0; s < cfg_.batch_size; ++s) {
    const BatchSlot slot = batch_slot(cfg_.seed, step_, s, cfg_.batch_size, data_.size());
    batch.push_back(crop_patch(data_[slot.index], cfg_.crop, slot.crop_seed));
  }
  const double inv = 1.0 / cfg_.batch_size;
  for (const ImagePair& crop : batch) {
    LossBreakdown b = evaluate(crop);
    parts.push_back(b);
    if (!std::isfinite(b.total)) numeric_failure("non-finite loss", batch, parts);
    ag::backward(b.graph, inv);
    parts.back().graph = {};
  }
  double norm_sq = 0.0;
  for (auto& [name, var] : params_.entries()) {
    const Tensor g = var.grad();
    for (double x : g.span()) norm_sq += x * x;
  }
  if (!std::isfinite(norm_sq)) numeric_failure("non-finite gradient", batch, parts);
  if (cfg_.clip_grad_norm > 0.0 && std::sqrt(norm_sq) > cfg_.clip_grad_norm) {
    const double f = cfg_.clip_grad_norm / std::sqrt(norm_sq);
    for (auto& [name, var] : params_.entries()) {
      Tensor g = var.grad();
      for (double& x : g.vec()) x *= f;
      var.zero_grad();
      var.node()->accumulate(g);
    }
  }
  adam_.step(params_);
  if (!params_.all_finite()) numeric_failure("non-finite parameters after update", batch, parts);

  StepRecord r;
  r.step = step_;
  r.weights = {0, 0, 0, 0};
  for (const auto& b : parts) {
    r.total += b.total * inv;
    r.image += b.image * inv;
    r.patch += b.patch * inv;
    r.feature += b.feature * inv;
    r.style += b.style * inv;
    r.weights.int_ir += b.weights.int_ir * inv;
    r.weights.int_vis += b.weights.int_vis * inv;
    r.weights.grad_ir += b.weights.grad_ir * inv;
    r.weights.grad_vis += b.weights.grad_vis * inv;
  }
  ++step_;
  history_.push_back(r);
  params_.zero_grad();
  return r;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  Archive a;
  a.kind = "mda_checkpoint";
  nlohmann::json names = nlohmann::json::array();
  for (std::size_t i = 0; i < params_.entries().size(); ++i) {
    const auto& [name, var] = params_.entries()[i];
    names.push_back(name);
    a.put("model/" + name, var.value());
    a.put("adam_m/" + name, adam_.m[i]);
    a.put("adam_v/" + name, adam_.v[i]);
  }
  a.meta["model"] = {{"net_config", params_.config}, {"names", names}, {"params_checksum", params_.checksum()}};
  a.meta["step"] = step_;
  a.meta["adam_t"] = adam_.t;
  a.meta["config_hash"] = config_hash(cfg_);
  a.meta["config"] = cfg_;
  nlohmann::json tail = nlohmann::json::array();
  const std::size_t from = history_.size() > 20 ? history_.size() - 20 : 0;
  for (std::size_t i = from; i < history_.size(); ++i) tail.push_back({history_[i].step, history_[i].total});
  a.meta["loss_tail"] = tail;
  save_archive(path, a);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  const Archive a = load_archive(path, "mda_checkpoint");
  const std::string hash = a.meta.at("config_hash").get<std::string>();
  MDA_REQUIRE(hash == config_hash(cfg_), PreconditionError,
              "checkpoint " + path.string() + " was written with a different configuration (" + hash + " vs " +
                  config_hash(cfg_) + ")");
  ModelParams loaded = load_params(path);
  MDA_REQUIRE(loaded.config == params_.config, PreconditionError, "checkpoint network config differs");
  for (std::size_t i = 0; i < params_.entries().size(); ++i) {
    const std::string& name = params_.entries()[i].first;
    params_.entries()[i].second.mutable_value() = loaded.get(name).value();
    adam_.m[i] = a.get("adam_m/" + name);
    adam_.v[i] = a.get("adam_v/" + name);
  }
  adam_.t = a.meta.at("adam_t").get<std::int64_t>();
  step_ = a.meta.at("step").get<std::int64_t>();
  history_.clear();
}

std::vector<ImagePair> load_training_data(const TrainConfig& cfg) {
  std::vector<ImagePair> out;
  if (cfg.data == "synthetic") {
    for (int i = 0; i < cfg.synthetic_pairs; ++i)
      out.push_back(make_synthetic_pair({cfg.synthetic_size, cfg.synthetic_size, cfg.seed * 7919 + i}));
    return out;
  }
  const DatasetManifest m = read_manifest_jsonl(cfg.data);
  MDA_REQUIRE(!m.entries.empty(), EmptyManifestError, "manifest " + cfg.data + " has no entries");
  for (const auto& e : m.entries) out.push_back(load_pair(e.ir, e.vis, e.id));
  return out;
}

TrainResult train(const TrainConfig& cfg, const std::function<void(const StepRecord&)>& on_step) {
  cfg.validate();
  const Pipeline pipe = apply_ablation(cfg);
  Trainer trainer(cfg, load_training_data(cfg), load_backbone(cfg.backbone, cfg.seed, pipe.backbone_depth));
  const std::filesystem::path out = cfg.out_dir;
  std::filesystem::create_directories(out);
  if (!cfg.resume.empty()) {
    trainer.load_checkpoint(cfg.resume);
    spdlog::info("resumed from {} at step {}", cfg.resume, trainer.steps_done());
  }

  TrainResult result;
  result.loss_csv = out / "loss.csv";
  result.run_manifest = out / "run.json";
  const bool append = !cfg.resume.empty() && std::filesystem::exists(result.loss_csv);
  std::ofstream csv(result.loss_csv, append ? std::ios::app : std::ios::trunc);
  MDA_REQUIRE(csv, Error, "cannot write " + result.loss_csv.string());
  if (!append) csv << csv_header() << '\n';

  const std::string hash = config_hash(cfg);
  nlohmann::json manifest{{"run_id", fmt::format("{}{:04x}", hash, static_cast<unsigned>(cfg.seed & 0xffff))},
                          {"config_hash", hash},
                          {"seed", cfg.seed},
                          {"ablation", to_string(cfg.ablation)},
                          {"backbone", cfg.backbone},
                          {"backbone_provenance", trainer.backbone().provenance() == Provenance::Pretrained
                                                      ? "pretrained"
                                                      : "random"},
                          {"parameter_count", trainer.params().parameter_count()},
                          {"config", cfg}};
  std::ofstream(result.run_manifest) << manifest.dump(2) << '\n';

  const std::int64_t total = trainer.total_steps();
  spdlog::info("training {} steps (batch {}, crop {}, ablation {})", total - trainer.steps_done(), cfg.batch_size,
               cfg.crop, to_string(cfg.ablation));
  while (trainer.steps_done() < total) {
    const StepRecord r = trainer.step();
    csv << csv_row(r) << '\n';
    csv.flush();
    if (on_step) on_step(r);
    if (cfg.checkpoint_every > 0 && trainer.steps_done() % cfg.checkpoint_every == 0 && trainer.steps_done() < total)
      trainer.save_checkpoint(out / fmt::format("step_{:06d}.ckpt", trainer.steps_done()));
  }
  result.final_checkpoint = out / "final.ckpt";
  trainer.save_checkpoint(result.final_checkpoint);
  result.history = trainer.history();
  spdlog::info("wrote {}", result.final_checkpoint.string());
  return result;
}

}  // namespace mda
