#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "mda/backbone.hpp"
#include "mda/infoweights.hpp"
#include "mda/losses.hpp"
#include "mda/network.hpp"

namespace mda {

enum class Ablation { None, FuseSum, FuseConcat, FixedImageWeights, FixedPatchWeights, VggDepth3, VggDepth4 };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

struct TrainConfig {
  int batch_size = 4;
  int epochs = 5;
  int max_steps = 0;  // > 0 overrides the epoch budget
  int crop = 96;
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_grad_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::None;

  std::string data = "synthetic";  // "synthetic" or a manifest.jsonl path
  int synthetic_pairs = 8;
  int synthetic_size = 128;
  std::string backbone = "random";  // "random" or a vgg16 archive path
  std::string out_dir = "runs/default";
  int checkpoint_every = 0;  // 0: only the final checkpoint
  std::string resume;        // checkpoint path to continue from

  LossConfig loss;
  InfoConfig info;
  NetConfig net;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

TrainConfig load_train_config(const std::filesystem::path& path);
/// Applies one "dotted.key=value" override. The value is parsed as JSON when
/// possible, otherwise taken as a string. Unknown keys raise PreconditionError.
void apply_override(TrainConfig& cfg, const std::string& assignment);

/// CRC-32 (hex) of the fields that define the optimization trajectory; run
/// control fields (step budget, output paths) are excluded.
std::string config_hash(const TrainConfig& cfg);

/// The wiring an ablation selects.
struct Pipeline {
  NetConfig net;
  InfoConfig info;
  bool adaptive_image = true;
  bool adaptive_patch = true;
  int backbone_depth = 2;  // stages materialized: style needs 2, weights need info.vgg_depth
};

Pipeline apply_ablation(const TrainConfig& cfg);

struct StepRecord {
  std::int64_t step = 0;
  double total = 0, image = 0, patch = 0, feature = 0, style = 0;
  WeightSet weights;  // batch mean of the image-level weights

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

std::string csv_header();
std::string csv_row(const StepRecord& r);

/// Adam with bias correction.
class Adam {
 public:
  Adam() = default;
  Adam(const ModelParams& p, double lr, double beta1, double beta2, double eps);
  void step(ModelParams& p);

  std::int64_t t = 0;
  std::vector<Tensor> m, v;
  double lr = 1e-5, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// The (image index, crop seed) pair for batch slot `slot` of step `step`.
/// Depends only on (seed, step, slot), so resumed runs see the same data.
struct BatchSlot {
  std::size_t index = 0;
  std::uint64_t crop_seed = 0;
};
BatchSlot batch_slot(std::uint64_t seed, std::int64_t step, int slot, int batch_size, std::size_t dataset_size);

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<ImagePair> data, BackboneWeights backbone);

  /// One optimization step over a batch; throws NumericError (after writing
  /// a diagnostic dump into out_dir) when a loss or gradient is not finite.
  StepRecord step();

  std::int64_t steps_done() const { return step_; }
  std::int64_t total_steps() const;
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  const Adam& optimizer() const { return adam_; }
  const TrainConfig& config() const { return cfg_; }
  const Pipeline& pipeline() const { return pipe_; }
  const std::vector<StepRecord>& history() const { return history_; }
  const BackboneWeights& backbone() const { return backbone_; }

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores parameters, optimizer state and step counter. The checkpoint's
  /// config hash must match this trainer's.
  void load_checkpoint(const std::filesystem::path& path);

  /// Loss breakdown for one (already cropped) pair under the current
  /// parameters, without updating anything.
  LossBreakdown evaluate(const ImagePair& crop);

 private:
  [[noreturn]] void numeric_failure(const std::string& what, const std::vector<ImagePair>& batch,
                                    const std::vector<LossBreakdown>& parts) const;

  TrainConfig cfg_;
  Pipeline pipe_;
  std::vector<ImagePair> data_;
  BackboneWeights backbone_;
  ModelParams params_;
  Adam adam_;
  std::int64_t step_ = 0;
  std::vector<StepRecord> history_;
};

/// Dataset named by cfg.data: synthetic pairs or a manifest.
std::vector<ImagePair> load_training_data(const TrainConfig& cfg);

struct TrainResult {
  std::vector<StepRecord> history;
  std::filesystem::path final_checkpoint;
  std::filesystem::path loss_csv;
  std::filesystem::path run_manifest;
};

/// Full driver: loads data and backbone, resumes if requested, trains to the
/// step budget, writes loss.csv, run.json and checkpoints under out_dir.
TrainResult train(const TrainConfig& cfg, const std::function<void(const StepRecord&)>& on_step = {});

}  // namespace mda
