#pragma once

#include <nlohmann/json.hpp>
#include <span>
#include <utility>
#include <vector>

#include "mda/backbone.hpp"
#include "mda/image.hpp"

namespace mda {

struct InfoConfig {
  double delta = 0.167;  // std weight next to entropy / window mean
  double c_int = 3e3;    // softmax temperature for intensity weights
  double c_grad = 3e3;   // softmax temperature for gradient weights
  int entropy_bins = 256;
  double log_sigma = 1.0;
  int log_size = 7;
  int window = 21;
  int stride = 21;
  int vgg_depth = 2;  // pooling stages averaged in the image-level statistics

  void validate() const;
};

void to_json(nlohmann::json& j, const InfoConfig& c);
void from_json(const nlohmann::json& j, InfoConfig& c);

/// Complementary-information weights for one image pair. Each modality pair
/// sums to one.
struct WeightSet {
  double int_ir = 0.5;
  double int_vis = 0.5;
  double grad_ir = 0.5;
  double grad_vis = 0.5;

  friend bool operator==(const WeightSet&, const WeightSet&) = default;
};

void to_json(nlohmann::json& j, const WeightSet& w);

/// Per-window weights on a non-overlapping (by default) grid. Partial
/// windows at the right/bottom edges are discarded.
struct PatchWeightGrid {
  int window = 21;
  int stride = 21;
  int rows = 0;
  int cols = 0;
  std::vector<CropOrigin> origins;  // row-major, rows·cols entries
  std::vector<WeightSet> cells;

  /// Grid geometry for an h×w image with every cell at 0.5.
  static PatchWeightGrid uniform(int height, int width, int window, int stride);
};

/// Shannon entropy (bits) of a min-max normalized histogram; constant maps
/// have entropy 0. Throws PreconditionError on empty input.
double feature_entropy(std::span<const double> values, int bins = 256);

double population_std(std::span<const double> values);

/// Mean squared response of the LoG filter (replicate border) over an h×w
/// map. The map must be at least kernel-sized.
double log_gradient_energy(std::span<const double> plane, int height, int width, const InfoConfig& cfg = {});

/// Stage- and channel-averaged entropy + delta·std of perceptual features.
double intensity_statistic(const PerceptualFeatures& feats, const InfoConfig& cfg);
/// Stage- and channel-averaged LoG gradient energy of perceptual features.
double gradient_statistic(const PerceptualFeatures& feats, const InfoConfig& cfg);

/// Two-way softmax of (a/c, b/c), stabilized by max subtraction.
std::pair<double, double> tempered_softmax(double a, double b, double c);

WeightSet weights_from_features(const PerceptualFeatures& ir, const PerceptualFeatures& vis, const InfoConfig& cfg);

/// Image-level weights from VGG features of both inputs (depth cfg.vgg_depth).
WeightSet image_weights(const GrayImage& ir, const GrayImage& vis_y, const BackboneWeights& backbone,
                        const InfoConfig& cfg);

/// Window-level weights from raw pixels: mean + delta·std for intensity,
/// LoG energy for gradient, each passed through the tempered softmax.
PatchWeightGrid patch_weights(const GrayImage& ir, const GrayImage& vis_y, const InfoConfig& cfg);

}  // namespace mda
