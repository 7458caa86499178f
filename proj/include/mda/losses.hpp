#pragma once

#include <array>
#include <nlohmann/json.hpp>

#include "mda/backbone.hpp"
#include "mda/infoweights.hpp"
#include "mda/network.hpp"

namespace mda {

struct LossConfig {
  double alpha = 1e-8;  // feature loss weight
  double beta = 1e7;    // style loss weight
  double gamma = 2.0;   // patch loss weight inside the pixel loss
  double eta = 0.02;    // intensity term inside the feature loss
  double zeta = 20.0;   // intensity term inside image/patch losses
  std::array<double, 5> lambda{1.0, 1.0, 1.0, 1.0, 1.0};
  int ssim_window = 11;
  double ssim_sigma = 1.5;
  double ssim_k1 = 0.01;
  double ssim_k2 = 0.03;

  void validate() const;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

struct SsimResult {
  double mssim = 0.0;
  Tensor map;  // (1, H-k+1, W-k+1)
};

/// Gaussian-window SSIM with 'valid' filtering and dynamic range 1.
SsimResult ssim(const GrayImage& x, const GrayImage& y, const LossConfig& cfg = {});

/// Differentiable local SSIM map of two (1,H,W) maps.
ag::Var ssim_map(const ag::Var& x, const ag::Var& y, const LossConfig& cfg = {});
ag::Var mssim(const ag::Var& x, const ag::Var& y, const LossConfig& cfg = {});

/// Σ grad weight·(1 − MSSIM) + ζ·Σ int weight·MSE, over the whole map.
ag::Var region_loss(const ag::Var& fused, const ag::Var& ir, const ag::Var& vis_y, const WeightSet& w,
                    const LossConfig& cfg);

ag::Var image_loss(const ag::Var& fused, const ag::Var& ir, const ag::Var& vis_y, const WeightSet& w,
                   const LossConfig& cfg);

/// Mean of region_loss over the grid windows, each with its own weights.
ag::Var patch_loss(const ag::Var& fused, const ag::Var& ir, const ag::Var& vis_y, const PatchWeightGrid& grid,
                   const LossConfig& cfg);

/// Σ_t λ_t (mean((LoG M − LoG F_vis)²) + η·mean((M − F_ir)²)) over the five
/// fusion blocks, with F taken as the inputs each block consumed.
ag::Var feature_loss(const std::array<BlockTrace, 5>& blocks, const LossConfig& cfg);

/// Σ over the first two VGG stages of the squared Frobenius distance between
/// Gram matrices of the infrared and fused features.
ag::Var style_loss(const ag::Var& fused, const ag::Var& ir, const BackboneWeights& backbone);
/// Same, reusing already extracted infrared features (at least two stages).
ag::Var style_loss(const ag::Var& fused, const std::vector<Tensor>& ir_features, const BackboneWeights& backbone);

struct LossBreakdown {
  double total = 0.0;
  double pixel = 0.0;
  double image = 0.0;
  double patch = 0.0;
  double feature = 0.0;
  double style = 0.0;
  WeightSet weights;
  PatchWeightGrid grid;
  ag::Var graph;  // differentiable total
};

/// `ir_features`, when given, are the infrared VGG stages used for the style
/// term instead of recomputing them.
LossBreakdown total_loss(const ForwardResult& fwd, const ag::Var& ir, const ag::Var& vis_y, const WeightSet& weights,
                         const PatchWeightGrid& grid, const BackboneWeights& backbone, const LossConfig& cfg,
                         const std::vector<Tensor>* ir_features = nullptr);

}  // namespace mda
