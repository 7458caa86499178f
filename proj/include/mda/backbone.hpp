#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mda/autograd.hpp"
#include "mda/image.hpp"

namespace mda {

enum class Provenance { Pretrained, RandomSeeded };
enum class SourceTag { Ir, Vis, Fused };

/// Frozen VGG-16 convolution stack, grouped by pooling stage. Stage i holds
/// every conv layer before the i-th max-pooling layer.
class BackboneWeights {
 public:
  struct Layer {
    std::string name;  // e.g. "conv2_1"
    ag::Var weight;    // (Cout, Cin, 3, 3)
    ag::Var bias;      // (Cout)
  };

  int depth() const { return static_cast<int>(stages_.size()); }
  const std::vector<Layer>& stage(int i) const { return stages_.at(static_cast<std::size_t>(i)); }
  Provenance provenance() const { return provenance_; }

  /// Stage i (0-based) layer names and channel widths of VGG-16.
  static const std::vector<std::vector<std::string>>& layer_names();
  static int stage_channels(int stage);

  friend BackboneWeights load_backbone(const std::string& source, std::uint64_t seed, int max_depth);
  friend BackboneWeights make_backbone(std::vector<std::vector<Layer>> stages, Provenance p);

 private:
  std::vector<std::vector<Layer>> stages_;
  Provenance provenance_ = Provenance::RandomSeeded;
};

/// `source` is "random" (He-normal kernels, zero biases, deterministic per
/// seed) or a path to a weight archive of kind "vgg16" whose kernels are
/// stored as (kh, kw, Cin, Cout). Only the first `max_depth` stages are
/// materialized. Archive corruption raises IntegrityError.
BackboneWeights load_backbone(const std::string& source, std::uint64_t seed = 0, int max_depth = 2);
BackboneWeights make_backbone(std::vector<std::vector<BackboneWeights::Layer>> stages, Provenance p);

/// Writes weights in the archive layout `load_backbone` reads.
void save_backbone(const std::filesystem::path& path, const BackboneWeights& w);

/// ImageNet statistics of the pretrained distribution.
inline constexpr std::array<double, 3> kVggMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kVggStd{0.229, 0.224, 0.225};

/// Raw stack on an already-normalized (3,H,W) input; returns the ReLU output
/// before each of the first `depth` pooling layers.
std::vector<ag::Var> vgg_forward(const ag::Var& rgb, const BackboneWeights& w, int depth);

/// Gray (1,H,W) input in [0,1] -> replicated, normalized, forwarded.
/// Gradients flow to `gray` when it requires them; backbone weights are frozen.
std::vector<ag::Var> perceptual_features(const ag::Var& gray, const BackboneWeights& w, int depth);

struct PerceptualFeatures {
  std::vector<Tensor> stages;  // stage i: (64·2^i, H/2^i, W/2^i), capped at 512 channels
  SourceTag source = SourceTag::Fused;
};

/// Non-differentiable feature extraction. `depth` must be in 1..5 and not
/// exceed the loaded depth.
PerceptualFeatures extract_features(const GrayImage& img, const BackboneWeights& w, int depth = 2,
                                    SourceTag tag = SourceTag::Fused);

}  // namespace mda
