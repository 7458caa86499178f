#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "mda/autograd.hpp"
#include "mda/image.hpp"

namespace mda {

/// How each fusion block combines its two inputs.
enum class FusionMode {
  Attention,  // channel × spatial attention gating
  Sum,        // f_ir + f_vis
  Concat,     // 3×3 conv over concat(f_ir, f_vis)
};

struct NetConfig {
  int channels = 32;
  int scales = 3;
  int fusion_blocks = 5;
  int reduction = 4;  // channel-attention bottleneck ratio
  FusionMode fusion = FusionMode::Attention;

  void validate() const;
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);
std::string to_string(FusionMode m);
FusionMode fusion_mode_from_string(const std::string& s);

/// Ordered, named learnable tensors plus the configuration they belong to.
class ModelParams {
 public:
  NetConfig config;

  void add(std::string name, Tensor value);
  bool has(const std::string& name) const;
  const ag::Var& get(const std::string& name) const;
  ag::Var& get(const std::string& name);

  std::vector<std::pair<std::string, ag::Var>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, ag::Var>>& entries() const { return entries_; }

  std::size_t parameter_count() const;
  void zero_grad();
  bool all_finite() const;
  /// CRC-32 over every value in entry order.
  std::uint32_t checksum() const;
  ModelParams clone() const;

 private:
  std::vector<std::pair<std::string, ag::Var>> entries_;
};

/// Kaiming-uniform kernels (PReLU slope 0.25), zero biases, slopes 0.25.
ModelParams init_params(const NetConfig& cfg, std::uint64_t seed);

void save_params(const std::filesystem::path& path, const ModelParams& params);
/// Accepts a model archive or a training checkpoint (whose model arrays are
/// prefixed "model/").
ModelParams load_params(const std::filesystem::path& path);

struct AttentionMaps {
  ag::Var cm_ir, cm_vis;  // (C)
  ag::Var sm_ir, sm_vis;  // (C,H,W)
};

/// Per-scale features of one modality: (C,H,W), (C,H/2,W/2), (C,H/4,W/4).
struct FeaturePyramid {
  std::array<ag::Var, 3> levels;
};

/// Record of one fusion block: the two inputs it fused (infrared already
/// upsampled for the adjacent-scale blocks), its attention maps and output.
struct BlockTrace {
  ag::Var in_ir;
  ag::Var in_vis;
  ag::Var out;
  AttentionMaps attention;  // undefined Vars unless fusion == Attention
};

struct ForwardResult {
  ag::Var fused;  // (1,H,W) in [0,1]
  FeaturePyramid pyr_ir, pyr_vis;
  std::array<BlockTrace, 5> blocks;  // M1..M5
};

// ---- building blocks (exposed for tests) ----

/// 3×3 conv 1→C followed by PReLU. `branch` is "ir" or "vis".
ag::Var stem(const ag::Var& img, const ModelParams& p, const std::string& branch);

/// Three residual streams with strides 1, 2, 4. H and W must be divisible by 4.
FeaturePyramid downsample_pyramid(const ag::Var& f, const ModelParams& p, const std::string& branch);

std::pair<ag::Var, ag::Var> channel_attention(const ag::Var& f_ir, const ag::Var& f_vis, const ModelParams& p,
                                              const std::string& block);
std::pair<ag::Var, ag::Var> spatial_attention(const ag::Var& f_ir, const ag::Var& f_vis, const ModelParams& p,
                                              const std::string& block);

/// cm_ir ⊗ (sm_ir ⊗ f_ir) + cm_vis ⊗ (sm_vis ⊗ f_vis), channel maps broadcast
/// over space.
ag::Var compose_attention(const ag::Var& f_ir, const ag::Var& f_vis, const AttentionMaps& maps);

/// One fusion block. `f_ir` may be half the resolution of `f_vis`; it is then
/// upsampled (bilinear + 3×3 conv) first. Uses `p.config.fusion`.
BlockTrace fuse_block(const ag::Var& f_ir, const ag::Var& f_vis, const ModelParams& p, int block_index);

ForwardResult forward(const ag::Var& ir, const ag::Var& vis_y, const ModelParams& p);
ForwardResult forward(const ImagePair& pair, const ModelParams& p);

/// Inference on any size: reflect-pads to a multiple of 4, crops back.
GrayImage fuse_y(const GrayImage& ir, const GrayImage& vis_y, const ModelParams& p);
/// Fused Y restacked with the visible Cb/Cr planes.
ColorImage fuse_color(const ImagePair& pair, const ModelParams& p);

/// Reflect padding of a (C,H,W) tensor on the bottom/right edges.
Tensor pad_reflect(const Tensor& x, int pad_bottom, int pad_right);

}  // namespace mda
