#include "mda/infoweights.hpp"

#include <algorithm>
#include <cmath>

#include "mda/error.hpp"
#include "mda/filters.hpp"

namespace mda {

void InfoConfig::validate() const {
  MDA_REQUIRE(delta > 0 && c_int > 0 && c_grad > 0 && log_sigma > 0, PreconditionError,
              "info config constants must be positive");
  MDA_REQUIRE(entropy_bins > 0 && log_size > 0 && log_size % 2 == 1, PreconditionError,
              "entropy bins must be positive and the LoG size odd");
  MDA_REQUIRE(window > 0 && window % 2 == 1 && stride > 0, PreconditionError, "patch window must be odd, stride positive");
  MDA_REQUIRE(vgg_depth >= 1 && vgg_depth <= 5, PreconditionError, "vgg_depth must be in 1..5");
}

void to_json(nlohmann::json& j, const InfoConfig& c) {
  j = {{"delta", c.delta},       {"c_int", c.c_int},   {"c_grad", c.c_grad}, {"entropy_bins", c.entropy_bins},
       {"log_sigma", c.log_sigma}, {"log_size", c.log_size}, {"window", c.window}, {"stride", c.stride},
       {"vgg_depth", c.vgg_depth}};
}

void from_json(const nlohmann::json& j, InfoConfig& c) {
  InfoConfig d;
  c.delta = j.value("delta", d.delta);
  c.c_int = j.value("c_int", d.c_int);
  c.c_grad = j.value("c_grad", d.c_grad);
  c.entropy_bins = j.value("entropy_bins", d.entropy_bins);
  c.log_sigma = j.value("log_sigma", d.log_sigma);
  c.log_size = j.value("log_size", d.log_size);
  c.window = j.value("window", d.window);
  c.stride = j.value("stride", d.stride);
  c.vgg_depth = j.value("vgg_depth", d.vgg_depth);
}

void to_json(nlohmann::json& j, const WeightSet& w) {
  j = {{"int_ir", w.int_ir}, {"int_vis", w.int_vis}, {"grad_ir", w.grad_ir}, {"grad_vis", w.grad_vis}};
}

PatchWeightGrid PatchWeightGrid::uniform(int height, int width, int window, int stride) {
  MDA_REQUIRE(height >= window && width >= window, PreconditionError,
              "image " + std::to_string(height) + "x" + std::to_string(width) + " smaller than patch window " +
                  std::to_string(window));
  PatchWeightGrid g;
  g.window = window;
  g.stride = stride;
  g.rows = (height - window) / stride + 1;
  g.cols = (width - window) / stride + 1;
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) g.origins.push_back({r * stride, c * stride});
  g.cells.assign(g.origins.size(), WeightSet{});
  return g;
}

double feature_entropy(std::span<const double> values, int bins) {
  MDA_REQUIRE(!values.empty(), PreconditionError, "entropy of an empty map");
  MDA_REQUIRE(bins > 0, PreconditionError, "entropy needs at least one bin");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  MDA_REQUIRE(std::isfinite(lo) && std::isfinite(hi), PreconditionError, "entropy of non-finite values");
  if (hi <= lo) return 0.0;
  std::vector<std::size_t> hist(static_cast<std::size_t>(bins), 0);
  const double scale = bins / (hi - lo);
  for (double v : values) {
    int b = static_cast<int>((v - lo) * scale);
    ++hist[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))];
  }
  const double n = static_cast<double>(values.size());
  double h = 0.0;
  for (std::size_t c : hist)
    if (c) {
      const double p = static_cast<double>(c) / n;
      h -= p * std::log2(p);
    }
  return h;
}

double population_std(std::span<const double> values) {
  MDA_REQUIRE(!values.empty(), PreconditionError, "std of an empty map");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / static_cast<double>(values.size()));
}

double log_gradient_energy(std::span<const double> plane, int height, int width, const InfoConfig& cfg) {
  MDA_REQUIRE(height >= cfg.log_size && width >= cfg.log_size, PreconditionError,
              "map " + std::to_string(height) + "x" + std::to_string(width) + " smaller than the LoG support");
  MDA_REQUIRE(plane.size() == static_cast<std::size_t>(height) * width, ShapeError, "plane size mismatch");
  const auto response = correlate(plane, height, width, log_kernel(cfg.log_size, cfg.log_sigma), Border::Replicate);
  double e = 0.0;
  for (double v : response) e += v * v;
  return e / static_cast<double>(response.size());
}

namespace {

template <class PerChannel>
double stage_channel_average(const PerceptualFeatures& feats, PerChannel&& fn) {
  MDA_REQUIRE(!feats.stages.empty(), PreconditionError, "no feature stages");
  double total = 0.0;
  for (const Tensor& stage : feats.stages) {
    MDA_REQUIRE(stage.rank() == 3, ShapeError, "feature stage must be (C,H,W)");
    double acc = 0.0;
    for (int c = 0; c < stage.channels(); ++c) acc += fn(stage.plane(c), stage.height(), stage.width());
    total += acc / stage.channels();
  }
  return total / static_cast<double>(feats.stages.size());
}

}  // namespace

double intensity_statistic(const PerceptualFeatures& feats, const InfoConfig& cfg) {
  return stage_channel_average(feats, [&](std::span<const double> p, int, int) {
    return feature_entropy(p, cfg.entropy_bins) + cfg.delta * population_std(p);
  });
}

double gradient_statistic(const PerceptualFeatures& feats, const InfoConfig& cfg) {
  return stage_channel_average(feats, [&](std::span<const double> p, int h, int w) {
    return log_gradient_energy(p, h, w, cfg);
  });
}

std::pair<double, double> tempered_softmax(double a, double b, double c) {
  MDA_REQUIRE(c > 0, PreconditionError, "softmax temperature must be positive");
  const double sa = a / c, sb = b / c;
  const double m = std::max(sa, sb);
  const double ea = std::exp(sa - m), eb = std::exp(sb - m);
  const double z = ea + eb;
  return {ea / z, eb / z};
}

WeightSet weights_from_features(const PerceptualFeatures& ir, const PerceptualFeatures& vis, const InfoConfig& cfg) {
  WeightSet w;
  std::tie(w.int_ir, w.int_vis) = tempered_softmax(intensity_statistic(ir, cfg), intensity_statistic(vis, cfg), cfg.c_int);
  std::tie(w.grad_ir, w.grad_vis) =
      tempered_softmax(gradient_statistic(ir, cfg), gradient_statistic(vis, cfg), cfg.c_grad);
  return w;
}

WeightSet image_weights(const GrayImage& ir, const GrayImage& vis_y, const BackboneWeights& backbone,
                        const InfoConfig& cfg) {
  MDA_REQUIRE(ir.same_shape(vis_y), ShapeError, "image_weights: infrared and visible sizes differ");
  cfg.validate();
  return weights_from_features(extract_features(ir, backbone, cfg.vgg_depth, SourceTag::Ir),
                               extract_features(vis_y, backbone, cfg.vgg_depth, SourceTag::Vis), cfg);
}

PatchWeightGrid patch_weights(const GrayImage& ir, const GrayImage& vis_y, const InfoConfig& cfg) {
  MDA_REQUIRE(ir.same_shape(vis_y), ShapeError, "patch_weights: infrared and visible sizes differ");
  cfg.validate();
  PatchWeightGrid g = PatchWeightGrid::uniform(ir.height(), ir.width(), cfg.window, cfg.stride);
  const int win = cfg.window;
  std::vector<double> a(static_cast<std::size_t>(win) * win), b(a.size());
  auto window_of = [&](const GrayImage& img, CropOrigin o, std::vector<double>& out) {
    for (int y = 0; y < win; ++y)
      for (int x = 0; x < win; ++x) out[static_cast<std::size_t>(y) * win + x] = img(o.y + y, o.x + x);
  };
  auto intensity = [&](const std::vector<double>& v) {
    double mean = 0.0;
    for (double p : v) mean += p;
    mean /= static_cast<double>(v.size());
    return mean + cfg.delta * population_std(v);
  };
  for (std::size_t i = 0; i < g.origins.size(); ++i) {
    window_of(ir, g.origins[i], a);
    window_of(vis_y, g.origins[i], b);
    WeightSet& w = g.cells[i];
    std::tie(w.int_ir, w.int_vis) = tempered_softmax(intensity(a), intensity(b), cfg.c_int);
    std::tie(w.grad_ir, w.grad_vis) =
        tempered_softmax(log_gradient_energy(a, win, win, cfg), log_gradient_energy(b, win, win, cfg), cfg.c_grad);
  }
  return g;
}

}  // namespace mda
