#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mda/image.hpp"

// Fusion quality metrics. Every input is quantized to 8 bits and evaluated
// on the 0..255 scale, except MSE which is reported on the [0,1] scale.
namespace mda::metrics {

/// Quantized 8-bit plane as doubles.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> px;

  double operator()(int y, int x) const { return px[static_cast<std::size_t>(y) * width + x]; }
};

Plane quantize(const GrayImage& img);

double en(const GrayImage& img);
double sd(const GrayImage& img);
double ag(const GrayImage& img);
/// Mean of MSE(fused, ir) and MSE(fused, vis), on [0,1] intensities.
double mse(const GrayImage& fused, const GrayImage& ir, const GrayImage& vis);
/// Mean of the two Pearson correlations with the sources.
double cc(const GrayImage& fused, const GrayImage& ir, const GrayImage& vis);
/// r(fused − vis, ir) + r(fused − ir, vis).
double scd(const GrayImage& fused, const GrayImage& ir, const GrayImage& vis);
/// Petrovic–Xydeas edge transfer. Pixels where either the source or fused
/// gradient vanishes transfer nothing.
double qabf(const GrayImage& fused, const GrayImage& ir, const GrayImage& vis);
/// Mean of pixel-domain multi-scale VIF(ir → fused) and VIF(vis → fused).
double vif(const GrayImage& fused, const GrayImage& ir, const GrayImage& vis);

/// Single-reference multi-scale VIF. Scales too small for their window are
/// skipped; a reference with no variance anywhere yields 0.
double vif_single(const GrayImage& ref, const GrayImage& dist);

/// Pearson correlation; 0 when either side has zero variance.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

/// All metric names in report order.
const std::vector<std::string>& all_names();
/// Parses "en,vif,..." (case-insensitive, "q_abf"/"qabf" both accepted).
/// Unknown names raise PreconditionError; an empty string selects all.
std::vector<std::string> parse_list(const std::string& list);

double compute(const std::string& name, const GrayImage& fused, const GrayImage& ir, const GrayImage& vis);

struct MetricsReport {
  std::vector<std::string> metrics;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> values;  // values[image][metric]
  std::vector<double> mean;
  nlohmann::json metadata;

  void write_csv(const std::filesystem::path& path) const;
  void write_json(const std::filesystem::path& path) const;
  nlohmann::json to_json() const;
};

MetricsReport evaluate_pairs(const std::vector<std::string>& ids, const std::vector<GrayImage>& fused,
                             const std::vector<GrayImage>& ir, const std::vector<GrayImage>& vis,
                             const std::vector<std::string>& metrics);

/// Loads every manifest pair and its fused image `<fused_dir>/<id>.<ext>`
/// (png, jpg, bmp or tif). Missing fused images raise Error listing the ids.
MetricsReport evaluate_dataset(const DatasetManifest& manifest, const std::filesystem::path& fused_dir,
                               const std::vector<std::string>& metrics);

}  // namespace mda::metrics
