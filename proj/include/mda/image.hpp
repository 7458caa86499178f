#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "mda/tensor.hpp"

namespace mda {

/// Single-channel image with intensities in [0,1].
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int height, int width, double fill = 0.0);
  /// Throws PreconditionError when a value is non-finite or outside [0,1].
  GrayImage(int height, int width, std::vector<double> pixels);

  /// Accepts a (1,H,W) or (H,W) tensor; values are clamped into [0,1].
  static GrayImage from_tensor_clamped(const Tensor& t);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  double operator()(int y, int x) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const double> pixels() const { return pixels_; }

  /// (1,H,W) copy for the network.
  Tensor tensor() const;

  bool same_shape(const GrayImage& o) const { return height_ == o.height_ && width_ == o.width_; }
  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

/// Planar RGB image (3,H,W) with values in [0,1].
class ColorImage {
 public:
  ColorImage() = default;
  /// `planar` must be 3·H·W values (R plane, G plane, B plane).
  ColorImage(int height, int width, std::vector<double> planar);
  /// Throws ShapeError unless the tensor is (3,H,W).
  static ColorImage from_tensor(const Tensor& t);
  static ColorImage uniform(int height, int width, double r, double g, double b);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return 3; }
  double at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  std::span<const double> plane(int c) const {
    const std::size_t n = static_cast<std::size_t>(height_) * width_;
    return {data_.data() + n * c, n};
  }
  std::span<const double> data() const { return data_; }

  friend bool operator==(const ColorImage&, const ColorImage&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

struct YCbCr {
  GrayImage y, cb, cr;
};

/// ITU-R BT.601 full-range transform (JPEG convention, chroma offset 0.5).
YCbCr rgb_to_ycbcr(const ColorImage& img);
/// Same, for a raw (3,H,W) tensor. Throws ShapeError for other channel counts.
YCbCr rgb_to_ycbcr(const Tensor& rgb);
/// Inverse transform; results clipped into [0,1].
ColorImage ycbcr_to_rgb(const GrayImage& y, const GrayImage& cb, const GrayImage& cr);

struct ImagePair {
  GrayImage ir;
  ColorImage vis;
  GrayImage vis_y, vis_cb, vis_cr;
  std::string id;

  int height() const { return ir.height(); }
  int width() const { return ir.width(); }
};

/// Builds a pair and its visible YCbCr planes. Mismatched sizes throw ShapeError.
ImagePair make_pair(GrayImage ir, ColorImage vis, std::string id);
/// Grayscale visible input: Y is the gray plane, Cb = Cr = 0.5.
ImagePair make_pair_gray_visible(GrayImage ir, GrayImage vis_gray, std::string id);

struct CropOrigin {
  int y = 0;
  int x = 0;
};

/// The window origin `crop_patch` uses for a given seed.
CropOrigin crop_origin(int height, int width, int size, std::uint64_t seed);
/// Same random size×size window applied to every plane of the pair.
ImagePair crop_patch(const ImagePair& pair, int size, std::uint64_t seed);
ImagePair crop_at(const ImagePair& pair, CropOrigin origin, int size);

// ---- dataset manifests ----

enum class DatasetLayout { PairedDirs, SuffixPairs };

struct ManifestEntry {
  std::string id;
  std::filesystem::path ir;
  std::filesystem::path vis;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::string split = "train";
  std::vector<std::string> warnings;
};

/// Pairs files by stem; unmatched files are reported in `warnings` and
/// skipped. Entries are sorted by id. Throws EmptyManifestError when no pair
/// is found.
DatasetManifest scan_dataset(const std::filesystem::path& root, DatasetLayout layout);

/// JSON lines, one `{"id":..., "ir":..., "vis":...}` object per entry.
void write_manifest_jsonl(const DatasetManifest& m, const std::filesystem::path& path);
/// Relative paths resolve against the manifest file's directory.
DatasetManifest read_manifest_jsonl(const std::filesystem::path& path);

/// Loads every entry once, checking that it decodes and that ir/vis sizes match.
void validate_manifest(const DatasetManifest& m);

// ---- synthetic fixtures ----

struct SyntheticSpec {
  int height = 128;
  int width = 128;
  std::uint64_t seed = 0;
};

struct Box {
  int y0, x0, y1, x1;  // half-open
};

/// Visible: band-limited colour texture with sharp-edged shapes. Infrared:
/// smooth blob field plus one bright rectangular thermal target.
ImagePair make_synthetic_pair(const SyntheticSpec& spec);
/// The thermal target rectangle of `make_synthetic_pair(spec)`.
Box synthetic_target(const SyntheticSpec& spec);

// ---- file I/O (PNG/JPEG/BMP/TIFF) ----

/// Colour files are reduced to their BT.601 luma.
GrayImage load_gray(const std::filesystem::path& path);
/// Single-channel files are returned with R=G=B.
ColorImage load_color(const std::filesystem::path& path);
/// Loads a registered pair; grayscale visible files take the Cb=Cr=0.5 path.
ImagePair load_pair(const std::filesystem::path& ir, const std::filesystem::path& vis, std::string id);

void save_gray(const std::filesystem::path& path, const GrayImage& img);
void save_color(const std::filesystem::path& path, const ColorImage& img);

/// round(v·255) clamped to 0..255.
std::uint8_t to_u8(double v);

}  // namespace mda
