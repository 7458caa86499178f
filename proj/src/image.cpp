#include "mda/image.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mda/error.hpp"

namespace mda {

namespace {

void check_dims(int h, int w) {
  MDA_REQUIRE(h > 0 && w > 0, ShapeError, "image dimensions must be positive");
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

GrayImage::GrayImage(int height, int width, double fill)
    : height_(height), width_(width), pixels_(static_cast<std::size_t>(height) * width, fill) {
  check_dims(height, width);
  MDA_REQUIRE(fill >= 0.0 && fill <= 1.0, PreconditionError, "gray fill value outside [0,1]");
}

GrayImage::GrayImage(int height, int width, std::vector<double> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  check_dims(height, width);
  MDA_REQUIRE(pixels_.size() == static_cast<std::size_t>(height) * width, ShapeError,
              "gray pixel count does not match dimensions");
  for (double v : pixels_)
    MDA_REQUIRE(std::isfinite(v) && v >= 0.0 && v <= 1.0, PreconditionError, "gray pixel outside [0,1]");
}

GrayImage GrayImage::from_tensor_clamped(const Tensor& t) {
  int h = 0, w = 0;
  if (t.rank() == 3 && t.channels() == 1) {
    h = t.height();
    w = t.width();
  } else if (t.rank() == 2) {
    h = t.dim(0);
    w = t.dim(1);
  } else {
    throw ShapeError("gray image tensor must be (1,H,W) or (H,W), got " + shape_str(t.shape()));
  }
  std::vector<double> px(t.vec());
  for (double& v : px) v = std::isfinite(v) ? clamp01(v) : 0.0;
  return GrayImage(h, w, std::move(px));
}

Tensor GrayImage::tensor() const { return Tensor({1, height_, width_}, pixels_); }

ColorImage::ColorImage(int height, int width, std::vector<double> planar)
    : height_(height), width_(width), data_(std::move(planar)) {
  check_dims(height, width);
  MDA_REQUIRE(data_.size() == 3 * static_cast<std::size_t>(height) * width, ShapeError,
              "colour image needs exactly 3 channels");
  for (double v : data_)
    MDA_REQUIRE(std::isfinite(v) && v >= 0.0 && v <= 1.0, PreconditionError, "colour value outside [0,1]");
}

ColorImage ColorImage::from_tensor(const Tensor& t) {
  MDA_REQUIRE(t.rank() == 3 && t.channels() == 3, ShapeError, "colour image must be (3,H,W), got " + shape_str(t.shape()));
  return ColorImage(t.height(), t.width(), t.vec());
}

ColorImage ColorImage::uniform(int height, int width, double r, double g, double b) {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  std::vector<double> d(3 * n);
  std::fill_n(d.begin(), n, r);
  std::fill_n(d.begin() + static_cast<std::ptrdiff_t>(n), n, g);
  std::fill_n(d.begin() + static_cast<std::ptrdiff_t>(2 * n), n, b);
  return ColorImage(height, width, std::move(d));
}

namespace {

YCbCr ycbcr_from_planes(int h, int w, std::span<const double> r, std::span<const double> g,
                        std::span<const double> b) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> y(n), cb(n), cr(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = clamp01(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
    cb[i] = clamp01(0.5 - 0.168736 * r[i] - 0.331264 * g[i] + 0.5 * b[i]);
    cr[i] = clamp01(0.5 + 0.5 * r[i] - 0.418688 * g[i] - 0.081312 * b[i]);
  }
  return {GrayImage(h, w, std::move(y)), GrayImage(h, w, std::move(cb)), GrayImage(h, w, std::move(cr))};
}

}  // namespace

YCbCr rgb_to_ycbcr(const ColorImage& img) {
  return ycbcr_from_planes(img.height(), img.width(), img.plane(0), img.plane(1), img.plane(2));
}

YCbCr rgb_to_ycbcr(const Tensor& rgb) {
  MDA_REQUIRE(rgb.rank() == 3 && rgb.channels() == 3, ShapeError,
              "rgb_to_ycbcr expects 3 channels, got " + shape_str(rgb.shape()));
  return rgb_to_ycbcr(ColorImage::from_tensor(rgb));
}

ColorImage ycbcr_to_rgb(const GrayImage& y, const GrayImage& cb, const GrayImage& cr) {
  MDA_REQUIRE(y.same_shape(cb) && y.same_shape(cr), ShapeError, "ycbcr_to_rgb plane shapes differ");
  const std::size_t n = y.size();
  std::vector<double> out(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double yy = y.pixels()[i], u = cb.pixels()[i] - 0.5, v = cr.pixels()[i] - 0.5;
    out[i] = clamp01(yy + 1.402 * v);
    out[n + i] = clamp01(yy - 0.344136 * u - 0.714136 * v);
    out[2 * n + i] = clamp01(yy + 1.772 * u);
  }
  return ColorImage(y.height(), y.width(), std::move(out));
}

ImagePair make_pair(GrayImage ir, ColorImage vis, std::string id) {
  MDA_REQUIRE(ir.height() == vis.height() && ir.width() == vis.width(), ShapeError,
              "pair '" + id + "': infrared " + std::to_string(ir.height()) + "x" + std::to_string(ir.width()) +
                  " vs visible " + std::to_string(vis.height()) + "x" + std::to_string(vis.width()));
  auto [y, cb, cr] = rgb_to_ycbcr(vis);
  return ImagePair{std::move(ir), std::move(vis), std::move(y), std::move(cb), std::move(cr), std::move(id)};
}

ImagePair make_pair_gray_visible(GrayImage ir, GrayImage vis_gray, std::string id) {
  MDA_REQUIRE(ir.same_shape(vis_gray), ShapeError, "pair '" + id + "': infrared and visible sizes differ");
  const int h = vis_gray.height(), w = vis_gray.width();
  std::vector<double> planar;
  planar.reserve(3 * vis_gray.size());
  for (int c = 0; c < 3; ++c) planar.insert(planar.end(), vis_gray.pixels().begin(), vis_gray.pixels().end());
  GrayImage half(h, w, 0.5);
  return ImagePair{std::move(ir), ColorImage(h, w, std::move(planar)), std::move(vis_gray), half, half, std::move(id)};
}

CropOrigin crop_origin(int height, int width, int size, std::uint64_t seed) {
  MDA_REQUIRE(size > 0 && size <= height && size <= width, PreconditionError,
              "crop size " + std::to_string(size) + " exceeds image " + std::to_string(height) + "x" +
                  std::to_string(width));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dy(0, height - size);
  std::uniform_int_distribution<int> dx(0, width - size);
  CropOrigin o;
  o.y = dy(rng);
  o.x = dx(rng);
  return o;
}

namespace {

GrayImage crop_gray(const GrayImage& g, CropOrigin o, int size) {
  std::vector<double> px(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) px[static_cast<std::size_t>(y) * size + x] = g(o.y + y, o.x + x);
  return GrayImage(size, size, std::move(px));
}

ColorImage crop_color(const ColorImage& c, CropOrigin o, int size) {
  const std::size_t n = static_cast<std::size_t>(size) * size;
  std::vector<double> d(3 * n);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) d[ch * n + static_cast<std::size_t>(y) * size + x] = c.at(ch, o.y + y, o.x + x);
  return ColorImage(size, size, std::move(d));
}

}  // namespace

ImagePair crop_at(const ImagePair& pair, CropOrigin o, int size) {
  MDA_REQUIRE(size > 0 && o.y >= 0 && o.x >= 0 && o.y + size <= pair.height() && o.x + size <= pair.width(),
              PreconditionError, "crop window outside image");
  return ImagePair{crop_gray(pair.ir, o, size),       crop_color(pair.vis, o, size), crop_gray(pair.vis_y, o, size),
                   crop_gray(pair.vis_cb, o, size), crop_gray(pair.vis_cr, o, size), pair.id};
}

ImagePair crop_patch(const ImagePair& pair, int size, std::uint64_t seed) {
  return crop_at(pair, crop_origin(pair.height(), pair.width(), size, seed), size);
}

std::uint8_t to_u8(double v) {
  if (!std::isfinite(v)) return 0;
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace mda
