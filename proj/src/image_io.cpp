#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "mda/error.hpp"
#include "mda/image.hpp"

namespace fs = std::filesystem;

namespace mda {

namespace {

// Decoded image as planar doubles in [0,1], RGB order for colour files.
struct Decoded {
  int h = 0, w = 0, channels = 0;
  std::vector<double> planar;
};

Decoded decode(const fs::path& path) {
  MDA_REQUIRE(fs::exists(path), PreconditionError, "image not found: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  MDA_REQUIRE(!m.empty(), Error, "cannot decode image: " + path.string());
  double range = 1.0;
  switch (m.depth()) {
    case CV_8U: range = 255.0; break;
    case CV_16U: range = 65535.0; break;
    case CV_32F:
    case CV_64F: range = 1.0; break;
    default: throw Error("unsupported pixel depth in " + path.string());
  }
  cv::Mat f;
  m.convertTo(f, CV_64F);
  Decoded d;
  d.h = f.rows;
  d.w = f.cols;
  const int src_ch = f.channels();
  d.channels = src_ch == 1 ? 1 : 3;
  const std::size_t n = static_cast<std::size_t>(d.h) * d.w;
  d.planar.resize(n * d.channels);
  for (int y = 0; y < d.h; ++y) {
    const double* row = f.ptr<double>(y);
    for (int x = 0; x < d.w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * d.w + x;
      if (src_ch == 1) {
        d.planar[i] = std::clamp(row[x] / range, 0.0, 1.0);
      } else {
        // OpenCV stores BGR(A).
        for (int c = 0; c < 3; ++c) d.planar[c * n + i] = std::clamp(row[x * src_ch + (2 - c)] / range, 0.0, 1.0);
      }
    }
  }
  return d;
}

void write(const fs::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  MDA_REQUIRE(cv::imwrite(path.string(), m), Error, "cannot write image: " + path.string());
}

}  // namespace

GrayImage load_gray(const fs::path& path) {
  Decoded d = decode(path);
  if (d.channels == 1) return GrayImage(d.h, d.w, std::move(d.planar));
  return rgb_to_ycbcr(ColorImage(d.h, d.w, std::move(d.planar))).y;
}

ColorImage load_color(const fs::path& path) {
  Decoded d = decode(path);
  if (d.channels == 3) return ColorImage(d.h, d.w, std::move(d.planar));
  std::vector<double> planar;
  planar.reserve(3 * d.planar.size());
  for (int c = 0; c < 3; ++c) planar.insert(planar.end(), d.planar.begin(), d.planar.end());
  return ColorImage(d.h, d.w, std::move(planar));
}

ImagePair load_pair(const fs::path& ir_path, const fs::path& vis_path, std::string id) {
  GrayImage ir = load_gray(ir_path);
  Decoded vis = decode(vis_path);
  if (vis.channels == 1) return make_pair_gray_visible(std::move(ir), GrayImage(vis.h, vis.w, std::move(vis.planar)), std::move(id));
  return make_pair(std::move(ir), ColorImage(vis.h, vis.w, std::move(vis.planar)), std::move(id));
}

void save_gray(const fs::path& path, const GrayImage& img) {
  cv::Mat m(img.height(), img.width(), CV_8UC1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) m.at<std::uint8_t>(y, x) = to_u8(img(y, x));
  write(path, m);
}

void save_color(const fs::path& path, const ColorImage& img) {
  cv::Mat m(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      auto& px = m.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) px[2 - c] = to_u8(img.at(c, y, x));
    }
  write(path, m);
}

}  // namespace mda
