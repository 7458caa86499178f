#include "mda/filters.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mda/error.hpp"

namespace mda {

Kernel gaussian_kernel(int size, double sigma) {
  MDA_REQUIRE(size > 0 && size % 2 == 1, PreconditionError, "gaussian kernel size must be odd and positive");
  MDA_REQUIRE(sigma > 0, PreconditionError, "gaussian sigma must be positive");
  Kernel k{size, std::vector<double>(static_cast<std::size_t>(size) * size)};
  const int r = size / 2;
  double total = 0.0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) {
      const double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
      k.taps[static_cast<std::size_t>(y + r) * size + (x + r)] = v;
      total += v;
    }
  for (double& v : k.taps) v /= total;
  return k;
}

Kernel log_kernel(int size, double sigma) {
  MDA_REQUIRE(size > 0 && size % 2 == 1, PreconditionError, "LoG kernel size must be odd and positive");
  Kernel k{size, std::vector<double>(static_cast<std::size_t>(size) * size)};
  const int r = size / 2;
  const double s2 = sigma * sigma;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) {
      const double q = (x * x + y * y) / (2.0 * s2);
      k.taps[static_cast<std::size_t>(y + r) * size + (x + r)] = (q - 1.0) / (M_PI * s2 * s2) * std::exp(-q);
    }
  const double mean = std::accumulate(k.taps.begin(), k.taps.end(), 0.0) / static_cast<double>(k.taps.size());
  for (double& v : k.taps) v -= mean;
  return k;
}

Kernel sobel_x() { return Kernel{3, {-1, 0, 1, -2, 0, 2, -1, 0, 1}}; }
Kernel sobel_y() { return Kernel{3, {-1, -2, -1, 0, 0, 0, 1, 2, 1}}; }

namespace {

int output_extent(int n, const Kernel& k, Border border) { return border == Border::Valid ? n - k.size + 1 : n; }

}  // namespace

namespace {

// Plane extended by r pixels on every side under the given border rule.
std::vector<double> pad_plane(std::span<const double> plane, int h, int w, int r, Border border) {
  const int pw = w + 2 * r;
  std::vector<double> out(static_cast<std::size_t>(h + 2 * r) * pw, 0.0);
  for (int y = -r; y < h + r; ++y) {
    if (border == Border::Zero && (y < 0 || y >= h)) continue;
    const double* src = plane.data() + static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w;
    double* dst = out.data() + static_cast<std::size_t>(y + r) * pw;
    std::copy(src, src + w, dst + r);
    if (border == Border::Replicate)
      for (int x = 0; x < r; ++x) {
        dst[x] = src[0];
        dst[r + w + x] = src[w - 1];
      }
  }
  return out;
}

void valid_correlate(const double* src, int w, int oh, int ow, const Kernel& k, double* out) {
  for (int y = 0; y < oh; ++y)
    for (int ky = 0; ky < k.size; ++ky) {
      const double* row = src + static_cast<std::size_t>(y + ky) * w;
      double* dst = out + static_cast<std::size_t>(y) * ow;
      for (int kx = 0; kx < k.size; ++kx) {
        const double t = k(ky, kx);
        for (int x = 0; x < ow; ++x) dst[x] += t * row[x + kx];
      }
    }
}

void valid_adjoint(const double* g, int w, int oh, int ow, const Kernel& k, double* grad_in) {
  for (int y = 0; y < oh; ++y)
    for (int ky = 0; ky < k.size; ++ky) {
      double* dst = grad_in + static_cast<std::size_t>(y + ky) * w;
      const double* gy = g + static_cast<std::size_t>(y) * ow;
      for (int kx = 0; kx < k.size; ++kx) {
        const double t = k(ky, kx);
        for (int x = 0; x < ow; ++x) dst[x + kx] += t * gy[x];
      }
    }
}

}  // namespace

std::vector<double> correlate(std::span<const double> plane, int h, int w, const Kernel& k, Border border, int* out_h,
                              int* out_w) {
  const int oh = output_extent(h, k, border);
  const int ow = output_extent(w, k, border);
  MDA_REQUIRE(oh > 0 && ow > 0, ShapeError, "plane smaller than kernel for valid correlation");
  MDA_REQUIRE(plane.size() == static_cast<std::size_t>(h) * w, ShapeError, "correlate: plane size mismatch");
  if (out_h) *out_h = oh;
  if (out_w) *out_w = ow;
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  if (border == Border::Valid) {
    valid_correlate(plane.data(), w, oh, ow, k, out.data());
  } else {
    const int r = k.radius();
    const auto padded = pad_plane(plane, h, w, r, border);
    valid_correlate(padded.data(), w + 2 * r, oh, ow, k, out.data());
  }
  return out;
}

void correlate_adjoint(std::span<const double> grad_out, int h, int w, const Kernel& k, Border border,
                       std::span<double> grad_in) {
  const int oh = output_extent(h, k, border);
  const int ow = output_extent(w, k, border);
  if (border == Border::Valid) {
    valid_adjoint(grad_out.data(), w, oh, ow, k, grad_in.data());
    return;
  }
  const int r = k.radius();
  const int pw = w + 2 * r;
  std::vector<double> padded(static_cast<std::size_t>(h + 2 * r) * pw, 0.0);
  valid_adjoint(grad_out.data(), pw, oh, ow, k, padded.data());
  for (int y = -r; y < h + r; ++y) {
    if (border == Border::Zero && (y < 0 || y >= h)) continue;
    double* dst = grad_in.data() + static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w;
    const double* src = padded.data() + static_cast<std::size_t>(y + r) * pw;
    for (int x = -r; x < w + r; ++x) {
      if (border == Border::Zero && (x < 0 || x >= w)) continue;
      dst[std::clamp(x, 0, w - 1)] += src[x + r];
    }
  }
}

Tensor correlate_channels(const Tensor& x, const Kernel& k, Border border) {
  MDA_REQUIRE(x.rank() == 3, ShapeError, "correlate_channels expects (C,H,W), got " + shape_str(x.shape()));
  const int c = x.channels(), h = x.height(), w = x.width();
  int oh = 0, ow = 0;
  std::vector<std::vector<double>> planes;
  planes.reserve(static_cast<std::size_t>(c));
  for (int i = 0; i < c; ++i) planes.push_back(correlate(x.plane(i), h, w, k, border, &oh, &ow));
  Tensor out({c, oh, ow});
  for (int i = 0; i < c; ++i) std::copy(planes[i].begin(), planes[i].end(), out.plane(i).begin());
  return out;
}

}  // namespace mda
