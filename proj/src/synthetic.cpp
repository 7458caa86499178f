#include <algorithm>
#include <cmath>
#include <random>

#include "mda/error.hpp"
#include "mda/filters.hpp"
#include "mda/image.hpp"

namespace mda {

namespace {

// Separate streams so the target box does not depend on texture draws.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::vector<double> smooth_noise(std::mt19937_64& rng, int h, int w, double sigma) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> noise(static_cast<std::size_t>(h) * w);
  for (double& v : noise) v = n01(rng);
  auto out = correlate(noise, h, w, gaussian_kernel(2 * static_cast<int>(std::ceil(3 * sigma)) + 1, sigma), Border::Replicate);
  double mean = 0, sq = 0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(out.size());
  for (double v : out) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(out.size()));
  for (double& v : out) v = (v - mean) / (sd > 0 ? sd : 1.0);
  return out;
}

}  // namespace

Box synthetic_target(const SyntheticSpec& spec) {
  auto rng = stream(spec.seed, 1);
  const int th = uniform_int(rng, spec.height / 8, spec.height / 4);
  const int tw = uniform_int(rng, spec.width / 10, spec.width / 5);
  const int y0 = uniform_int(rng, spec.height / 8, spec.height - th - spec.height / 8);
  const int x0 = uniform_int(rng, spec.width / 8, spec.width - tw - spec.width / 8);
  return {y0, x0, y0 + th, x0 + tw};
}

ImagePair make_synthetic_pair(const SyntheticSpec& spec) {
  MDA_REQUIRE(spec.height >= 32 && spec.width >= 32, PreconditionError, "synthetic pairs need H, W >= 32");
  const int h = spec.height, w = spec.width;
  const std::size_t n = static_cast<std::size_t>(h) * w;

  // Visible: shared luminance texture, sharp rectangles with colour tints, one stripe patch.
  auto rng = stream(spec.seed, 2);
  auto texture = smooth_noise(rng, h, w, 1.5);
  std::vector<double> rgb(3 * n);
  const double gy = uniform(rng, -0.15, 0.15), gx = uniform(rng, -0.15, 0.15);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double base = 0.45 + gy * (y / double(h) - 0.5) + gx * (x / double(w) - 0.5) + 0.1 * texture[i];
      for (int c = 0; c < 3; ++c) rgb[c * n + i] = base;
    }
  const int shapes = uniform_int(rng, 5, 8);
  for (int s = 0; s < shapes; ++s) {
    const int rh = uniform_int(rng, h / 10, h / 3), rw = uniform_int(rng, w / 10, w / 3);
    const int y0 = uniform_int(rng, 0, h - rh), x0 = uniform_int(rng, 0, w - rw);
    const double level = uniform(rng, -0.25, 0.25);
    const double tint[3] = {uniform(rng, -0.06, 0.06), uniform(rng, -0.06, 0.06), uniform(rng, -0.06, 0.06)};
    for (int y = y0; y < y0 + rh; ++y)
      for (int x = x0; x < x0 + rw; ++x)
        for (int c = 0; c < 3; ++c) rgb[c * n + static_cast<std::size_t>(y) * w + x] += level + tint[c];
  }
  {
    const int sh = uniform_int(rng, h / 6, h / 3), sw = uniform_int(rng, w / 6, w / 3);
    const int y0 = uniform_int(rng, 0, h - sh), x0 = uniform_int(rng, 0, w - sw);
    const double period = uniform(rng, 4.0, 8.0);
    for (int y = y0; y < y0 + sh; ++y)
      for (int x = x0; x < x0 + sw; ++x)
        for (int c = 0; c < 3; ++c)
          rgb[c * n + static_cast<std::size_t>(y) * w + x] += 0.12 * std::sin(2 * M_PI * (x + 0.5 * y) / period);
  }
  for (double& v : rgb) v = std::clamp(v, 0.02, 0.98);

  // Infrared: broad blobs, mild smoothing, one hot rectangle.
  auto irng = stream(spec.seed, 3);
  std::vector<double> ir(n, 0.22);
  const int blobs = uniform_int(irng, 3, 5);
  for (int b = 0; b < blobs; ++b) {
    const double cy = uniform(irng, 0, h), cx = uniform(irng, 0, w);
    const double sy = uniform(irng, h / 8.0, h / 4.0), sx = uniform(irng, w / 8.0, w / 4.0);
    const double amp = uniform(irng, -0.06, 0.12);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double q = (y - cy) * (y - cy) / (2 * sy * sy) + (x - cx) * (x - cx) / (2 * sx * sx);
        ir[static_cast<std::size_t>(y) * w + x] += amp * std::exp(-q);
      }
  }
  const Box t = synthetic_target(spec);
  const double heat = uniform(irng, 0.8, 0.92);
  for (int y = t.y0; y < t.y1; ++y)
    for (int x = t.x0; x < t.x1; ++x) ir[static_cast<std::size_t>(y) * w + x] = heat;
  ir = correlate(ir, h, w, gaussian_kernel(5, 0.8), Border::Replicate);
  for (double& v : ir) v = std::clamp(v, 0.0, 1.0);

  return make_pair(GrayImage(h, w, std::move(ir)), ColorImage(h, w, std::move(rgb)),
                   "synthetic_" + std::to_string(spec.seed));
}

}  // namespace mda
