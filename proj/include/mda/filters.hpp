#pragma once

#include <span>
#include <vector>

#include "mda/tensor.hpp"

namespace mda {

/// Square correlation kernel of odd size, row-major.
struct Kernel {
  int size = 0;
  std::vector<double> taps;

  double operator()(int y, int x) const { return taps[static_cast<std::size_t>(y) * size + x]; }
  int radius() const { return size / 2; }
};

enum class Border {
  Replicate,  // output same size, edge pixels repeated
  Zero,       // output same size, zeros outside
  Valid,      // output shrinks by size-1
};

/// Normalized (unit-sum) Gaussian kernel.
Kernel gaussian_kernel(int size, double sigma);

/// Laplacian-of-Gaussian kernel, shifted so the taps sum to exactly zero.
Kernel log_kernel(int size = 7, double sigma = 1.0);

Kernel sobel_x();
Kernel sobel_y();

/// 2-D correlation of one h×w plane. Returns the output height/width through
/// `out_h`/`out_w` for Valid borders.
std::vector<double> correlate(std::span<const double> plane, int h, int w, const Kernel& k, Border border,
                              int* out_h = nullptr, int* out_w = nullptr);

/// Adjoint of `correlate`: scatters an output gradient back onto the input.
void correlate_adjoint(std::span<const double> grad_out, int h, int w, const Kernel& k, Border border,
                       std::span<double> grad_in);

/// Channel-wise correlation of a (C,H,W) tensor.
Tensor correlate_channels(const Tensor& x, const Kernel& k, Border border);

}  // namespace mda
