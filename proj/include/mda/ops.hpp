#pragma once

#include <array>
#include <vector>

#include "mda/autograd.hpp"
#include "mda/filters.hpp"

// Differentiable operations over Var. Feature maps are (C,H,W); scalars (1).
namespace mda::ag {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
/// mean((a-b)^2)
Var mse(const Var& a, const Var& b);

Var relu(const Var& x);
/// Per-channel PReLU; `slope` has shape (C) or (1).
Var prelu(const Var& x, const Var& slope);
Var sigmoid(const Var& x);
Var tanh(const Var& x);

/// 2-D convolution (cross-correlation) with zero padding.
/// x: (Cin,H,W), w: (Cout,Cin,k,k), b: (Cout) or undefined.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

/// x: (N), w: (M,N), b: (M)
Var linear(const Var& x, const Var& w, const Var& b);

/// Global average pooling (C,H,W) -> (C).
Var gap(const Var& x);

/// Broadcast multiply of (C,H,W) by a per-channel vector (C).
Var mul_channel(const Var& x, const Var& s);

/// Same data, new shape (element count must match).
Var reshape(const Var& x, Shape shape);

Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& x, int begin, int count);

/// Bilinear upsampling by an integer factor (half-pixel centres, edge clamp).
Var upsample_bilinear(const Var& x, int factor);

/// 2×2 max pooling with stride 2 (floor semantics).
Var maxpool2(const Var& x);

/// Fixed-kernel channel-wise correlation.
Var filter(const Var& x, const Kernel& k, Border border);

/// Spatial crop of a (C,H,W) map.
Var crop(const Var& x, int y0, int x0, int h, int w);

/// Gram matrix (C,C) of a (C,H,W) map, normalized by C·H·W.
Var gram(const Var& x);

/// (1,H,W) gray map -> (3,H,W) with channel c = (x - mean[c]) / stddev[c].
Var replicate_normalize(const Var& x, const std::array<double, 3>& mean, const std::array<double, 3>& stddev);

}  // namespace mda::ag
