#include "mda/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "mda/error.hpp"

namespace mda::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

template <class F>
Var unary(const Var& a, F&& deriv_from_value_and_out, Tensor out) {
  // deriv(x, y) returns dy/dx evaluated pointwise.
  return make_result(std::move(out), {a}, [deriv = std::forward<F>(deriv_from_value_and_out)](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k)
      if (parent(self, k).requires_grad) parent(self, k).accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (parent(self, 0).requires_grad) parent(self, 0).accumulate(self.grad);
    if (Node& q = parent(self, 1); q.requires_grad) {
      Tensor& g = q.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& p = parent(self, 0);
    Node& q = parent(self, 1);
    if (p.requires_grad) {
      Tensor& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * q.value[i];
    }
    if (q.requires_grad) {
      Tensor& g = q.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * p.value[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "div");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& p = parent(self, 0);
    Node& q = parent(self, 1);
    if (p.requires_grad) {
      Tensor& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / q.value[i];
    }
    if (q.requires_grad) {
      Tensor& g = q.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / q.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.vec()) v *= s;
  return unary(a, [s](double, double) { return s; }, std::move(out));
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.vec()) v += s;
  return unary(a, [](double, double) { return 1.0; }, std::move(out));
}

Var square(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.vec()) v *= v;
  return unary(a, [](double x, double) { return 2.0 * x; }, std::move(out));
}

Var sum(const Var& a) {
  return make_result(Tensor::scalar(a.value().sum()), {a}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    const double s = self.grad[0];
    for (double& v : g.vec()) v += s;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  MDA_REQUIRE(n > 0, ShapeError, "mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var mse(const Var& a, const Var& b) { return mean(square(sub(a, b))); }

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.vec()) v = v > 0.0 ? v : 0.0;
  return unary(x, [](double in, double) { return in > 0.0 ? 1.0 : 0.0; }, std::move(out));
}

Var prelu(const Var& x, const Var& slope) {
  const Tensor& xv = x.value();
  MDA_REQUIRE(xv.rank() == 3, ShapeError, "prelu expects (C,H,W)");
  const int c = xv.channels();
  const int ns = static_cast<int>(slope.value().size());
  MDA_REQUIRE(ns == 1 || ns == c, ShapeError, "prelu slope must have 1 or C entries");
  const std::size_t plane = static_cast<std::size_t>(xv.height()) * xv.width();
  Tensor out = xv;
  for (int ch = 0; ch < c; ++ch) {
    const double a = slope.value()[ns == 1 ? 0 : ch];
    for (double& v : out.plane(ch))
      if (v < 0.0) v *= a;
  }
  return make_result(std::move(out), {x, slope}, [c, ns, plane](Node& self) {
    Node& px = parent(self, 0);
    Node& ps = parent(self, 1);
    for (int ch = 0; ch < c; ++ch) {
      const int si = ns == 1 ? 0 : ch;
      const double a = ps.value[si];
      const std::size_t off = plane * ch;
      double ds = 0.0;
      for (std::size_t i = off; i < off + plane; ++i) {
        const double in = px.value[i];
        if (in < 0.0) ds += self.grad[i] * in;
      }
      if (px.requires_grad) {
        Tensor& g = px.grad_buffer();
        for (std::size_t i = off; i < off + plane; ++i) g[i] += self.grad[i] * (px.value[i] < 0.0 ? a : 1.0);
      }
      if (ps.requires_grad) ps.grad_buffer()[si] += ds;
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.vec()) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return unary(x, [](double, double y) { return y * (1.0 - y); }, std::move(out));
}

Var tanh(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.vec()) v = std::tanh(v);
  return unary(x, [](double, double y) { return 1.0 - y * y; }, std::move(out));
}

namespace {

struct ConvGeom {
  int cin, h, w, cout, k, stride, pad, oh, ow;
  int kdim() const { return cin * k * k; }
};

// Output columns [lo, hi) whose input column ox * stride - pad + kx lies inside the row.
std::pair<int, int> valid_cols(const ConvGeom& g, int kx) {
  const int off = kx - g.pad;
  const int lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  const int hi = g.w - 1 - off < 0 ? 0 : std::min(g.ow, (g.w - 1 - off) / g.stride + 1);
  return {lo, std::max(lo, hi)};
}

void im2col(const double* x, const ConvGeom& g, int r0, int r1, double* col) {
  const int p = (r1 - r0) * g.ow;
  for (int ci = 0; ci < g.cin; ++ci)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = col + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * p;
        const double* src = x + static_cast<std::size_t>(ci) * g.h * g.w;
        const auto [lo, hi] = valid_cols(g, kx);
        const int off = kx - g.pad;
        for (int oy = r0; oy < r1; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + static_cast<std::size_t>(oy - r0) * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* line = src + static_cast<std::size_t>(iy) * g.w;
          std::fill(dst, dst + lo, 0.0);
          if (g.stride == 1)
            std::copy(line + lo + off, line + hi + off, dst + lo);
          else
            for (int ox = lo; ox < hi; ++ox) dst[ox] = line[ox * g.stride + off];
          std::fill(dst + hi, dst + g.ow, 0.0);
        }
      }
}

void col2im(const double* col, const ConvGeom& g, int r0, int r1, double* dx) {
  const int p = (r1 - r0) * g.ow;
  for (int ci = 0; ci < g.cin; ++ci)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = col + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * p;
        double* dst = dx + static_cast<std::size_t>(ci) * g.h * g.w;
        const auto [lo, hi] = valid_cols(g, kx);
        const int off = kx - g.pad;
        for (int oy = r0; oy < r1; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + static_cast<std::size_t>(oy - r0) * g.ow;
          double* line = dst + static_cast<std::size_t>(iy) * g.w;
          if (g.stride == 1)
            for (int ox = lo; ox < hi; ++ox) line[ox + off] += src[ox];
          else
            for (int ox = lo; ox < hi; ++ox) line[ox * g.stride + off] += src[ox];
        }
      }
}

// Output rows per im2col chunk, bounding the column buffer to ~1 MB.
int chunk_rows(const ConvGeom& g) {
  constexpr std::size_t kBudget = std::size_t{1} << 17;
  const std::size_t per_row = static_cast<std::size_t>(g.kdim()) * g.ow;
  return static_cast<int>(std::clamp<std::size_t>(kBudget / std::max<std::size_t>(per_row, 1), 1, g.oh));
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  MDA_REQUIRE(xv.rank() == 3, ShapeError, "conv2d input must be (C,H,W), got " + shape_str(xv.shape()));
  MDA_REQUIRE(wv.rank() == 4 && wv.dim(2) == wv.dim(3), ShapeError, "conv2d weight must be (Cout,Cin,k,k)");
  MDA_REQUIRE(wv.dim(1) == xv.channels(), ShapeError,
              "conv2d channel mismatch: weight " + shape_str(wv.shape()) + " input " + shape_str(xv.shape()));
  MDA_REQUIRE(stride >= 1 && pad >= 0, PreconditionError, "conv2d stride/pad invalid");
  ConvGeom g{xv.channels(), xv.height(), xv.width(), wv.dim(0), wv.dim(2), stride, pad, 0, 0};
  g.oh = (g.h + 2 * pad - g.k) / stride + 1;
  g.ow = (g.w + 2 * pad - g.k) / stride + 1;
  MDA_REQUIRE(g.oh > 0 && g.ow > 0, ShapeError, "conv2d input smaller than kernel");
  const bool has_bias = b.defined();
  if (has_bias) MDA_REQUIRE(static_cast<int>(b.value().size()) == g.cout, ShapeError, "conv2d bias size mismatch");

  Tensor out({g.cout, g.oh, g.ow});
  const int K = g.kdim();
  const int rows = chunk_rows(g);
  std::vector<double> col(static_cast<std::size_t>(K) * rows * g.ow);
  Eigen::Map<const RowMat> W(wv.data(), g.cout, K);
  for (int r0 = 0; r0 < g.oh; r0 += rows) {
    const int r1 = std::min(g.oh, r0 + rows);
    const int p = (r1 - r0) * g.ow;
    im2col(xv.data(), g, r0, r1, col.data());
    Eigen::Map<const RowMat> C(col.data(), K, p);
    StridedMap Y(out.data() + static_cast<std::size_t>(r0) * g.ow, g.cout, p, Eigen::OuterStride<>(g.oh * g.ow));
    Y.noalias() = W * C;
  }
  if (has_bias)
    for (int co = 0; co < g.cout; ++co) {
      const double bv = b.value()[co];
      for (double& v : out.plane(co)) v += bv;
    }

  std::vector<Var> parents{x, w};
  if (has_bias) parents.push_back(b);
  return make_result(std::move(out), std::move(parents), [g, rows, has_bias](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    const int K = g.kdim();
    Eigen::Map<const RowMat> W(pw.value.data(), g.cout, K);
    std::vector<double> col(static_cast<std::size_t>(K) * rows * g.ow);
    std::vector<double> dcol(px.requires_grad ? col.size() : 0);
    for (int r0 = 0; r0 < g.oh; r0 += rows) {
      const int r1 = std::min(g.oh, r0 + rows);
      const int p = (r1 - r0) * g.ow;
      ConstStridedMap G(self.grad.data() + static_cast<std::size_t>(r0) * g.ow, g.cout, p,
                        Eigen::OuterStride<>(g.oh * g.ow));
      if (pw.requires_grad) {
        im2col(px.value.data(), g, r0, r1, col.data());
        Eigen::Map<const RowMat> C(col.data(), K, p);
        Eigen::Map<RowMat> dW(pw.grad_buffer().data(), g.cout, K);
        dW.noalias() += G * C.transpose();
      }
      if (px.requires_grad) {
        Eigen::Map<RowMat> dC(dcol.data(), K, p);
        dC.noalias() = W.transpose() * G;
        col2im(dcol.data(), g, r0, r1, px.grad_buffer().data());
      }
    }
    if (has_bias)
      if (Node& pb = parent(self, 2); pb.requires_grad) {
        Tensor& gb = pb.grad_buffer();
        for (int co = 0; co < g.cout; ++co) {
          double s = 0.0;
          for (double v : self.grad.plane(co)) s += v;
          gb[co] += s;
        }
      }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  MDA_REQUIRE(wv.rank() == 2 && wv.dim(1) == static_cast<int>(xv.size()), ShapeError,
              "linear weight " + shape_str(wv.shape()) + " incompatible with input " + shape_str(xv.shape()));
  const int m = wv.dim(0), n = wv.dim(1);
  MDA_REQUIRE(static_cast<int>(b.value().size()) == m, ShapeError, "linear bias size mismatch");
  Tensor out({m});
  for (int i = 0; i < m; ++i) {
    double acc = b.value()[i];
    for (int j = 0; j < n; ++j) acc += wv[static_cast<std::size_t>(i) * n + j] * xv[j];
    out[i] = acc;
  }
  return make_result(std::move(out), {x, w, b}, [m, n](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    Node& pb = parent(self, 2);
    if (px.requires_grad) {
      Tensor& g = px.grad_buffer();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[j] += self.grad[i] * pw.value[static_cast<std::size_t>(i) * n + j];
    }
    if (pw.requires_grad) {
      Tensor& g = pw.grad_buffer();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(i) * n + j] += self.grad[i] * px.value[j];
    }
    if (pb.requires_grad) pb.accumulate(self.grad);
  });
}

Var gap(const Var& x) {
  const Tensor& xv = x.value();
  MDA_REQUIRE(xv.rank() == 3, ShapeError, "gap expects (C,H,W)");
  const int c = xv.channels();
  const double n = static_cast<double>(xv.height()) * xv.width();
  Tensor out({c});
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (double v : xv.plane(ch)) s += v;
    out[ch] = s / n;
  }
  return make_result(std::move(out), {x}, [c, n](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int ch = 0; ch < c; ++ch)
      for (double& v : g.plane(ch)) v += self.grad[ch] / n;
  });
}

Var mul_channel(const Var& x, const Var& s) {
  const Tensor& xv = x.value();
  MDA_REQUIRE(xv.rank() == 3 && static_cast<int>(s.value().size()) == xv.channels(), ShapeError,
              "mul_channel expects (C,H,W) and (C)");
  const int c = xv.channels();
  Tensor out = xv;
  for (int ch = 0; ch < c; ++ch)
    for (double& v : out.plane(ch)) v *= s.value()[ch];
  return make_result(std::move(out), {x, s}, [c](Node& self) {
    Node& px = parent(self, 0);
    Node& ps = parent(self, 1);
    for (int ch = 0; ch < c; ++ch) {
      auto go = self.grad.plane(ch);
      if (px.requires_grad) {
        auto gx = px.grad_buffer().plane(ch);
        const double sv = ps.value[ch];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * sv;
      }
      if (ps.requires_grad) {
        auto xv = px.value.plane(ch);
        double acc = 0.0;
        for (std::size_t i = 0; i < xv.size(); ++i) acc += go[i] * xv[i];
        ps.grad_buffer()[ch] += acc;
      }
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  return make_result(x.value().reshaped(std::move(shape)), {x}, [](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  MDA_REQUIRE(!xs.empty(), PreconditionError, "concat of zero tensors");
  const int h = xs[0].value().height(), w = xs[0].value().width();
  int c = 0;
  for (const auto& x : xs) {
    MDA_REQUIRE(x.value().rank() == 3 && x.value().height() == h && x.value().width() == w, ShapeError,
                "concat_channels spatial mismatch");
    c += x.value().channels();
  }
  Tensor out({c, h, w});
  std::size_t off = 0;
  for (const auto& x : xs) {
    std::copy(x.value().vec().begin(), x.value().vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(off));
    off += x.value().size();
  }
  return make_result(std::move(out), xs, [](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        Tensor& g = p->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

Var slice_channels(const Var& x, int begin, int count) {
  const Tensor& xv = x.value();
  MDA_REQUIRE(xv.rank() == 3 && begin >= 0 && count > 0 && begin + count <= xv.channels(), ShapeError,
              "slice_channels out of range");
  const std::size_t plane = static_cast<std::size_t>(xv.height()) * xv.width();
  const auto first = xv.vec().begin() + static_cast<std::ptrdiff_t>(plane * begin);
  Tensor out({count, xv.height(), xv.width()}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(plane * count)));
  return make_result(std::move(out), {x}, [plane, begin](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    const std::size_t off = plane * begin;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
  });
}

namespace {

struct Lerp {
  int i0, i1;
  double t;
};

std::vector<Lerp> lerp_table(int in, int factor) {
  std::vector<Lerp> tab(static_cast<std::size_t>(in) * factor);
  for (int o = 0; o < in * factor; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = std::min(static_cast<int>(src), in - 1);
    int i1 = std::min(i0 + 1, in - 1);
    tab[o] = {i0, i1, src - i0};
  }
  return tab;
}

}  // namespace

Var upsample_bilinear(const Var& x, int factor) {
  const Tensor& xv = x.value();
  MDA_REQUIRE(xv.rank() == 3 && factor >= 1, ShapeError, "upsample_bilinear expects (C,H,W) and factor >= 1");
  const int c = xv.channels(), h = xv.height(), w = xv.width();
  const int oh = h * factor, ow = w * factor;
  auto ty = lerp_table(h, factor);
  auto tx = lerp_table(w, factor);
  Tensor out({c, oh, ow});
  for (int ch = 0; ch < c; ++ch) {
    auto src = xv.plane(ch);
    auto dst = out.plane(ch);
    for (int oy = 0; oy < oh; ++oy) {
      const Lerp& ly = ty[oy];
      for (int ox = 0; ox < ow; ++ox) {
        const Lerp& lx = tx[ox];
        const double top = src[ly.i0 * w + lx.i0] * (1 - lx.t) + src[ly.i0 * w + lx.i1] * lx.t;
        const double bot = src[ly.i1 * w + lx.i0] * (1 - lx.t) + src[ly.i1 * w + lx.i1] * lx.t;
        dst[static_cast<std::size_t>(oy) * ow + ox] = top * (1 - ly.t) + bot * ly.t;
      }
    }
  }
  return make_result(std::move(out), {x}, [c, w, oh, ow, ty, tx](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int ch = 0; ch < c; ++ch) {
      auto dst = g.plane(ch);
      auto go = self.grad.plane(ch);
      for (int oy = 0; oy < oh; ++oy) {
        const Lerp& ly = ty[oy];
        for (int ox = 0; ox < ow; ++ox) {
          const Lerp& lx = tx[ox];
          const double v = go[static_cast<std::size_t>(oy) * ow + ox];
          dst[ly.i0 * w + lx.i0] += v * (1 - ly.t) * (1 - lx.t);
          dst[ly.i0 * w + lx.i1] += v * (1 - ly.t) * lx.t;
          dst[ly.i1 * w + lx.i0] += v * ly.t * (1 - lx.t);
          dst[ly.i1 * w + lx.i1] += v * ly.t * lx.t;
        }
      }
    }
  });
}

Var maxpool2(const Var& x) {
  const Tensor& xv = x.value();
  MDA_REQUIRE(xv.rank() == 3 && xv.height() >= 2 && xv.width() >= 2, ShapeError, "maxpool2 input too small");
  const int c = xv.channels(), h = xv.height(), w = xv.width();
  const int oh = h / 2, ow = w / 2;
  Tensor out({c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        std::size_t best = (static_cast<std::size_t>(ch) * h + 2 * oy) * w + 2 * ox;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (static_cast<std::size_t>(ch) * h + 2 * oy + dy) * w + 2 * ox + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (static_cast<std::size_t>(ch) * oh + oy) * ow + ox;
        out[o] = xv[best];
        argmax[o] = best;
      }
  return make_result(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
  });
}

Var filter(const Var& x, const Kernel& k, Border border) {
  const Tensor& xv = x.value();
  Tensor out = correlate_channels(xv, k, border);
  const int h = xv.height(), w = xv.width();
  return make_result(std::move(out), {x}, [k, border, h, w](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int ch = 0; ch < p.value.channels(); ++ch) correlate_adjoint(self.grad.plane(ch), h, w, k, border, g.plane(ch));
  });
}

Var crop(const Var& x, int y0, int x0, int h, int w) {
  const Tensor& xv = x.value();
  MDA_REQUIRE(xv.rank() == 3 && y0 >= 0 && x0 >= 0 && h > 0 && w > 0 && y0 + h <= xv.height() &&
                  x0 + w <= xv.width(),
              ShapeError, "crop window outside " + shape_str(xv.shape()));
  const int c = xv.channels();
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out.at(ch, y, xx) = xv.at(ch, y0 + y, x0 + xx);
  return make_result(std::move(out), {x}, [c, h, w, y0, x0](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) g.at(ch, y0 + y, x0 + xx) += self.grad.at(ch, y, xx);
  });
}

Var gram(const Var& x) {
  const Tensor& xv = x.value();
  MDA_REQUIRE(xv.rank() == 3, ShapeError, "gram expects (C,H,W)");
  const int c = xv.channels();
  const int n = xv.height() * xv.width();
  const double norm = static_cast<double>(c) * n;
  Tensor out({c, c});
  Eigen::Map<const RowMat> F(xv.data(), c, n);
  Eigen::Map<RowMat> G(out.data(), c, c);
  G.noalias() = F * F.transpose();
  G /= norm;
  return make_result(std::move(out), {x}, [c, n, norm](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    Eigen::Map<const RowMat> F(p.value.data(), c, n);
    Eigen::Map<const RowMat> dG(self.grad.data(), c, c);
    Eigen::Map<RowMat> dF(p.grad_buffer().data(), c, n);
    RowMat sym = (dG + dG.transpose()) / norm;
    dF.noalias() += sym * F;
  });
}

Var replicate_normalize(const Var& x, const std::array<double, 3>& mean, const std::array<double, 3>& stddev) {
  const Tensor& xv = x.value();
  MDA_REQUIRE(xv.rank() == 3 && xv.channels() == 1, ShapeError, "replicate_normalize expects (1,H,W)");
  Tensor out({3, xv.height(), xv.width()});
  for (int ch = 0; ch < 3; ++ch) {
    auto dst = out.plane(ch);
    auto src = xv.plane(0);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - mean[ch]) / stddev[ch];
  }
  return make_result(std::move(out), {x}, [stddev](Node& self) {
    Node& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto g = p.grad_buffer().plane(0);
    for (int ch = 0; ch < 3; ++ch) {
      auto go = self.grad.plane(ch);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] / stddev[ch];
    }
  });
}

}  // namespace mda::ag
