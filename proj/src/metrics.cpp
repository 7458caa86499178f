#include "mda/metrics.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <spdlog/spdlog.h>

#include "mda/error.hpp"
#include "mda/filters.hpp"

namespace mda::metrics {

Plane quantize(const GrayImage& img) {
  MDA_REQUIRE(!img.empty(), PreconditionError, "metric on an empty image");
  Plane p{img.height(), img.width(), {}};
  p.px.reserve(img.size());
  for (double v : img.pixels()) p.px.push_back(static_cast<double>(to_u8(v)));
  return p;
}

namespace {

void require_triple(const GrayImage& f, const GrayImage& a, const GrayImage& b, const char* what) {
  MDA_REQUIRE(f.same_shape(a) && f.same_shape(b), ShapeError, std::string(what) + ": fused and source sizes differ");
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::vector<double> minus(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

}  // namespace

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  MDA_REQUIRE(a.size() == b.size() && !a.empty(), ShapeError, "pearson: size mismatch");
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double en(const GrayImage& img) {
  const Plane p = quantize(img);
  std::array<std::size_t, 256> hist{};
  for (double v : p.px) ++hist[static_cast<std::size_t>(v)];
  const double n = static_cast<double>(p.px.size());
  double h = 0.0;
  for (std::size_t c : hist)
    if (c) {
      const double q = static_cast<double>(c) / n;
      h -= q * std::log2(q);
    }
  return h;
}

double sd(const GrayImage& img) {
  const Plane p = quantize(img);
  const double m = mean_of(p.px);
  double s = 0.0;
  for (double v : p.px) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(p.px.size()));
}

double ag(const GrayImage& img) {
  const Plane p = quantize(img);
  if (p.height < 2 || p.width < 2) return 0.0;
  double s = 0.0;
  for (int y = 0; y < p.height - 1; ++y)
    for (int x = 0; x < p.width - 1; ++x) {
      const double gx = p(y, x + 1) - p(y, x);
      const double gy = p(y + 1, x) - p(y, x);
      s += std::sqrt((gx * gx + gy * gy) / 2.0);
    }
  return s / (static_cast<double>(p.height - 1) * (p.width - 1));
}

double mse(const GrayImage& fused, const GrayImage& ir, const GrayImage& vis) {
  require_triple(fused, ir, vis, "mse");
  const Plane f = quantize(fused), a = quantize(ir), b = quantize(vis);
  double sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < f.px.size(); ++i) {
    sa += (f.px[i] - a.px[i]) * (f.px[i] - a.px[i]);
    sb += (f.px[i] - b.px[i]) * (f.px[i] - b.px[i]);
  }
  const double n = static_cast<double>(f.px.size()) * 255.0 * 255.0;
  return 0.5 * (sa / n + sb / n);
}

double cc(const GrayImage& fused, const GrayImage& ir, const GrayImage& vis) {
  require_triple(fused, ir, vis, "cc");
  const Plane f = quantize(fused), a = quantize(ir), b = quantize(vis);
  return 0.5 * (pearson(f.px, a.px) + pearson(f.px, b.px));
}

double scd(const GrayImage& fused, const GrayImage& ir, const GrayImage& vis) {
  require_triple(fused, ir, vis, "scd");
  const Plane f = quantize(fused), a = quantize(ir), b = quantize(vis);
  return pearson(minus(f.px, b.px), a.px) + pearson(minus(f.px, a.px), b.px);
}

namespace {

struct EdgeField {
  std::vector<double> g, a;
};

EdgeField sobel_edges(const Plane& p) {
  const auto sx = correlate(p.px, p.height, p.width, sobel_x(), Border::Replicate);
  const auto sy = correlate(p.px, p.height, p.width, sobel_y(), Border::Replicate);
  EdgeField e;
  e.g.resize(sx.size());
  e.a.resize(sx.size());
  // Orientation follows the conv2 form of the reference implementation, whose
  // horizontal response is the negated correlation.
  for (std::size_t i = 0; i < sx.size(); ++i) {
    const double x = -sx[i], y = sy[i];
    e.g[i] = std::sqrt(x * x + y * y);
    e.a[i] = x == 0.0 ? std::numbers::pi / 2 : std::atan(y / x);
  }
  return e;
}

std::vector<double> edge_preservation(const EdgeField& s, const EdgeField& f) {
  constexpr double tg = 0.9994, kg = -15.0, dg = 0.5;
  constexpr double ta = 0.9879, ka = -22.0, da = 0.8;
  std::vector<double> q(s.g.size(), 0.0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (s.g[i] == 0.0 || f.g[i] == 0.0) continue;
    const double gaf = s.g[i] > f.g[i] ? f.g[i] / s.g[i] : s.g[i] / f.g[i];
    const double aaf = 1.0 - std::abs(s.a[i] - f.a[i]) / (std::numbers::pi / 2);
    const double qg = tg / (1.0 + std::exp(kg * (gaf - dg)));
    const double qa = ta / (1.0 + std::exp(ka * (aaf - da)));
    q[i] = qg * qa;
  }
  return q;
}

}  // namespace

double qabf(const GrayImage& fused, const GrayImage& ir, const GrayImage& vis) {
  require_triple(fused, ir, vis, "qabf");
  const EdgeField ef = sobel_edges(quantize(fused));
  const EdgeField ea = sobel_edges(quantize(ir));
  const EdgeField eb = sobel_edges(quantize(vis));
  const auto qa = edge_preservation(ea, ef);
  const auto qb = edge_preservation(eb, ef);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < qa.size(); ++i) {
    num += qa[i] * ea.g[i] + qb[i] * eb.g[i];
    den += ea.g[i] + eb.g[i];
  }
  return den > 0.0 ? num / den : 0.0;
}

namespace {

struct Field {
  int h = 0, w = 0;
  std::vector<double> v;
};

Field valid_filter(const Field& f, const Kernel& k) {
  Field out;
  out.v = correlate(f.v, f.h, f.w, k, Border::Valid, &out.h, &out.w);
  return out;
}

Field downsample2(const Field& f) {
  Field out;
  out.h = (f.h + 1) / 2;
  out.w = (f.w + 1) / 2;
  out.v.reserve(static_cast<std::size_t>(out.h) * out.w);
  for (int y = 0; y < f.h; y += 2)
    for (int x = 0; x < f.w; x += 2) out.v.push_back(f.v[static_cast<std::size_t>(y) * f.w + x]);
  return out;
}

Field product(const Field& a, const Field& b) {
  Field out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.v[i];
  return out;
}

}  // namespace

double vif_single(const GrayImage& ref_img, const GrayImage& dist_img) {
  MDA_REQUIRE(ref_img.same_shape(dist_img), ShapeError, "vif: size mismatch");
  constexpr double sigma_nsq = 2.0, eps = 1e-10;
  const Plane rp = quantize(ref_img), dp = quantize(dist_img);
  Field ref{rp.height, rp.width, rp.px}, dist{dp.height, dp.width, dp.px};
  double num = 0.0, den = 0.0;
  for (int scale = 1; scale <= 4; ++scale) {
    const int n = (1 << (4 - scale + 1)) + 1;
    if (ref.h < n || ref.w < n) break;
    const Kernel win = gaussian_kernel(n, n / 5.0);
    if (scale > 1) {
      ref = downsample2(valid_filter(ref, win));
      dist = downsample2(valid_filter(dist, win));
      if (ref.h < n || ref.w < n) break;
    }
    const Field mu1 = valid_filter(ref, win), mu2 = valid_filter(dist, win);
    const Field e11 = valid_filter(product(ref, ref), win);
    const Field e22 = valid_filter(product(dist, dist), win);
    const Field e12 = valid_filter(product(ref, dist), win);
    for (std::size_t i = 0; i < mu1.v.size(); ++i) {
      double s1 = std::max(0.0, e11.v[i] - mu1.v[i] * mu1.v[i]);
      const double s2 = std::max(0.0, e22.v[i] - mu2.v[i] * mu2.v[i]);
      const double s12 = e12.v[i] - mu1.v[i] * mu2.v[i];
      double g = s12 / (s1 + eps);
      double sv = s2 - g * s12;
      if (s1 < eps) {
        g = 0.0;
        sv = s2;
        s1 = 0.0;
      }
      if (s2 < eps) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = s2;
        g = 0.0;
      }
      sv = std::max(sv, eps);
      num += std::log10(1.0 + g * g * s1 / (sv + sigma_nsq));
      den += std::log10(1.0 + s1 / sigma_nsq);
    }
  }
  return den > 0.0 ? num / den : 0.0;
}

double vif(const GrayImage& fused, const GrayImage& ir, const GrayImage& vis) {
  require_triple(fused, ir, vis, "vif");
  return 0.5 * (vif_single(ir, fused) + vif_single(vis, fused));
}

const std::vector<std::string>& all_names() {
  static const std::vector<std::string> names{"en", "vif", "scd", "mse", "ag", "cc", "qabf", "sd"};
  return names;
}

std::vector<std::string> parse_list(const std::string& list) {
  std::vector<std::string> out;
  std::string token;
  auto flush = [&] {
    std::string t;
    for (char ch : token)
      if (!std::isspace(static_cast<unsigned char>(ch))) t += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    token.clear();
    if (t.empty()) return;
    if (t == "q_abf" || t == "qab/f") t = "qabf";
    MDA_REQUIRE(std::find(all_names().begin(), all_names().end(), t) != all_names().end(), PreconditionError,
                "unknown metric '" + t + "'");
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  };
  for (char ch : list) {
    if (ch == ',')
      flush();
    else
      token += ch;
  }
  flush();
  return out.empty() ? all_names() : out;
}

double compute(const std::string& name, const GrayImage& fused, const GrayImage& ir, const GrayImage& vis) {
  if (name == "en") return en(fused);
  if (name == "sd") return sd(fused);
  if (name == "ag") return ag(fused);
  if (name == "mse") return mse(fused, ir, vis);
  if (name == "cc") return cc(fused, ir, vis);
  if (name == "scd") return scd(fused, ir, vis);
  if (name == "qabf") return qabf(fused, ir, vis);
  if (name == "vif") return vif(fused, ir, vis);
  throw PreconditionError("unknown metric '" + name + "'");
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["metadata"] = metadata;
  j["metrics"] = metrics;
  j["images"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    nlohmann::json row{{"id", ids[i]}};
    for (std::size_t m = 0; m < metrics.size(); ++m) row[metrics[m]] = values[i][m];
    j["images"].push_back(row);
  }
  nlohmann::json avg;
  for (std::size_t m = 0; m < metrics.size(); ++m) avg[metrics[m]] = mean[m];
  j["mean"] = avg;
  return j;
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  MDA_REQUIRE(out, Error, "cannot write " + path.string());
  out << "id";
  for (const auto& m : metrics) out << ',' << m;
  out << '\n';
  out.precision(10);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i];
    for (double v : values[i]) out << ',' << v;
    out << '\n';
  }
  out << "mean";
  for (double v : mean) out << ',' << v;
  out << '\n';
}

void MetricsReport::write_json(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  MDA_REQUIRE(out, Error, "cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

MetricsReport evaluate_pairs(const std::vector<std::string>& ids, const std::vector<GrayImage>& fused,
                             const std::vector<GrayImage>& ir, const std::vector<GrayImage>& vis,
                             const std::vector<std::string>& metrics) {
  MDA_REQUIRE(!ids.empty(), EmptyManifestError, "no images to evaluate");
  MDA_REQUIRE(ids.size() == fused.size() && ids.size() == ir.size() && ids.size() == vis.size(), ShapeError,
              "evaluate: list sizes differ");
  MetricsReport r;
  r.metrics = metrics.empty() ? all_names() : metrics;
  r.ids = ids;
  r.mean.assign(r.metrics.size(), 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::vector<double> row;
    for (std::size_t m = 0; m < r.metrics.size(); ++m) {
      row.push_back(compute(r.metrics[m], fused[i], ir[i], vis[i]));
      r.mean[m] += row.back();
    }
    r.values.push_back(std::move(row));
  }
  for (double& m : r.mean) m /= static_cast<double>(ids.size());
  r.metadata["channel"] = "fused Y against ir and visible Y";
  r.metadata["quantization"] = "8-bit";
  r.metadata["count"] = ids.size();
  return r;
}

MetricsReport evaluate_dataset(const DatasetManifest& manifest, const std::filesystem::path& fused_dir,
                               const std::vector<std::string>& metrics) {
  MDA_REQUIRE(!manifest.entries.empty(), EmptyManifestError, "manifest has no entries");
  static const char* exts[] = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
  std::vector<std::string> ids, missing;
  std::vector<GrayImage> fused, ir, vis;
  for (const auto& e : manifest.entries) {
    std::filesystem::path found;
    for (const char* ext : exts) {
      auto p = fused_dir / (e.id + ext);
      if (std::filesystem::exists(p)) {
        found = p;
        break;
      }
    }
    if (found.empty()) {
      missing.push_back(e.id);
      continue;
    }
    ImagePair pair = load_pair(e.ir, e.vis, e.id);
    GrayImage f = load_gray(found);
    MDA_REQUIRE(f.same_shape(pair.ir), ShapeError, "fused image for '" + e.id + "' has a different size");
    ids.push_back(e.id);
    fused.push_back(std::move(f));
    ir.push_back(std::move(pair.ir));
    vis.push_back(std::move(pair.vis_y));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw Error("missing fused images for: " + list);
  }
  spdlog::info("evaluating {} images from {}", ids.size(), fused_dir.string());
  MetricsReport r = evaluate_pairs(ids, fused, ir, vis, metrics);
  r.metadata["dataset"] = manifest.root.string();
  r.metadata["fused_dir"] = fused_dir.string();
  return r;
}

}  // namespace mda::metrics
