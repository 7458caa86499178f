#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mda/backbone.hpp"
#include "mda/error.hpp"
#include "mda/infoweights.hpp"
#include "mda/metrics.hpp"
#include "mda/network.hpp"

namespace py = pybind11;
using namespace mda;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

GrayImage to_gray(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array, got " + std::to_string(a.ndim()) + " dimensions");
  const auto h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  return GrayImage(h, w, std::vector<double>(a.data(), a.data() + a.size()));
}

Array from_gray(const GrayImage& img) {
  Array out({img.height(), img.width()});
  std::copy(img.pixels().begin(), img.pixels().end(), out.mutable_data());
  return out;
}

/// (3,H,W) planar to (H,W,3) interleaved.
Array from_color(const ColorImage& img) {
  Array out({img.height(), img.width(), 3});
  auto v = out.mutable_unchecked<3>();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) v(y, x, c) = img.at(c, y, x);
  return out;
}

py::dict weights_dict(const WeightSet& w) {
  py::dict d;
  d["int_ir"] = w.int_ir;
  d["int_vis"] = w.int_vis;
  d["grad_ir"] = w.grad_ir;
  d["grad_vis"] = w.grad_vis;
  return d;
}

}  // namespace

PYBIND11_MODULE(_mda, m) {
  m.doc() = "Native core of the MDA infrared-visible fusion library";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
  py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_IOError);
  py::register_exception<VersionError>(m, "VersionError", PyExc_IOError);

  m.def(
      "synthetic_pair",
      [](int height, int width, std::uint64_t seed) {
        const ImagePair p = make_synthetic_pair({height, width, seed});
        py::dict d;
        d["ir"] = from_gray(p.ir);
        d["vis"] = from_color(p.vis);
        d["vis_y"] = from_gray(p.vis_y);
        return d;
      },
      py::arg("height") = 128, py::arg("width") = 128, py::arg("seed") = 0,
      "Synthetic registered pair: ir (H,W), vis (H,W,3) and vis_y (H,W), all in [0,1].");

  m.def(
      "image_weights",
      [](const Array& ir, const Array& vis_y, const std::string& backbone, std::uint64_t seed, int vgg_depth) {
        InfoConfig info;
        info.vgg_depth = vgg_depth;
        info.validate();
        const BackboneWeights bb = load_backbone(backbone, seed, vgg_depth);
        return weights_dict(image_weights(to_gray(ir), to_gray(vis_y), bb, info));
      },
      py::arg("ir"), py::arg("vis_y"), py::arg("backbone") = "random", py::arg("seed") = 0, py::arg("vgg_depth") = 2);

  m.def(
      "patch_weights",
      [](const Array& ir, const Array& vis_y, int window, int stride) {
        InfoConfig info;
        info.window = window;
        info.stride = stride;
        info.validate();
        const PatchWeightGrid g = patch_weights(to_gray(ir), to_gray(vis_y), info);
        py::list cells;
        for (std::size_t i = 0; i < g.cells.size(); ++i) {
          py::dict d = weights_dict(g.cells[i]);
          d["y"] = g.origins[i].y;
          d["x"] = g.origins[i].x;
          cells.append(d);
        }
        return cells;
      },
      py::arg("ir"), py::arg("vis_y"), py::arg("window") = 21, py::arg("stride") = 21);

  m.def("metric_names", &metrics::all_names);
  m.def(
      "metric",
      [](const std::string& name, const Array& fused, const Array& ir, const Array& vis) {
        const auto names = metrics::parse_list(name);
        if (names.size() != 1) throw PreconditionError("expected exactly one metric name");
        return metrics::compute(names[0], to_gray(fused), to_gray(ir), to_gray(vis));
      },
      py::arg("name"), py::arg("fused"), py::arg("ir"), py::arg("vis"));

  m.def(
      "init_model",
      [](const std::string& path, std::uint64_t seed, int channels, const std::string& fusion) {
        NetConfig cfg;
        cfg.channels = channels;
        cfg.reduction = std::min(cfg.reduction, channels);
        cfg.fusion = fusion_mode_from_string(fusion);
        cfg.validate();
        save_params(path, init_params(cfg, seed));
      },
      py::arg("path"), py::arg("seed") = 0, py::arg("channels") = 32, py::arg("fusion") = "attention",
      "Writes a freshly initialized model archive.");

  m.def(
      "fuse",
      [](const Array& ir, const Array& vis_y, const std::string& checkpoint) {
        const ModelParams p = load_params(checkpoint);
        const GrayImage a = to_gray(ir), b = to_gray(vis_y);
        GrayImage out;
        {
          py::gil_scoped_release release;
          out = fuse_y(a, b, p);
        }
        return from_gray(out);
      },
      py::arg("ir"), py::arg("vis_y"), py::arg("checkpoint"), "Fused Y plane for any input size.");
}
