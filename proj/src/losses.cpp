#include "mda/losses.hpp"

#include "mda/error.hpp"
#include "mda/filters.hpp"
#include "mda/ops.hpp"

namespace mda {

void LossConfig::validate() const {
  MDA_REQUIRE(alpha >= 0 && beta >= 0 && gamma >= 0 && eta >= 0 && zeta >= 0, PreconditionError,
              "loss weights must be non-negative");
  for (double l : lambda) MDA_REQUIRE(l >= 0, PreconditionError, "block weights must be non-negative");
  MDA_REQUIRE(ssim_window > 0 && ssim_window % 2 == 1 && ssim_sigma > 0, PreconditionError,
              "ssim window must be odd and sigma positive");
  MDA_REQUIRE(ssim_k1 > 0 && ssim_k2 > 0, PreconditionError, "ssim constants must be positive");
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"alpha", c.alpha}, {"beta", c.beta},     {"gamma", c.gamma},   {"eta", c.eta},
       {"zeta", c.zeta},   {"lambda", c.lambda}, {"ssim_window", c.ssim_window}, {"ssim_sigma", c.ssim_sigma},
       {"ssim_k1", c.ssim_k1}, {"ssim_k2", c.ssim_k2}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  LossConfig d;
  c.alpha = j.value("alpha", d.alpha);
  c.beta = j.value("beta", d.beta);
  c.gamma = j.value("gamma", d.gamma);
  c.eta = j.value("eta", d.eta);
  c.zeta = j.value("zeta", d.zeta);
  c.lambda = j.value("lambda", d.lambda);
  c.ssim_window = j.value("ssim_window", d.ssim_window);
  c.ssim_sigma = j.value("ssim_sigma", d.ssim_sigma);
  c.ssim_k1 = j.value("ssim_k1", d.ssim_k1);
  c.ssim_k2 = j.value("ssim_k2", d.ssim_k2);
}

ag::Var ssim_map(const ag::Var& x, const ag::Var& y, const LossConfig& cfg) {
  require_same_shape(x.value(), y.value(), "ssim");
  MDA_REQUIRE(x.value().rank() == 3 && x.value().channels() == 1, ShapeError, "ssim expects (1,H,W) maps");
  MDA_REQUIRE(x.value().height() >= cfg.ssim_window && x.value().width() >= cfg.ssim_window, PreconditionError,
              "ssim input smaller than its window");
  using namespace ag;
  const Kernel g = gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma);
  const double c1 = cfg.ssim_k1 * cfg.ssim_k1, c2 = cfg.ssim_k2 * cfg.ssim_k2;
  Var mx = filter(x, g, Border::Valid), my = filter(y, g, Border::Valid);
  Var mxx = square(mx), myy = square(my), mxy = mul(mx, my);
  Var sxx = sub(filter(square(x), g, Border::Valid), mxx);
  Var syy = sub(filter(square(y), g, Border::Valid), myy);
  Var sxy = sub(filter(mul(x, y), g, Border::Valid), mxy);
  Var num = mul(add_scalar(scale(mxy, 2.0), c1), add_scalar(scale(sxy, 2.0), c2));
  Var den = mul(add_scalar(add(mxx, myy), c1), add_scalar(add(sxx, syy), c2));
  return div(num, den);
}

ag::Var mssim(const ag::Var& x, const ag::Var& y, const LossConfig& cfg) { return ag::mean(ssim_map(x, y, cfg)); }

SsimResult ssim(const GrayImage& x, const GrayImage& y, const LossConfig& cfg) {
  ag::NoGradGuard guard;
  ag::Var m = ssim_map(ag::Var::constant(x.tensor()), ag::Var::constant(y.tensor()), cfg);
  SsimResult r;
  r.map = m.value();
  r.mssim = r.map.sum() / static_cast<double>(r.map.size());
  return r;
}

ag::Var region_loss(const ag::Var& fused, const ag::Var& ir, const ag::Var& vis_y, const WeightSet& w,
                    const LossConfig& cfg) {
  using namespace ag;
  Var grad_term = add(scale(add_scalar(scale(mssim(fused, ir, cfg), -1.0), 1.0), w.grad_ir),
                      scale(add_scalar(scale(mssim(fused, vis_y, cfg), -1.0), 1.0), w.grad_vis));
  Var int_term = add(scale(mse(fused, ir), w.int_ir), scale(mse(fused, vis_y), w.int_vis));
  return add(grad_term, scale(int_term, cfg.zeta));
}

ag::Var image_loss(const ag::Var& fused, const ag::Var& ir, const ag::Var& vis_y, const WeightSet& w,
                   const LossConfig& cfg) {
  require_same_shape(fused.value(), ir.value(), "image_loss");
  require_same_shape(fused.value(), vis_y.value(), "image_loss");
  return region_loss(fused, ir, vis_y, w, cfg);
}

ag::Var patch_loss(const ag::Var& fused, const ag::Var& ir, const ag::Var& vis_y, const PatchWeightGrid& grid,
                   const LossConfig& cfg) {
  require_same_shape(fused.value(), ir.value(), "patch_loss");
  require_same_shape(fused.value(), vis_y.value(), "patch_loss");
  MDA_REQUIRE(!grid.origins.empty() && grid.origins.size() == grid.cells.size(), PreconditionError,
              "patch grid has no windows");
  using namespace ag;
  const int win = grid.window;
  MDA_REQUIRE(fused.value().height() >= win && fused.value().width() >= win, PreconditionError,
              "image smaller than the patch window");
  Var acc;
  for (std::size_t i = 0; i < grid.origins.size(); ++i) {
    const CropOrigin o = grid.origins[i];
    Var term = region_loss(crop(fused, o.y, o.x, win, win), crop(ir, o.y, o.x, win, win),
                           crop(vis_y, o.y, o.x, win, win), grid.cells[i], cfg);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return scale(acc, 1.0 / static_cast<double>(grid.origins.size()));
}

ag::Var feature_loss(const std::array<BlockTrace, 5>& blocks, const LossConfig& cfg) {
  using namespace ag;
  const Kernel log = log_kernel(7, 1.0);
  Var acc = Var::constant(Tensor::scalar(0.0));
  for (std::size_t t = 0; t < blocks.size(); ++t) {
    if (cfg.lambda[t] == 0.0) continue;
    const BlockTrace& b = blocks[t];
    MDA_REQUIRE(b.out.defined() && b.in_ir.defined() && b.in_vis.defined(), PreconditionError,
                "feature loss needs every block's inputs and output");
    require_same_shape(b.out.value(), b.in_vis.value(), "feature_loss");
    require_same_shape(b.out.value(), b.in_ir.value(), "feature_loss");
    Var grad_term = mean(square(filter(sub(b.out, b.in_vis), log, Border::Replicate)));
    Var term = add(grad_term, scale(mse(b.out, b.in_ir), cfg.eta));
    acc = add(acc, scale(term, cfg.lambda[t]));
  }
  return acc;
}

ag::Var style_loss(const ag::Var& fused, const ag::Var& ir, const BackboneWeights& backbone) {
  require_same_shape(fused.value(), ir.value(), "style_loss");
  MDA_REQUIRE(backbone.depth() >= 2, PreconditionError, "style loss needs two backbone stages");
  std::vector<Tensor> ir_feats;
  {
    ag::NoGradGuard guard;
    for (const ag::Var& f : perceptual_features(ag::Var::constant(ir.value()), backbone, 2)) ir_feats.push_back(f.value());
  }
  return style_loss(fused, ir_feats, backbone);
}

ag::Var style_loss(const ag::Var& fused, const std::vector<Tensor>& ir_features, const BackboneWeights& backbone) {
  MDA_REQUIRE(ir_features.size() >= 2, PreconditionError, "style loss needs two infrared feature stages");
  using namespace ag;
  std::vector<Var> fused_feats = perceptual_features(fused, backbone, 2);
  Var acc;
  for (std::size_t i = 0; i < 2; ++i) {
    Tensor ir_gram;
    {
      NoGradGuard guard;
      ir_gram = gram(Var::constant(ir_features[i])).value();
    }
    Var term = sum(square(sub(gram(fused_feats[i]), Var::constant(std::move(ir_gram)))));
    acc = acc.defined() ? add(acc, term) : term;
  }
  return acc;
}

LossBreakdown total_loss(const ForwardResult& fwd, const ag::Var& ir, const ag::Var& vis_y, const WeightSet& weights,
                         const PatchWeightGrid& grid, const BackboneWeights& backbone, const LossConfig& cfg,
                         const std::vector<Tensor>* ir_features) {
  cfg.validate();
  using namespace ag;
  Var image = image_loss(fwd.fused, ir, vis_y, weights, cfg);
  Var patch = patch_loss(fwd.fused, ir, vis_y, grid, cfg);
  Var pixel = add(image, scale(patch, cfg.gamma));
  Var feature = feature_loss(fwd.blocks, cfg);
  Var style = ir_features ? style_loss(fwd.fused, *ir_features, backbone) : style_loss(fwd.fused, ir, backbone);
  LossBreakdown b;
  b.graph = add(add(pixel, scale(feature, cfg.alpha)), scale(style, cfg.beta));
  b.image = image.item();
  b.patch = patch.item();
  b.pixel = pixel.item();
  b.feature = feature.item();
  b.style = style.item();
  b.total = b.graph.item();
  b.weights = weights;
  b.grid = grid;
  return b;
}

}  // namespace mda
