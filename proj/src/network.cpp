#include "mda/network.hpp"

#include <boost/crc.hpp>
#include <cmath>
#include <random>

#include "mda/archive.hpp"
#include "mda/error.hpp"
#include "mda/ops.hpp"

namespace mda {

// ---- configuration ----

void NetConfig::validate() const {
  MDA_REQUIRE(channels > 0 && reduction > 0 && channels % reduction == 0, PreconditionError,
              "channels must be positive and divisible by the reduction ratio");
  MDA_REQUIRE(scales == 3, PreconditionError, "the network is defined for exactly 3 scales");
  MDA_REQUIRE(fusion_blocks == 5, PreconditionError, "the network is defined for exactly 5 fusion blocks");
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::Attention: return "attention";
    case FusionMode::Sum: return "sum";
    case FusionMode::Concat: return "concat";
  }
  return "attention";
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "attention") return FusionMode::Attention;
  if (s == "sum") return FusionMode::Sum;
  if (s == "concat") return FusionMode::Concat;
  throw PreconditionError("unknown fusion mode '" + s + "'");
}

void to_json(nlohmann::json& j, const NetConfig& c) {
  j = {{"channels", c.channels},   {"scales", c.scales}, {"fusion_blocks", c.fusion_blocks},
       {"reduction", c.reduction}, {"fusion", to_string(c.fusion)}};
}

void from_json(const nlohmann::json& j, NetConfig& c) {
  NetConfig d;
  c.channels = j.value("channels", d.channels);
  c.scales = j.value("scales", d.scales);
  c.fusion_blocks = j.value("fusion_blocks", d.fusion_blocks);
  c.reduction = j.value("reduction", d.reduction);
  c.fusion = fusion_mode_from_string(j.value("fusion", to_string(d.fusion)));
}

// ---- parameter store ----

void ModelParams::add(std::string name, Tensor value) {
  MDA_REQUIRE(!has(name), PreconditionError, "duplicate parameter " + name);
  entries_.emplace_back(std::move(name), ag::Var::parameter(std::move(value)));
}

bool ModelParams::has(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return true;
  return false;
}

const ag::Var& ModelParams::get(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  throw PreconditionError("no parameter named " + name);
}

ag::Var& ModelParams::get(const std::string& name) {
  for (auto& [n, v] : entries_)
    if (n == name) return v;
  throw PreconditionError("no parameter named " + name);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.value().size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

bool ModelParams::all_finite() const {
  for (const auto& [name, v] : entries_)
    if (!v.value().all_finite()) return false;
  return true;
}

std::uint32_t ModelParams::checksum() const {
  boost::crc_32_type crc;
  for (const auto& [name, v] : entries_) crc.process_bytes(v.value().data(), v.value().size() * sizeof(double));
  return crc.checksum();
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  out.config = config;
  for (const auto& [name, v] : entries_) out.add(name, v.value());
  return out;
}

namespace {

class Initializer {
 public:
  Initializer(ModelParams& p, std::uint64_t seed) : p_(p), rng_(seed) {}

  void conv(const std::string& name, int cout, int cin, int k) {
    kernel(name + ".w", {cout, cin, k, k}, cin * k * k);
    p_.add(name + ".b", Tensor({cout}, 0.0));
  }
  void fc(const std::string& name, int out, int in) {
    kernel(name + ".w", {out, in}, in);
    p_.add(name + ".b", Tensor({out}, 0.0));
  }
  void act(const std::string& name, int c) { p_.add(name, Tensor({c}, 0.25)); }

 private:
  void kernel(const std::string& name, Shape shape, int fan_in) {
    constexpr double a = 0.25;
    const double bound = std::sqrt(6.0 / ((1.0 + a * a) * fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (double& v : t.vec()) v = dist(rng_);
    p_.add(name, std::move(t));
  }

  ModelParams& p_;
  std::mt19937_64 rng_;
};

const char* kBranches[] = {"ir", "vis"};
const int kStrides[] = {1, 2, 4};

std::string block_name(int index) { return "fuse" + std::to_string(index + 1); }

}  // namespace

ModelParams init_params(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  Initializer init(p, seed);
  const int c = cfg.channels;
  for (const char* br : kBranches) {
    const std::string b = br;
    init.conv("stem." + b + ".conv", c, 1, 3);
    init.act("stem." + b + ".act", c);
    for (int s : kStrides) {
      const std::string n = "down." + b + ".s" + std::to_string(s);
      init.conv(n + ".conv1", c, c, 3);
      init.act(n + ".act1", c);
      init.conv(n + ".conv2", c, c, 3);
      init.act(n + ".act2", c);
      if (s > 1) init.conv(n + ".short", c, c, 1);
    }
  }
  for (int k = 0; k < 5; ++k) {
    const std::string n = block_name(k);
    if (k == 1 || k == 3) init.conv(n + ".up", c, c, 3);
    switch (cfg.fusion) {
      case FusionMode::Attention:
        init.fc(n + ".ca.fc1", c / cfg.reduction, c);
        init.act(n + ".ca.act", c / cfg.reduction);
        init.fc(n + ".ca.fc2", 2 * c, c / cfg.reduction);
        init.conv(n + ".sa.conv1", c, 2 * c, 3);
        init.act(n + ".sa.act", c);
        init.conv(n + ".sa.conv2", 2 * c, c, 3);
        break;
      case FusionMode::Concat: init.conv(n + ".cat", c, 2 * c, 3); break;
      case FusionMode::Sum: break;
    }
  }
  for (int m = 3; m <= 5; ++m) {
    const std::string n = "up.m" + std::to_string(m);
    init.conv(n + ".conv1", c, c, 3);
    init.act(n + ".act1", c);
    init.conv(n + ".conv2", c, c, 3);
    init.act(n + ".act2", c);
    init.conv(n + ".short", c, c, 1);
  }
  init.conv("recon.conv1", c, 5 * c, 3);
  init.act("recon.act", c);
  init.conv("recon.conv2", 1, c, 3);
  return p;
}

void save_params(const std::filesystem::path& path, const ModelParams& params) {
  Archive a;
  a.kind = "mda_model";
  a.meta["net_config"] = params.config;
  a.meta["names"] = nlohmann::json::array();
  for (const auto& [name, v] : params.entries()) {
    a.meta["names"].push_back(name);
    a.put(name, v.value());
  }
  a.meta["params_checksum"] = params.checksum();
  save_archive(path, a);
}

ModelParams load_params(const std::filesystem::path& path) {
  Archive a = load_archive(path);
  std::string prefix;
  if (a.kind == "mda_checkpoint")
    prefix = "model/";
  else if (a.kind != "mda_model")
    throw IntegrityError("archive " + path.string() + " is neither a model nor a checkpoint (kind '" + a.kind + "')");
  const nlohmann::json& meta = a.kind == "mda_model" ? a.meta : a.meta.at("model");
  ModelParams p;
  p.config = meta.at("net_config").get<NetConfig>();
  for (const auto& name : meta.at("names")) p.add(name.get<std::string>(), a.get(prefix + name.get<std::string>()));
  if (p.checksum() != meta.at("params_checksum").get<std::uint32_t>())
    throw IntegrityError("parameter checksum mismatch in " + path.string());
  // Names and shapes must match a freshly built model of the same config.
  ModelParams ref = init_params(p.config, 0);
  MDA_REQUIRE(ref.entries().size() == p.entries().size(), IntegrityError, "parameter set does not match its config");
  for (std::size_t i = 0; i < ref.entries().size(); ++i) {
    const auto& [rn, rv] = ref.entries()[i];
    const auto& [pn, pv] = p.entries()[i];
    MDA_REQUIRE(rn == pn && rv.shape() == pv.shape(), IntegrityError,
                "parameter " + pn + " does not match the expected layout (" + rn + " " + shape_str(rv.shape()) + ")");
  }
  return p;
}

// ---- forward ----

namespace {

ag::Var conv(const ag::Var& x, const ModelParams& p, const std::string& name, int stride = 1) {
  const ag::Var& w = p.get(name + ".w");
  return ag::conv2d(x, w, p.get(name + ".b"), stride, w.value().dim(2) / 2);
}

ag::Var act(const ag::Var& x, const ModelParams& p, const std::string& name) { return ag::prelu(x, p.get(name)); }

ag::Var residual_up(const ag::Var& x, int factor, const ModelParams& p, const std::string& n) {
  ag::Var u = ag::upsample_bilinear(x, factor);
  ag::Var main = act(conv(act(conv(u, p, n + ".conv1"), p, n + ".act1"), p, n + ".conv2"), p, n + ".act2");
  return ag::add(main, conv(u, p, n + ".short"));
}

}  // namespace

ag::Var stem(const ag::Var& img, const ModelParams& p, const std::string& branch) {
  MDA_REQUIRE(img.value().rank() == 3 && img.value().channels() == 1, ShapeError,
              "stem expects a (1,H,W) grayscale input, got " + shape_str(img.shape()));
  return act(conv(img, p, "stem." + branch + ".conv"), p, "stem." + branch + ".act");
}

FeaturePyramid downsample_pyramid(const ag::Var& f, const ModelParams& p, const std::string& branch) {
  const Tensor& v = f.value();
  MDA_REQUIRE(v.rank() == 3 && v.height() % 4 == 0 && v.width() % 4 == 0 && v.height() >= 4 && v.width() >= 4,
              PreconditionError, "pyramid input height/width must be positive multiples of 4, got " + shape_str(v.shape()));
  FeaturePyramid pyr;
  for (int i = 0; i < 3; ++i) {
    const int s = kStrides[i];
    const std::string n = "down." + branch + ".s" + std::to_string(s);
    ag::Var main = act(conv(act(conv(f, p, n + ".conv1", s), p, n + ".act1"), p, n + ".conv2"), p, n + ".act2");
    ag::Var shortcut = s == 1 ? f : ag::conv2d(f, p.get(n + ".short.w"), p.get(n + ".short.b"), s, 0);
    pyr.levels[i] = ag::add(main, shortcut);
  }
  return pyr;
}

std::pair<ag::Var, ag::Var> channel_attention(const ag::Var& f_ir, const ag::Var& f_vis, const ModelParams& p,
                                              const std::string& block) {
  require_same_shape(f_ir.value(), f_vis.value(), "channel_attention");
  const int c = f_ir.value().channels();
  ag::Var d = ag::gap(ag::add(f_ir, f_vis));
  ag::Var z = ag::linear(d, p.get(block + ".ca.fc1.w"), p.get(block + ".ca.fc1.b"));
  const int hidden = static_cast<int>(z.value().size());
  z = ag::reshape(ag::prelu(ag::reshape(z, {hidden, 1, 1}), p.get(block + ".ca.act")), {hidden});
  ag::Var both = ag::reshape(ag::sigmoid(ag::linear(z, p.get(block + ".ca.fc2.w"), p.get(block + ".ca.fc2.b"))),
                             {2 * c, 1, 1});
  return {ag::reshape(ag::slice_channels(both, 0, c), {c}), ag::reshape(ag::slice_channels(both, c, c), {c})};
}

std::pair<ag::Var, ag::Var> spatial_attention(const ag::Var& f_ir, const ag::Var& f_vis, const ModelParams& p,
                                              const std::string& block) {
  require_same_shape(f_ir.value(), f_vis.value(), "spatial_attention");
  const int c = f_ir.value().channels();
  ag::Var h = act(conv(ag::concat_channels({f_ir, f_vis}), p, block + ".sa.conv1"), p, block + ".sa.act");
  ag::Var both = ag::sigmoid(conv(h, p, block + ".sa.conv2"));
  return {ag::slice_channels(both, 0, c), ag::slice_channels(both, c, c)};
}

ag::Var compose_attention(const ag::Var& f_ir, const ag::Var& f_vis, const AttentionMaps& m) {
  return ag::add(ag::mul_channel(ag::mul(m.sm_ir, f_ir), m.cm_ir), ag::mul_channel(ag::mul(m.sm_vis, f_vis), m.cm_vis));
}

BlockTrace fuse_block(const ag::Var& f_ir, const ag::Var& f_vis, const ModelParams& p, int block_index) {
  MDA_REQUIRE(block_index >= 0 && block_index < 5, PreconditionError, "fusion block index out of range");
  const std::string n = block_name(block_index);
  BlockTrace t;
  t.in_vis = f_vis;
  t.in_ir = f_ir;
  if (f_ir.value().height() != f_vis.value().height()) {
    MDA_REQUIRE(f_ir.value().height() * 2 == f_vis.value().height() && f_ir.value().width() * 2 == f_vis.value().width(),
                ShapeError, "adjacent-scale fusion expects the infrared map at half resolution");
    t.in_ir = conv(ag::upsample_bilinear(f_ir, 2), p, n + ".up");
  }
  switch (p.config.fusion) {
    case FusionMode::Attention: {
      auto [cm_ir, cm_vis] = channel_attention(t.in_ir, t.in_vis, p, n);
      auto [sm_ir, sm_vis] = spatial_attention(t.in_ir, t.in_vis, p, n);
      t.attention = {cm_ir, cm_vis, sm_ir, sm_vis};
      t.out = compose_attention(t.in_ir, t.in_vis, t.attention);
      break;
    }
    case FusionMode::Sum: t.out = ag::add(t.in_ir, t.in_vis); break;
    case FusionMode::Concat: t.out = conv(ag::concat_channels({t.in_ir, t.in_vis}), p, n + ".cat"); break;
  }
  return t;
}

ForwardResult forward(const ag::Var& ir, const ag::Var& vis_y, const ModelParams& p) {
  p.config.validate();
  require_same_shape(ir.value(), vis_y.value(), "forward");
  ForwardResult r;
  r.pyr_ir = downsample_pyramid(stem(ir, p, "ir"), p, "ir");
  r.pyr_vis = downsample_pyramid(stem(vis_y, p, "vis"), p, "vis");
  const auto& fi = r.pyr_ir.levels;
  const auto& fv = r.pyr_vis.levels;
  r.blocks[0] = fuse_block(fi[0], fv[0], p, 0);
  r.blocks[1] = fuse_block(fi[1], fv[0], p, 1);
  r.blocks[2] = fuse_block(fi[1], fv[1], p, 2);
  r.blocks[3] = fuse_block(fi[2], fv[1], p, 3);
  r.blocks[4] = fuse_block(fi[2], fv[2], p, 4);

  ag::Var cat = ag::concat_channels({r.blocks[0].out, r.blocks[1].out, residual_up(r.blocks[2].out, 2, p, "up.m3"),
                                     residual_up(r.blocks[3].out, 2, p, "up.m4"),
                                     residual_up(r.blocks[4].out, 4, p, "up.m5")});
  ag::Var h = act(conv(cat, p, "recon.conv1"), p, "recon.act");
  r.fused = ag::scale(ag::add_scalar(ag::tanh(conv(h, p, "recon.conv2")), 1.0), 0.5);
  return r;
}

ForwardResult forward(const ImagePair& pair, const ModelParams& p) {
  return forward(ag::Var::constant(pair.ir.tensor()), ag::Var::constant(pair.vis_y.tensor()), p);
}

Tensor pad_reflect(const Tensor& x, int pad_bottom, int pad_right) {
  MDA_REQUIRE(x.rank() == 3 && pad_bottom >= 0 && pad_right >= 0, ShapeError, "pad_reflect expects (C,H,W)");
  const int c = x.channels(), h = x.height(), w = x.width();
  auto reflect = [](int i, int n) {
    if (i < n) return i;
    const int r = 2 * n - 2 - i;
    return r >= 0 ? r : n - 1;
  };
  Tensor out({c, h + pad_bottom, w + pad_right});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h + pad_bottom; ++y)
      for (int xx = 0; xx < w + pad_right; ++xx) out.at(ch, y, xx) = x.at(ch, reflect(y, h), reflect(xx, w));
  return out;
}

GrayImage fuse_y(const GrayImage& ir, const GrayImage& vis_y, const ModelParams& p) {
  MDA_REQUIRE(ir.same_shape(vis_y), ShapeError, "fuse: infrared and visible sizes differ");
  const int h = ir.height(), w = ir.width();
  const int pb = (4 - h % 4) % 4, pr = (4 - w % 4) % 4;
  ag::NoGradGuard guard;
  auto r = forward(ag::Var::constant(pad_reflect(ir.tensor(), pb, pr)),
                   ag::Var::constant(pad_reflect(vis_y.tensor(), pb, pr)), p);
  const Tensor& f = r.fused.value();
  std::vector<double> px(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) px[static_cast<std::size_t>(y) * w + x] = f.at(0, y, x);
  return GrayImage::from_tensor_clamped(Tensor({1, h, w}, std::move(px)));
}

ColorImage fuse_color(const ImagePair& pair, const ModelParams& p) {
  return ycbcr_to_rgb(fuse_y(pair.ir, pair.vis_y, p), pair.vis_cb, pair.vis_cr);
}

}  // namespace mda
