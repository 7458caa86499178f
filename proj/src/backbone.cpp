#include "mda/backbone.hpp"

#include <cmath>
#include <random>

#include "mda/archive.hpp"
#include "mda/error.hpp"
#include "mda/ops.hpp"

namespace mda {

const std::vector<std::vector<std::string>>& BackboneWeights::layer_names() {
  static const std::vector<std::vector<std::string>> kNames{
      {"conv1_1", "conv1_2"},
      {"conv2_1", "conv2_2"},
      {"conv3_1", "conv3_2", "conv3_3"},
      {"conv4_1", "conv4_2", "conv4_3"},
      {"conv5_1", "conv5_2", "conv5_3"},
  };
  return kNames;
}

int BackboneWeights::stage_channels(int stage) { return std::min(64 << stage, 512); }

BackboneWeights make_backbone(std::vector<std::vector<BackboneWeights::Layer>> stages, Provenance p) {
  BackboneWeights w;
  w.stages_ = std::move(stages);
  w.provenance_ = p;
  return w;
}

namespace {

void check_depth(int depth) {
  MDA_REQUIRE(depth >= 1 && depth <= 5, PreconditionError, "VGG depth must be in 1..5, got " + std::to_string(depth));
}

// (kh, kw, Cin, Cout) -> (Cout, Cin, kh, kw)
Tensor hwio_to_oihw(const Tensor& t) {
  MDA_REQUIRE(t.rank() == 4, IntegrityError, "kernel must be rank 4");
  const int kh = t.dim(0), kw = t.dim(1), ci = t.dim(2), co = t.dim(3);
  Tensor out({co, ci, kh, kw});
  for (int y = 0; y < kh; ++y)
    for (int x = 0; x < kw; ++x)
      for (int i = 0; i < ci; ++i)
        for (int o = 0; o < co; ++o)
          out[((static_cast<std::size_t>(o) * ci + i) * kh + y) * kw + x] =
              t[((static_cast<std::size_t>(y) * kw + x) * ci + i) * co + o];
  return out;
}

Tensor oihw_to_hwio(const Tensor& t) {
  const int co = t.dim(0), ci = t.dim(1), kh = t.dim(2), kw = t.dim(3);
  Tensor out({kh, kw, ci, co});
  for (int o = 0; o < co; ++o)
    for (int i = 0; i < ci; ++i)
      for (int y = 0; y < kh; ++y)
        for (int x = 0; x < kw; ++x)
          out[((static_cast<std::size_t>(y) * kw + x) * ci + i) * co + o] =
              t[((static_cast<std::size_t>(o) * ci + i) * kh + y) * kw + x];
  return out;
}

}  // namespace

BackboneWeights load_backbone(const std::string& source, std::uint64_t seed, int max_depth) {
  check_depth(max_depth);
  const auto& names = BackboneWeights::layer_names();
  std::vector<std::vector<BackboneWeights::Layer>> stages;
  if (source == "random") {
    int cin = 3;
    int layer_index = 0;
    for (int s = 0; s < max_depth; ++s) {
      const int cout = BackboneWeights::stage_channels(s);
      std::vector<BackboneWeights::Layer> layers;
      for (const auto& name : names[s]) {
        std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(layer_index++));
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (cin * 9.0)));
        Tensor w({cout, cin, 3, 3});
        for (double& v : w.vec()) v = dist(rng);
        layers.push_back({name, ag::Var::constant(std::move(w)), ag::Var::constant(Tensor({cout}, 0.0))});
        cin = cout;
      }
      stages.push_back(std::move(layers));
    }
    return make_backbone(std::move(stages), Provenance::RandomSeeded);
  }

  Archive a = load_archive(source, "vgg16");
  int cin = 3;
  for (int s = 0; s < max_depth; ++s) {
    const int cout = BackboneWeights::stage_channels(s);
    std::vector<BackboneWeights::Layer> layers;
    for (const auto& name : names[s]) {
      MDA_REQUIRE(a.has(name + ".w") && a.has(name + ".b"), IntegrityError,
                  "weight archive lacks layer " + name + " needed for depth " + std::to_string(max_depth));
      const Tensor& k = a.get(name + ".w");
      MDA_REQUIRE(k.shape() == Shape({3, 3, cin, cout}), IntegrityError,
                  name + ".w has shape " + shape_str(k.shape()) + ", expected " + shape_str({3, 3, cin, cout}));
      const Tensor& b = a.get(name + ".b");
      MDA_REQUIRE(b.shape() == Shape({cout}), IntegrityError, name + ".b has wrong shape");
      layers.push_back({name, ag::Var::constant(hwio_to_oihw(k)), ag::Var::constant(b)});
      cin = cout;
    }
    stages.push_back(std::move(layers));
  }
  return make_backbone(std::move(stages), Provenance::Pretrained);
}

void save_backbone(const std::filesystem::path& path, const BackboneWeights& w) {
  Archive a;
  a.kind = "vgg16";
  a.meta["provenance"] = w.provenance() == Provenance::Pretrained ? "pretrained" : "random_seeded";
  a.meta["depth"] = w.depth();
  for (int s = 0; s < w.depth(); ++s)
    for (const auto& layer : w.stage(s)) {
      a.put(layer.name + ".w", oihw_to_hwio(layer.weight.value()));
      a.put(layer.name + ".b", layer.bias.value());
    }
  save_archive(path, a);
}

std::vector<ag::Var> vgg_forward(const ag::Var& rgb, const BackboneWeights& w, int depth) {
  check_depth(depth);
  MDA_REQUIRE(depth <= w.depth(), PreconditionError,
              "requested VGG depth " + std::to_string(depth) + " but only " + std::to_string(w.depth()) +
                  " stages are loaded");
  MDA_REQUIRE(rgb.value().rank() == 3 && rgb.value().channels() == 3, ShapeError, "VGG input must be (3,H,W)");
  std::vector<ag::Var> out;
  ag::Var x = rgb;
  for (int s = 0; s < depth; ++s) {
    if (s > 0) x = ag::maxpool2(x);
    for (const auto& layer : w.stage(s)) x = ag::relu(ag::conv2d(x, layer.weight, layer.bias, 1, 1));
    out.push_back(x);
  }
  return out;
}

std::vector<ag::Var> perceptual_features(const ag::Var& gray, const BackboneWeights& w, int depth) {
  return vgg_forward(ag::replicate_normalize(gray, kVggMean, kVggStd), w, depth);
}

PerceptualFeatures extract_features(const GrayImage& img, const BackboneWeights& w, int depth, SourceTag tag) {
  ag::NoGradGuard guard;
  PerceptualFeatures f;
  f.source = tag;
  for (auto& v : perceptual_features(ag::Var::constant(img.tensor()), w, depth)) f.stages.push_back(v.value());
  return f;
}

}  // namespace mda
