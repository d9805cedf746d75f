#include "looptrans/features.hpp"

#include <cmath>
#include <sstream>

#include "looptrans/io.hpp"

namespace looptrans {

const char* view_name(View v) { return v == View::Ego ? "ego" : "exo"; }

void BackboneConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || channels == 0) throw ShapeError("backbone sizes must be positive");
  if (image_size % patch_size != 0)
    throw ShapeError("image size " + std::to_string(image_size) + " not divisible by patch size " +
                     std::to_string(patch_size));
}

BackboneParams BackboneParams::init(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t in = cfg.patch_size * cfg.patch_size * 3, c = cfg.channels;
  BackboneParams p;
  p.patch_embed = random_normal({in, c}, std::sqrt(2.0 / static_cast<double>(in)), rng);
  // Identity at the center tap plus small noise: each cell stays dominated by its own patch.
  p.conv_w = random_normal({3, 3, c, c}, 0.1 * std::sqrt(2.0 / static_cast<double>(9 * c)), rng);
  for (std::size_t k = 0; k < c; ++k) p.conv_w[(4 * c + k) * c + k] += 1.0;
  p.conv_b = Tensor(Shape{c});
  return p;
}

BackboneParams BackboneParams::zeros(const BackboneConfig& cfg) {
  const std::size_t in = cfg.patch_size * cfg.patch_size * 3, c = cfg.channels;
  return {Tensor(Shape{in, c}), Tensor(Shape{3, 3, c, c}), Tensor(Shape{c})};
}

void BackboneParams::append_refs(const std::string& prefix, ParamRefs& out) {
  out.emplace_back(prefix + "patch_embed", &patch_embed);
  out.emplace_back(prefix + "conv_w", &conv_w);
  out.emplace_back(prefix + "conv_b", &conv_b);
}

Tensor patchify(const Tensor& image, std::size_t p) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("expected an S×S×3 image, got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1);
  if (p == 0 || h % p != 0 || w % p != 0)
    throw ShapeError("image " + shape_str(image.shape()) + " not divisible by patch size " + std::to_string(p));
  const std::size_t gh = h / p, gw = w / p, row = p * p * 3;
  Tensor out(Shape{gh * gw, row});
  for (std::size_t gi = 0; gi < gh; ++gi)
    for (std::size_t gj = 0; gj < gw; ++gj) {
      double* dst = out.data().data() + (gi * gw + gj) * row;
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          for (std::size_t c = 0; c < 3; ++c) *dst++ = image.at(gi * p + y, gj * p + x, c) - 0.5;
    }
  return out;
}

BoundBackbone BoundBackbone::bind(Tape& tape, const BackboneParams& p, const BackboneConfig& cfg) {
  using looptrans::bind;
  return {bind(tape, p.patch_embed, cfg.trainable), bind(tape, p.conv_w, cfg.trainable),
          bind(tape, p.conv_b, cfg.trainable), cfg.patch_size};
}

Var BoundBackbone::forward(const Tensor& image) const {
  auto& tape = *patch_embed.tape();
  auto patches = tape.constant(patchify(image, patch_size));
  const std::size_t gh = image.dim(0) / patch_size, gw = image.dim(1) / patch_size;
  if (patch_embed.shape()[0] != patch_size * patch_size * 3)
    throw ShapeError("backbone patch embedding does not match patch size " + std::to_string(patch_size));
  auto tokens = ops::reshape(ops::matmul(patches, patch_embed), Shape{gh, gw, patch_embed.shape()[1]});
  return ops::relu(ops::conv3x3(tokens, conv_w, conv_b));
}

void BoundBackbone::append_vars(std::vector<Var>& out) const { out.insert(out.end(), {patch_embed, conv_w, conv_b}); }

FeatureMap extract_features(const Tensor& image, const BackboneConfig& cfg, const BackboneParams& params, View view,
                            std::string source_id) {
  cfg.validate();
  if (image.rank() != 3 || image.dim(0) != cfg.image_size || image.dim(1) != cfg.image_size)
    throw ShapeError("image " + shape_str(image.shape()) + " does not match backbone image size " +
                     std::to_string(cfg.image_size));
  Tape tape;
  BackboneConfig frozen = cfg;
  frozen.trainable = false;
  auto grid = BoundBackbone::bind(tape, params, frozen).forward(image);
  return {view, grid.value(), std::move(source_id)};
}

std::string backbone_provenance(const BackboneConfig& cfg, std::uint64_t seed) {
  std::ostringstream os;
  os << "model=patch-embed-conv;patch=" << cfg.patch_size << ";channels=" << cfg.channels
     << ";layer=conv3x3-relu;seed=" << seed;
  return os.str();
}

namespace {

std::string provenance_field(const std::string& prov, const std::string& key) {
  std::istringstream in(prov);
  std::string item;
  while (std::getline(in, item, ';')) {
    const auto eq = item.find('=');
    if (eq != std::string::npos && item.substr(0, eq) == key) return item.substr(eq + 1);
  }
  return {};
}

}  // namespace

void save_feature_file(const FeatureMap& f, const std::filesystem::path& path, const std::string& provenance) {
  std::string prov = provenance;
  if (!prov.empty()) prov += ';';
  prov += std::string("view=") + view_name(f.view);
  if (!f.source_id.empty()) prov += ";source=" + f.source_id;
  io::write_ltfm(path, f.grid, prov);
}

FeatureMap load_feature_file(const std::filesystem::path& path) {
  auto file = io::read_ltfm(path);
  FeatureMap f;
  f.grid = std::move(file.grid);
  f.view = provenance_field(file.header.provenance, "view") == "exo" ? View::Exo : View::Ego;
  f.source_id = provenance_field(file.header.provenance, "source");
  if (f.source_id.empty()) f.source_id = path.stem().string();
  return f;
}

}  // namespace looptrans
