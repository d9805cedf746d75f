#pragma once

// Patch-feature maps for ego and exo views, from a small patch-embedding
// backbone or from LTFM files exported offline.

#include <filesystem>
#include <string>

#include "looptrans/autodiff.hpp"
#include "looptrans/layers.hpp"

namespace looptrans {

enum class View { Ego, Exo };

const char* view_name(View v);

struct FeatureMap {
  View view = View::Ego;
  Tensor grid;  // [H, W, C]
  std::string source_id;

  std::size_t height() const { return grid.dim(0); }
  std::size_t width() const { return grid.dim(1); }
  std::size_t channels() const { return grid.dim(2); }
};

/// A feature grid living on a tape.
struct FeatureVar {
  View view = View::Ego;
  Var grid;
};

struct BackboneConfig {
  std::size_t patch_size = 8;
  std::size_t channels = 32;
  std::size_t image_size = 64;
  bool trainable = false;

  std::size_t grid_size() const { return image_size / patch_size; }
  void validate() const;
};

/// Patch embedding (p·p·3 → C linear map) followed by a 3×3 conv + ReLU.
struct BackboneParams {
  Tensor patch_embed;  // [p·p·3, C]
  Tensor conv_w;       // [3, 3, C, C]
  Tensor conv_b;       // [C]

  static BackboneParams init(const BackboneConfig& cfg, Rng& rng);
  static BackboneParams zeros(const BackboneConfig& cfg);
  void append_refs(const std::string& prefix, ParamRefs& out);
};

/// Rearranges an S×S×3 image into (S/p)² rows of p·p·3 patch pixels, each
/// shifted by −0.5 so that mid-gray maps to zero.
Tensor patchify(const Tensor& image, std::size_t patch_size);

/// Backbone parameters bound to a tape; leaves when the backbone is trainable.
struct BoundBackbone {
  Var patch_embed, conv_w, conv_b;
  std::size_t patch_size = 8;

  static BoundBackbone bind(Tape& tape, const BackboneParams& p, const BackboneConfig& cfg);
  Var forward(const Tensor& image) const;
  void append_vars(std::vector<Var>& out) const;
};

FeatureMap extract_features(const Tensor& image, const BackboneConfig& cfg, const BackboneParams& params,
                            View view = View::Ego, std::string source_id = {});

/// Provenance string recorded in LTFM headers for synthetic-backbone features.
std::string backbone_provenance(const BackboneConfig& cfg, std::uint64_t seed);

void save_feature_file(const FeatureMap& f, const std::filesystem::path& path, const std::string& provenance = {});
FeatureMap load_feature_file(const std::filesystem::path& path);

}  // namespace looptrans
