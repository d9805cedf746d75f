#pragma once

// Deterministic exo/ego scene generator with known affordance parts.
//
// An object is a stack of 2–4 parts (bands along its major axis) drawn as
// rectangles or ellipses. Exactly one part carries the class color of the
// sample's affordance label; the others take neutral colors. Ego images show
// the object centered on a plain background. Exo images show it at 40–60%
// scale at a random position, with a hand blob touching the affordance part,
// 1–3 clutter blobs, and with probability p_occ a body blob covering at least
// 70% of the affordance part.

#include <cstdint>
#include <string>
#include <vector>

#include "looptrans/tensor.hpp"

namespace looptrans::synth {

enum class Layout : std::uint32_t { Vertical = 0, Horizontal = 1 };
enum class PartShape : std::uint32_t { Rect = 0, Ellipse = 1 };

inline constexpr std::size_t kPaletteVariants = 3;
inline constexpr std::size_t kStyleCount = 2 * 2 * kPaletteVariants;

struct Style {
  Layout layout = Layout::Vertical;
  PartShape shape = PartShape::Rect;
  std::size_t palette = 0;

  std::size_t id() const;
  static Style from_id(std::size_t id);
};

struct WorldSpec {
  std::size_t n_classes = 4;
  std::size_t parts_min = 2;
  std::size_t parts_max = 3;
  std::size_t image_size = 64;
  std::size_t patch_size = 8;  // ground-truth grid resolution
  std::size_t n_exo = 3;
  double p_occ = 0.5;
  std::size_t clutter_min = 1;
  std::size_t clutter_max = 3;
  double noise_amplitude = 0.03;
  std::vector<std::size_t> allowed_styles;  // empty = all styles
  std::uint64_t seed = 0;

  void validate() const;
};

struct SceneSample {
  std::string sample_id;
  std::size_t label = 0;
  std::size_t style = 0;
  std::size_t n_parts = 0;
  Tensor ego_image;                   // [S, S, 3] in [0, 1]
  std::vector<Tensor> exo_images;     // n_exo × [S, S, 3]
  BinaryGrid gt_mask;                 // feature grid, majority vote of the affordance part
  BinaryGrid ego_part_pixels;         // S×S affordance-part footprint in the ego image
  BinaryGrid ego_object_pixels;       // S×S object footprint in the ego image
  std::vector<BinaryGrid> exo_part_pixels;      // S×S per exo image
  std::vector<BinaryGrid> exo_occluder_pixels;  // S×S per exo image (empty set when unoccluded)
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Samples are deterministic per (seed, index); ids are "<seed>-<index>".
std::vector<SceneSample> generate_dataset(const WorldSpec& spec, std::size_t count, std::uint64_t seed,
                                          std::size_t first_index = 0);
SceneSample generate_sample(const WorldSpec& spec, std::uint64_t seed, std::size_t index);

struct Split {
  std::vector<SceneSample> train;
  std::vector<SceneSample> test;
};

/// Samples whose style is held out form the test set. With no held-out
/// styles, a seeded random split with `test_fraction` of the samples.
Split split(std::vector<SceneSample> dataset, const std::vector<std::size_t>& held_out_styles,
            double test_fraction = 0.2, std::uint64_t seed = 0);

/// Majority-vote downsampling of a pixel mask to patch cells; ties count as positive.
BinaryGrid downsample_majority(const BinaryGrid& pixels, std::size_t patch);

}  // namespace looptrans::synth
