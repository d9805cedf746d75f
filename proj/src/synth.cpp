#include "looptrans/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <set>

namespace looptrans::synth {

namespace {

using Rng = std::mt19937_64;
using Color = std::array<double, 3>;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Color hsv(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h * 6.0, 6.0);
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  Color rgb{};
  if (hp < 1) rgb = {c, x, 0};
  else if (hp < 2) rgb = {x, c, 0};
  else if (hp < 3) rgb = {0, c, x};
  else if (hp < 4) rgb = {0, x, c};
  else if (hp < 5) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  const double m = v - c;
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

Color class_color(std::size_t c, std::size_t n_classes, std::size_t variant) {
  static const std::array<Color, 4> base{{{0.85, 0.18, 0.18}, {0.20, 0.72, 0.25}, {0.18, 0.30, 0.88}, {0.92, 0.80, 0.12}}};
  Color col = (n_classes <= 4) ? base[c] : hsv(static_cast<double>(c) / static_cast<double>(n_classes), 0.8, 0.85);
  static const std::array<double, kPaletteVariants> shade{1.0, 0.82, 1.12};
  for (auto& v : col) v = std::clamp(v * shade[variant], 0.0, 1.0);
  return col;
}

Color neutral_color(std::size_t i, std::size_t variant) {
  static const std::array<Color, 6> table{{{0.55, 0.42, 0.30},
                                           {0.45, 0.45, 0.48},
                                           {0.25, 0.25, 0.30},
                                           {0.75, 0.70, 0.58},
                                           {0.40, 0.55, 0.50},
                                           {0.60, 0.50, 0.60}}};
  return table[(i + 2 * variant) % table.size()];
}

const Color kSkin{0.93, 0.74, 0.60};

struct Canvas {
  std::size_t size;
  Tensor image;

  explicit Canvas(std::size_t s, Color bg) : size(s), image(Shape{s, s, 3}) {
    for (std::size_t i = 0; i < s * s; ++i)
      for (std::size_t c = 0; c < 3; ++c) image[i * 3 + c] = bg[c];
  }

  // Paints a rectangle [x0,x1)×[y0,y1) (or its inscribed ellipse); returns the painted pixels.
  BinaryGrid paint(double x0, double y0, double x1, double y1, PartShape shape, Color col) {
    BinaryGrid m(size, size);
    const double cx = (x0 + x1) / 2, cy = (y0 + y1) / 2;
    const double rx = (x1 - x0) / 2, ry = (y1 - y0) / 2;
    if (rx <= 0 || ry <= 0) return m;
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        bool in = px >= x0 && px < x1 && py >= y0 && py < y1;
        if (in && shape == PartShape::Ellipse) {
          const double dx = (px - cx) / rx, dy = (py - cy) / ry;
          in = dx * dx + dy * dy <= 1.0;
        }
        if (!in) continue;
        m(y, x) = 1;
        for (std::size_t c = 0; c < 3; ++c) image.at(y, x, c) = col[c];
      }
    return m;
  }

  void add_noise(double amp, Rng& rng) {
    std::uniform_real_distribution<double> u(-amp, amp);
    for (double& v : image.data()) v = std::clamp(v + u(rng), 0.0, 1.0);
  }
};

struct ObjectPlan {
  Style style;
  std::size_t n_parts;
  std::size_t aff_index;
  std::vector<Color> colors;
  double major;  // length along the stacking axis
  double minor;
};

struct Painted {
  BinaryGrid part;    // affordance part pixels still visible
  BinaryGrid object;  // whole object
  double px0, py0, px1, py1;  // affordance part box
};

Painted paint_object(Canvas& cv, const ObjectPlan& plan, double x0, double y0, double scale) {
  const double major = plan.major * scale, minor = plan.minor * scale;
  const bool vertical = plan.style.layout == Layout::Vertical;
  const double w = vertical ? minor : major;
  const double h = vertical ? major : minor;
  Painted out{BinaryGrid(cv.size, cv.size), BinaryGrid(cv.size, cv.size), 0, 0, 0, 0};
  const double band = major / static_cast<double>(plan.n_parts);
  for (std::size_t i = 0; i < plan.n_parts; ++i) {
    double bx0 = x0, by0 = y0, bx1 = x0 + w, by1 = y0 + h;
    if (vertical) {
      by0 = y0 + band * i;
      by1 = by0 + band;
    } else {
      bx0 = x0 + band * i;
      bx1 = bx0 + band;
    }
    auto m = cv.paint(bx0, by0, bx1, by1, plan.style.shape, plan.colors[i]);
    for (std::size_t k = 0; k < m.size(); ++k) {
      if (m.cells[k]) out.object.cells[k] = 1;
      if (i == plan.aff_index) out.part.cells[k] = m.cells[k];
      else if (m.cells[k]) out.part.cells[k] = 0;
    }
    if (i == plan.aff_index) out = Painted{out.part, out.object, bx0, by0, bx1, by1};
  }
  return out;
}

double coverage(const BinaryGrid& part, const BinaryGrid& cover) {
  std::size_t n = 0, c = 0;
  for (std::size_t i = 0; i < part.size(); ++i)
    if (part.cells[i]) {
      ++n;
      c += cover.cells[i] ? 1 : 0;
    }
  return n ? static_cast<double>(c) / static_cast<double>(n) : 0.0;
}

}  // namespace

std::size_t Style::id() const {
  return (static_cast<std::size_t>(layout) * 2 + static_cast<std::size_t>(shape)) * kPaletteVariants + palette;
}

Style Style::from_id(std::size_t id) {
  if (id >= kStyleCount) throw std::out_of_range("style id " + std::to_string(id) + " out of range");
  Style s;
  s.palette = id % kPaletteVariants;
  s.shape = static_cast<PartShape>((id / kPaletteVariants) % 2);
  s.layout = static_cast<Layout>(id / (2 * kPaletteVariants));
  return s;
}

void WorldSpec::validate() const {
  if (n_classes < 1) throw ContractError("world: need at least one class");
  if (parts_min < 2 || parts_max > 4 || parts_min > parts_max) throw ContractError("world: parts per object must lie in [2, 4]");
  if (patch_size == 0 || image_size % patch_size != 0) throw ContractError("world: image size must be a multiple of the patch size");
  if (image_size < 32) throw ContractError("world: image size must be at least 32");
  if (n_exo < 1) throw ContractError("world: need at least one exocentric image");
  if (p_occ < 0 || p_occ > 1) throw ContractError("world: p_occ must be a probability");
  if (clutter_min > clutter_max) throw ContractError("world: clutter range is empty");
  for (auto s : allowed_styles)
    if (s >= kStyleCount) throw ContractError("world: style id " + std::to_string(s) + " out of range");
}

BinaryGrid downsample_majority(const BinaryGrid& px, std::size_t patch) {
  BinaryGrid g(px.height / patch, px.width / patch);
  for (std::size_t gi = 0; gi < g.height; ++gi)
    for (std::size_t gj = 0; gj < g.width; ++gj) {
      std::size_t on = 0;
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x) on += px(gi * patch + y, gj * patch + x) ? 1 : 0;
      g(gi, gj) = 2 * on >= patch * patch ? 1 : 0;
    }
  return g;
}

SceneSample generate_sample(const WorldSpec& spec, std::uint64_t seed, std::size_t index) {
  spec.validate();
  Rng rng(splitmix(splitmix(seed) ^ index));
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  auto pick = [&](std::size_t a, std::size_t b) { return std::uniform_int_distribution<std::size_t>(a, b)(rng); };
  const double S = static_cast<double>(spec.image_size);

  SceneSample s;
  s.sample_id = std::to_string(seed) + "-" + std::to_string(index);
  s.label = pick(0, spec.n_classes - 1);
  s.style = spec.allowed_styles.empty() ? pick(0, kStyleCount - 1)
                                        : spec.allowed_styles[pick(0, spec.allowed_styles.size() - 1)];

  ObjectPlan plan;
  plan.style = Style::from_id(s.style);
  plan.n_parts = pick(spec.parts_min, spec.parts_max);
  plan.aff_index = pick(0, plan.n_parts - 1);
  const std::size_t neutral_offset = pick(0, 5);
  for (std::size_t i = 0, k = 0; i < plan.n_parts; ++i)
    plan.colors.push_back(i == plan.aff_index ? class_color(s.label, spec.n_classes, plan.style.palette)
                                              : neutral_color(neutral_offset + k++, plan.style.palette));
  plan.major = uni(0.70, 0.86) * S;
  plan.minor = uni(0.45, 0.65) * S;
  s.n_parts = plan.n_parts;

  // Ego view: object centered, nothing else.
  {
    Canvas cv(spec.image_size, {0.92, 0.92, 0.90});
    const bool vertical = plan.style.layout == Layout::Vertical;
    const double w = vertical ? plan.minor : plan.major, h = vertical ? plan.major : plan.minor;
    auto painted = paint_object(cv, plan, (S - w) / 2, (S - h) / 2, 1.0);
    cv.add_noise(spec.noise_amplitude, rng);
    s.ego_image = std::move(cv.image);
    s.ego_part_pixels = painted.part;
    s.ego_object_pixels = painted.object;
    s.gt_mask = downsample_majority(painted.part, spec.patch_size);
    if (s.gt_mask.empty_set()) {
      // Thin parts can lose the vote everywhere; keep the cell with the most part pixels.
      std::size_t best = 0, best_on = 0;
      BinaryGrid g(s.gt_mask.height, s.gt_mask.width);
      for (std::size_t gi = 0; gi < g.height; ++gi)
        for (std::size_t gj = 0; gj < g.width; ++gj) {
          std::size_t on = 0;
          for (std::size_t y = 0; y < spec.patch_size; ++y)
            for (std::size_t x = 0; x < spec.patch_size; ++x)
              on += painted.part(gi * spec.patch_size + y, gj * spec.patch_size + x) ? 1 : 0;
          if (on > best_on) {
            best_on = on;
            best = gi * g.width + gj;
          }
        }
      s.gt_mask.cells[best] = 1;
    }
  }

  // Exo views.
  for (std::size_t e = 0; e < spec.n_exo; ++e) {
    Canvas cv(spec.image_size, {uni(0.45, 0.8), uni(0.45, 0.8), uni(0.45, 0.8)});
    const std::size_t n_clutter = pick(spec.clutter_min, spec.clutter_max);
    for (std::size_t k = 0; k < n_clutter; ++k) {
      const double sz = uni(0.1, 0.25) * S;
      const double cx = uni(0, S - sz), cy = uni(0, S - sz);
      Color col{uni(0.2, 0.8), uni(0.2, 0.8), uni(0.2, 0.8)};
      if (spec.n_classes > 1 && uni(0, 1) < 0.5) {
        std::size_t other = pick(0, spec.n_classes - 2);
        if (other >= s.label) ++other;
        col = class_color(other, spec.n_classes, pick(0, kPaletteVariants - 1));
      }
      cv.paint(cx, cy, cx + sz, cy + sz * uni(0.6, 1.4), uni(0, 1) < 0.5 ? PartShape::Rect : PartShape::Ellipse, col);
    }

    const double scale = uni(0.4, 0.6);
    const bool vertical = plan.style.layout == Layout::Vertical;
    const double w = (vertical ? plan.minor : plan.major) * scale;
    const double h = (vertical ? plan.major : plan.minor) * scale;
    auto painted = paint_object(cv, plan, uni(0, S - w), uni(0, S - h), scale);
    BinaryGrid part = painted.part;

    // Hand grasping the affordance part from one side.
    const double pw = painted.px1 - painted.px0, ph = painted.py1 - painted.py0;
    const double hr = std::max(2.5, 0.35 * std::min(pw, ph) + 1.5);
    const double hx = vertical ? (uni(0, 1) < 0.5 ? painted.px0 : painted.px1) : (painted.px0 + painted.px1) / 2;
    const double hy = vertical ? (painted.py0 + painted.py1) / 2 : (uni(0, 1) < 0.5 ? painted.py0 : painted.py1);
    auto hand = cv.paint(hx - hr, hy - hr, hx + hr, hy + hr, PartShape::Ellipse, kSkin);

    BinaryGrid occluder(spec.image_size, spec.image_size);
    if (uni(0, 1) < spec.p_occ) {
      const Color body{uni(0.1, 0.5), uni(0.1, 0.4), uni(0.2, 0.6)};
      bool placed = false;
      for (int attempt = 0; attempt < 10 && !placed; ++attempt) {
        const double mx = uni(1.0, 4.0), my = uni(1.0, 4.0);
        const double sx = uni(-0.25, 0.25) * pw, sy = uni(-0.25, 0.25) * ph;
        Canvas probe(spec.image_size, {0, 0, 0});
        auto cover = probe.paint(painted.px0 - mx + sx, painted.py0 - my + sy, painted.px1 + mx + sx,
                                 painted.py1 + my + sy, PartShape::Rect, body);
        if (coverage(part, cover) >= 0.7) {
          occluder = cv.paint(painted.px0 - mx + sx, painted.py0 - my + sy, painted.px1 + mx + sx,
                              painted.py1 + my + sy, PartShape::Rect, body);
          placed = true;
        }
      }
      if (!placed) throw GenerationError("sample " + s.sample_id + ": could not place an occluder over the part");
    }
    (void)hand;
    cv.add_noise(spec.noise_amplitude, rng);
    s.exo_images.push_back(std::move(cv.image));
    s.exo_part_pixels.push_back(std::move(part));
    s.exo_occluder_pixels.push_back(std::move(occluder));
  }
  return s;
}

std::vector<SceneSample> generate_dataset(const WorldSpec& spec, std::size_t count, std::uint64_t seed,
                                          std::size_t first_index) {
  spec.validate();
  std::vector<SceneSample> out(count);
  const auto n = static_cast<std::ptrdiff_t>(count);
  std::vector<std::string> errors(count);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      out[i] = generate_sample(spec, seed, first_index + static_cast<std::size_t>(i));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw GenerationError(e);
  return out;
}

Split split(std::vector<SceneSample> dataset, const std::vector<std::size_t>& held_out_styles, double test_fraction,
            std::uint64_t seed) {
  Split sp;
  if (!held_out_styles.empty()) {
    const std::set<std::size_t> held(held_out_styles.begin(), held_out_styles.end());
    for (auto& s : dataset) (held.count(s.style) ? sp.test : sp.train).push_back(std::move(s));
    return sp;
  }
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(splitmix(seed));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(dataset.size())));
  std::vector<bool> is_test(dataset.size(), false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;
  for (std::size_t i = 0; i < dataset.size(); ++i) (is_test[i] ? sp.test : sp.train).push_back(std::move(dataset[i]));
  return sp;
}

}  // namespace looptrans::synth
