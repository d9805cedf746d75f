#include "looptrans/parts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "looptrans/layers.hpp"

namespace looptrans {

namespace {

struct Points {
  std::size_t n = 0;
  std::size_t dims = 0;
  std::vector<double> data;  // [n, dims]

  const double* row(std::size_t i) const { return data.data() + i * dims; }
};

Points normalized_points(const Tensor& features) {
  Points p{features.dim(0) * features.dim(1), features.dim(2), std::vector<double>(features.vec())};
  for (std::size_t i = 0; i < p.n; ++i) {
    double* r = p.data.data() + i * p.dims;
    double ss = 0.0;
    for (std::size_t c = 0; c < p.dims; ++c) ss += r[c] * r[c];
    if (ss > 0) {
      const double inv = 1.0 / std::sqrt(ss);
      for (std::size_t c = 0; c < p.dims; ++c) r[c] *= inv;
    }
  }
  return p;
}

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

std::size_t count_distinct(const Points& p) {
  std::vector<std::vector<double>> rows;
  rows.reserve(p.n);
  for (std::size_t i = 0; i < p.n; ++i) rows.emplace_back(p.row(i), p.row(i) + p.dims);
  std::sort(rows.begin(), rows.end());
  return static_cast<std::size_t>(std::unique(rows.begin(), rows.end()) - rows.begin());
}

struct Run {
  std::vector<std::uint32_t> assign;
  std::vector<double> centroids;  // [k, dims]
  std::vector<double> trace;
  double inertia = 0.0;
  bool converged = false;
};

// Nearest-centroid assignment (ties to the lowest id); returns inertia.
double assign_points(const Points& p, const std::vector<double>& cent, std::size_t k, std::vector<std::uint32_t>& out) {
  double inertia = 0.0;
  for (std::size_t i = 0; i < p.n; ++i) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double d = sq_dist(p.row(i), cent.data() + c * p.dims, p.dims);
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    out[i] = static_cast<std::uint32_t>(best);
    inertia += bd;
  }
  return inertia;
}

std::vector<double> kmeanspp_init(const Points& p, std::size_t k, Rng& rng) {
  std::vector<double> cent;
  cent.reserve(k * p.dims);
  std::uniform_int_distribution<std::size_t> pick(0, p.n - 1);
  std::size_t first = pick(rng);
  cent.insert(cent.end(), p.row(first), p.row(first) + p.dims);
  std::vector<double> d2(p.n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    const double* last = cent.data() + (c - 1) * p.dims;
    double total = 0.0;
    for (std::size_t i = 0; i < p.n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(p.row(i), last, p.dims));
      total += d2[i];
    }
    std::size_t chosen = 0;
    if (total > 0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng), acc = 0.0;
      chosen = p.n - 1;
      for (std::size_t i = 0; i < p.n; ++i) {
        acc += d2[i];
        if (d2[i] > 0 && r < acc) {
          chosen = i;
          break;
        }
      }
      while (d2[chosen] == 0 && chosen > 0) --chosen;
    }
    cent.insert(cent.end(), p.row(chosen), p.row(chosen) + p.dims);
  }
  return cent;
}

Run lloyd(const Points& p, std::size_t k, Rng& rng, std::size_t max_iter) {
  Run run;
  run.centroids = kmeanspp_init(p, k, rng);
  run.assign.assign(p.n, 0);
  std::vector<std::uint32_t> prev;
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < max_iter; ++it) {
    run.inertia = assign_points(p, run.centroids, k, run.assign);
    run.trace.push_back(run.inertia);
    if (it > 0 && run.assign == prev) {
      run.converged = true;
      break;
    }
    prev = run.assign;

    std::fill(run.centroids.begin(), run.centroids.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < p.n; ++i) {
      const auto c = run.assign[i];
      ++counts[c];
      for (std::size_t d = 0; d < p.dims; ++d) run.centroids[c * p.dims + d] += p.row(i)[d];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (counts[c] > 0)
        for (std::size_t d = 0; d < p.dims; ++d) run.centroids[c * p.dims + d] /= static_cast<double>(counts[c]);

    // Empty clusters restart at the point farthest from its own centroid.
    std::vector<bool> used(p.n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = 0;
      double fd = -1.0;
      for (std::size_t i = 0; i < p.n; ++i) {
        if (used[i]) continue;
        const double d = sq_dist(p.row(i), run.centroids.data() + run.assign[i] * p.dims, p.dims);
        if (d > fd) {
          fd = d;
          far = i;
        }
      }
      used[far] = true;
      std::copy(p.row(far), p.row(far) + p.dims, run.centroids.begin() + static_cast<std::ptrdiff_t>(c * p.dims));
    }
  }
  return run;
}

}  // namespace

BinaryGrid PartSegmentation::part(std::size_t id) const {
  BinaryGrid g(height, width);
  for (std::size_t i = 0; i < assignments.size(); ++i) g.cells[i] = assignments[i] == id ? 1 : 0;
  return g;
}

PartSegmentation cluster_parts(const Tensor& features, std::size_t k, std::uint64_t seed, const KMeansOptions& opts) {
  if (features.rank() != 3) throw ShapeError("cluster_parts: expected H×W×C features, got " + shape_str(features.shape()));
  const std::size_t n = features.dim(0) * features.dim(1);
  if (k < 2 || k > n)
    throw ContractError("cluster_parts: K must satisfy 2 ≤ K ≤ H·W (K=" + std::to_string(k) +
                        ", H·W=" + std::to_string(n) + ")");

  PartSegmentation seg;
  seg.height = features.dim(0);
  seg.width = features.dim(1);
  const auto pts = normalized_points(features);

  const std::size_t distinct = count_distinct(pts);
  std::size_t k_eff = k;
  if (distinct < k) {
    seg.warnings.push_back("requested " + std::to_string(k) + " clusters but only " + std::to_string(distinct) +
                           " distinct feature vectors; reducing K");
    k_eff = distinct;
  }

  Run best;
  if (k_eff == 1) {
    best.assign.assign(n, 0);
    best.centroids.assign(pts.row(0), pts.row(0) + pts.dims);
    best.converged = true;
    best.trace.push_back(0.0);
    seg.degenerate = true;
    seg.warnings.push_back("all feature vectors identical; a single part covers the grid");
  } else {
    bool have = false;
    for (std::size_t r = 0; r < std::max<std::size_t>(opts.restarts, 1); ++r) {
      Rng rng(seed * 0x9E3779B97F4A7C15ull + r);
      auto run = lloyd(pts, k_eff, rng, opts.max_iterations);
      if (!have || run.inertia < best.inertia) {
        best = std::move(run);
        have = true;
      }
    }
  }

  // Relabel by first appearance in row-major order.
  std::vector<std::int64_t> remap(k_eff, -1);
  std::uint32_t next = 0;
  for (auto a : best.assign)
    if (remap[a] < 0) remap[a] = next++;
  for (std::size_t c = 0; c < k_eff; ++c)
    if (remap[c] < 0) remap[c] = next++;
  seg.assignments.resize(n);
  for (std::size_t i = 0; i < n; ++i) seg.assignments[i] = static_cast<std::uint32_t>(remap[best.assign[i]]);
  seg.centroids = Tensor(Shape{k_eff, pts.dims});
  for (std::size_t c = 0; c < k_eff; ++c)
    std::copy_n(best.centroids.begin() + static_cast<std::ptrdiff_t>(c * pts.dims), pts.dims,
                seg.centroids.data().begin() + static_cast<std::ptrdiff_t>(remap[c] * pts.dims));
  seg.k = k_eff;
  seg.inertia = best.trace.back();
  seg.inertia_trace = std::move(best.trace);
  seg.converged = best.converged;
  return seg;
}

BinaryGrid threshold_activation(const Tensor& map, double mu) {
  if (map.rank() != 2) throw ShapeError("threshold_activation: expected an H×W map, got " + shape_str(map.shape()));
  BinaryGrid out(map.dim(0), map.dim(1));
  if (map.size() == 0) return out;
  const auto [lo_it, hi_it] = std::minmax_element(map.data().begin(), map.data().end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  for (std::size_t i = 0; i < map.size(); ++i) {
    // (x − min)/(max − min) ≥ μ without the division; a flat map normalizes to 0.
    const bool on = range > 0 ? (map[i] - lo) >= mu * range : 0.0 >= mu;
    out.cells[i] = on ? 1 : 0;
  }
  return out;
}

double iou(const BinaryGrid& a, const BinaryGrid& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("iou: grid sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a.cells[i] && b.cells[i]) ? 1 : 0;
    uni += (a.cells[i] || b.cells[i]) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

PseudoMask select_pseudo_mask(const PartSegmentation& parts, const BinaryGrid& foreground) {
  if (foreground.height != parts.height || foreground.width != parts.width)
    throw ShapeError("select_pseudo_mask: foreground does not match the part grid");
  PseudoMask best;
  for (std::size_t k = 0; k < parts.k; ++k) {
    auto part = parts.part(k);
    const double v = iou(part, foreground);
    if (k == 0 || v > best.source_iou) {
      best.mask = std::move(part);
      best.source_iou = v;
      best.part_id = k;
    }
  }
  best.valid = best.source_iou > 0.0;
  return best;
}

}  // namespace looptrans
