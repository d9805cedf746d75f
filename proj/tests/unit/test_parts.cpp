#include <doctest.h>

#include <cmath>
#include <limits>

#include "looptrans/parts.hpp"
#include "testing.hpp"

using namespace looptrans;

namespace {

// Within-cluster sum of squares of unit-normalized rows under a given labelling.
double wcss(const Tensor& f, const std::vector<std::uint32_t>& assign, std::size_t k) {
  const std::size_t n = f.dim(0) * f.dim(1), d = f.dim(2);
  std::vector<double> x(f.vec());
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0;
    for (std::size_t c = 0; c < d; ++c) ss += x[i * d + c] * x[i * d + c];
    for (std::size_t c = 0; c < d; ++c) x[i * d + c] /= std::sqrt(ss);
  }
  std::vector<double> cent(k * d, 0.0);
  std::vector<double> cnt(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    cnt[assign[i]] += 1;
    for (std::size_t c = 0; c < d; ++c) cent[assign[i] * d + c] += x[i * d + c];
  }
  double s = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      const double m = cent[assign[i] * d + c] / cnt[assign[i]];
      s += (x[i * d + c] - m) * (x[i * d + c] - m);
    }
  return s;
}

Tensor two_blobs(testing::Rng& rng) {
  // 2×4 grid, left half near e0, right half near e1.
  Tensor f(Shape{2, 4, 3});
  std::normal_distribution<double> noise(0.0, 0.05);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      f.at(i, j, 0) = (j < 2 ? 1.0 : 0.1) + noise(rng);
      f.at(i, j, 1) = (j < 2 ? 0.1 : 1.0) + noise(rng);
      f.at(i, j, 2) = 0.2 + noise(rng);
    }
  return f;
}

}  // namespace

TEST_CASE("k-means on two blobs matches brute force over all 2^8 labellings") {
  testing::Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const auto f = two_blobs(rng);
    double best = std::numeric_limits<double>::infinity();
    for (unsigned mask = 1; mask < 255; ++mask) {
      std::vector<std::uint32_t> a(8);
      for (unsigned i = 0; i < 8; ++i) a[i] = (mask >> i) & 1u;
      best = std::min(best, wcss(f, a, 2));
    }
    const auto seg = cluster_parts(f, 2, 7);
    CHECK(seg.k == 2);
    CHECK(seg.inertia == doctest::Approx(best).epsilon(1e-9));
    CHECK(seg.inertia == doctest::Approx(wcss(f, seg.assignments, 2)).epsilon(1e-9));
    // First-appearance labelling: the top-left cell is always part 0.
    CHECK(seg.assignments[0] == 0);
    for (std::size_t i = 0; i < 8; ++i) CHECK(seg.assignments[i] == ((i % 4) < 2 ? 0u : 1u));
  }
}

TEST_CASE("k-means invariants on random features") {
  testing::Rng rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = testing::uniform({6, 6, 5}, rng);
    const std::size_t k = 2 + static_cast<std::size_t>(trial % 4);
    const auto seg = cluster_parts(f, k, static_cast<std::uint64_t>(trial));
    CHECK(seg.k == k);
    CHECK(seg.assignments.size() == 36);
    for (auto a : seg.assignments) CHECK(a < k);
    // Lloyd iterations never increase the objective.
    for (std::size_t i = 1; i < seg.inertia_trace.size(); ++i)
      CHECK(seg.inertia_trace[i] <= seg.inertia_trace[i - 1] + 1e-12);
    // Parts partition the grid.
    std::size_t total = 0;
    for (std::size_t p = 0; p < k; ++p) total += seg.part(p).count();
    CHECK(total == 36);
    // Same seed, same answer.
    CHECK(cluster_parts(f, k, static_cast<std::uint64_t>(trial)).assignments == seg.assignments);
  }
}

TEST_CASE("k-means degenerate inputs") {
  Tensor same(Shape{3, 3, 2}, 1.0);
  const auto seg = cluster_parts(same, 4, 0);
  CHECK(seg.degenerate);
  CHECK(seg.k == 1);
  CHECK_FALSE(seg.warnings.empty());
  for (auto a : seg.assignments) CHECK(a == 0);

  Tensor two(Shape{2, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) two[i * 2 + (i % 2)] = 1.0;
  const auto reduced = cluster_parts(two, 3, 0);
  CHECK(reduced.k == 2);
  CHECK_FALSE(reduced.degenerate);
  CHECK_FALSE(reduced.warnings.empty());

  CHECK_THROWS_AS(cluster_parts(same, 1, 0), ContractError);
  CHECK_THROWS_AS(cluster_parts(same, 10, 0), ContractError);
  CHECK_THROWS_AS(cluster_parts(Tensor(Shape{9, 2}), 2, 0), ShapeError);
}

TEST_CASE("threshold_activation") {
  Tensor m(Shape{2, 2}, std::vector<double>{0.0, 1.0, 2.0, 4.0});
  const auto b = threshold_activation(m, 0.5);
  CHECK(b.cells == std::vector<std::uint8_t>{0, 0, 1, 1});
  CHECK(threshold_activation(m, 0.0).count() == 4);
  CHECK(threshold_activation(m, 1.0).count() == 1);
  // Flat map normalizes to zero everywhere.
  CHECK(threshold_activation(Tensor(Shape{2, 2}, 3.0), 0.5).count() == 0);
  CHECK(threshold_activation(Tensor(Shape{2, 2}, 3.0), 0.0).count() == 4);

  // Invariant to positive affine rescaling of the map.
  testing::Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = testing::uniform({5, 5}, rng);
    Tensor y = x;
    for (double& v : y.data()) v = 3.0 * v + 7.0;
    CHECK(threshold_activation(x, 0.3) == threshold_activation(y, 0.3));
  }
}

TEST_CASE("iou") {
  BinaryGrid a(2, 2), b(2, 2);
  a.cells = {1, 1, 0, 0};
  b.cells = {0, 1, 1, 0};
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(BinaryGrid(2, 2), BinaryGrid(2, 2)) == 0.0);
  CHECK_THROWS_AS(iou(a, BinaryGrid(3, 2)), ShapeError);
  testing::Rng rng(24);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = testing::random_grid(4, 4, rng), y = testing::random_grid(4, 4, rng);
    CHECK(iou(x, y) == iou(y, x));
    CHECK(iou(x, y) >= 0.0);
    CHECK(iou(x, y) <= 1.0);
  }
}

TEST_CASE("pseudo-mask selection is the exhaustive argmax") {
  testing::Rng rng(25);
  for (int trial = 0; trial < 30; ++trial) {
    PartSegmentation seg;
    seg.height = 4;
    seg.width = 4;
    seg.k = 3;
    std::uniform_int_distribution<std::uint32_t> d(0, 2);
    for (int i = 0; i < 16; ++i) seg.assignments.push_back(d(rng));
    const auto fg = testing::random_grid(4, 4, rng, 0.4);
    const auto pm = select_pseudo_mask(seg, fg);
    double best = -1;
    std::size_t arg = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      const double v = iou(seg.part(p), fg);
      if (v > best) {
        best = v;
        arg = p;
      }
    }
    CHECK(pm.part_id == arg);
    CHECK(pm.source_iou == best);
    CHECK(pm.mask == seg.part(arg));
    CHECK(pm.valid == (best > 0));
  }

  PartSegmentation seg;
  seg.height = 1;
  seg.width = 2;
  seg.k = 2;
  seg.assignments = {0, 1};
  BinaryGrid none(1, 2);
  CHECK_FALSE(select_pseudo_mask(seg, none).valid);
  BinaryGrid both(1, 2);
  both.cells = {1, 1};
  // Tie between the two parts goes to the lower id.
  CHECK(select_pseudo_mask(seg, both).part_id == 0);
  CHECK_THROWS_AS(select_pseudo_mask(seg, BinaryGrid(2, 2)), ShapeError);
}
