#include <doctest.h>

#include <cmath>

#include "looptrans/distill.hpp"
#include "looptrans/features.hpp"
#include "looptrans/pixel_decoder.hpp"
#include "looptrans/scam.hpp"
#include "testing.hpp"

using namespace looptrans;

namespace {

Var vec(Tape& t, std::vector<double> v) {
  const auto n = v.size();
  return t.constant(Tensor(Shape{n}, std::move(v)));
}

FeatureVar fv(Tape& t, const Tensor& grid, View view) { return {view, t.constant(grid)}; }

}  // namespace

// -- features -----------------------------------------------------------------

TEST_CASE("patchify layout and centering") {
  Tensor img(Shape{4, 4, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t c = 0; c < 3; ++c) img.at(i, j, c) = 0.01 * static_cast<double>(i * 100 + j * 10 + c);
  const auto p = patchify(img, 2);
  CHECK(p.shape() == Shape{4, 12});
  // Patch (1, 0), pixel (1, 1) within it, channel 2.
  CHECK(p.at(2, (1 * 2 + 1) * 3 + 2) == doctest::Approx(img.at(3, 1, 2) - 0.5));
  const auto gray = patchify(Tensor(Shape{4, 4, 3}, 0.5), 2);
  for (double v : gray.data()) CHECK(v == 0.0);
}

TEST_CASE("backbone shapes, determinism and zero weights") {
  BackboneConfig cfg{8, 6, 32, false};
  cfg.validate();
  CHECK(cfg.grid_size() == 4);
  CHECK_THROWS_AS((BackboneConfig{5, 6, 32, false}.validate()), ShapeError);
  Rng r1(3), r2(3);
  const auto p1 = BackboneParams::init(cfg, r1), p2 = BackboneParams::init(cfg, r2);
  CHECK(p1.patch_embed == p2.patch_embed);
  testing::Rng rng(30);
  const auto img = testing::uniform({32, 32, 3}, rng, 0, 1);
  const auto f = extract_features(img, cfg, p1, View::Exo, "x");
  CHECK(f.grid.shape() == Shape{4, 4, 6});
  CHECK(f.view == View::Exo);
  for (double v : f.grid.data()) CHECK(v >= 0.0);
  CHECK(extract_features(img, cfg, p2).grid == f.grid);
  const auto zero = extract_features(img, cfg, BackboneParams::zeros(cfg));
  for (double v : zero.grid.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(extract_features(Tensor(Shape{16, 16, 3}), cfg, p1), ShapeError);
}

TEST_CASE("feature file round trip keeps the view and values") {
  testing::TempDir dir("feat");
  testing::Rng rng(31);
  FeatureMap f{View::Exo, testing::uniform({3, 3, 4}, rng), "s"};
  f.grid.set_dtype(DType::Float64);
  save_feature_file(f, dir / "a_exo0.ltfm", "prov");
  const auto g = load_feature_file(dir / "a_exo0.ltfm");
  CHECK(g.grid.vec() == f.grid.vec());
}

// -- SCAM -----------------------------------------------------------------------

TEST_CASE("classification loss examples") {
  Tape tape;
  auto z0 = vec(tape, {0, 0, 0, 0});
  CHECK(joint_cls_loss(z0, z0, 1, false).item() == doctest::Approx(std::log(4.0)));
  CHECK(joint_cls_loss(z0, z0, 1, true).item() == doctest::Approx(8 * std::log(2.0)));
  CHECK(single_view_cls_loss(z0, 0, false).item() == doctest::Approx(std::log(2.0)));
  CHECK(single_view_cls_loss(z0, 0, true).item() == doctest::Approx(4 * std::log(2.0)));
  CHECK_THROWS_AS(joint_cls_loss(z0, z0, 4, false), ContractError);
  CHECK_THROWS_AS(joint_cls_loss(z0, vec(tape, {0, 0}), 0, false), ShapeError);

  // Very confident and correct: no overflow, loss near zero.
  auto big = vec(tape, {800, -800});
  CHECK(joint_cls_loss(big, big, 0, true).item() < 1e-12);
  auto wrong = vec(tape, {-800, 800});
  CHECK(std::isfinite(joint_cls_loss(wrong, wrong, 0, true).item()));
}

TEST_CASE("classification loss is symmetric in the two views and decreases with the true score") {
  testing::Rng rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    auto a = tape.constant(testing::uniform({4}, rng, -3, 3));
    auto b = tape.constant(testing::uniform({4}, rng, -3, 3));
    for (bool neg : {false, true}) {
      CHECK(joint_cls_loss(a, b, 2, neg).item() == doctest::Approx(joint_cls_loss(b, a, 2, neg).item()));
      Tensor up = a.value();
      up[2] += 0.5;
      CHECK(joint_cls_loss(tape.constant(up), b, 2, neg).item() < joint_cls_loss(a, b, 2, neg).item());
    }
  }
}

TEST_CASE("SCAM forward shapes and noise maps only for exo") {
  Rng r(4);
  const auto p = ScamParams::init(6, 4, 3, r);
  CHECK(p.head_kernels() == 7);
  testing::Rng rng(33);
  const auto grid = testing::uniform({5, 5, 6}, rng, 0, 1);
  const auto exo = scam_forward(FeatureMap{View::Exo, grid, ""}, p);
  const auto ego = scam_forward(FeatureMap{View::Ego, grid, ""}, p);
  CHECK(exo.class_maps.shape() == Shape{5, 5, 4});
  CHECK(exo.scores.shape() == Shape{4});
  REQUIRE(exo.noise_maps.has_value());
  CHECK(exo.noise_maps->shape() == Shape{5, 5, 3});
  CHECK_FALSE(ego.noise_maps.has_value());
  // Shared parameters: same features give the same class maps in either view.
  CHECK(exo.class_maps == ego.class_maps);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0;
    for (std::size_t i = 0; i < 25; ++i) s += exo.class_maps[i * 4 + c];
    CHECK(exo.scores[c] == doctest::Approx(s / 25));
  }
  Rng r0(4);
  const auto p0 = ScamParams::init(6, 4, 0, r0);
  CHECK_FALSE(scam_forward(FeatureMap{View::Exo, grid, ""}, p0).noise_maps.has_value());
  CHECK_THROWS_AS(scam_forward(FeatureMap{View::Ego, Tensor(Shape{5, 5, 7}), ""}, p), ShapeError);
}

TEST_CASE("zero head gives zero scores") {
  Rng r(5);
  auto p = ScamParams::init(4, 3, 2, r, 0.0);
  testing::Rng rng(34);
  const auto out = scam_forward(FeatureMap{View::Ego, testing::uniform({3, 3, 4}, rng), ""}, p);
  for (double v : out.scores.data()) CHECK(v == 0.0);
}

TEST_CASE("SCAM gradients match finite differences") {
  Rng r(6);
  const auto p = ScamParams::init(3, 2, 2, r, 0.3);
  testing::Rng rng(35);
  const auto grid = testing::uniform({3, 3, 3}, rng, 0, 1);
  const auto check = testing::grad_check(
      {p.class_head, p.noise_head, p.trunk.mlp_w}, [&](Tape& t, const std::vector<Var>& v) {
        BoundScam b = BoundScam::bind(t, p, false);
        b.class_head = v[0];
        b.noise_head = v[1];
        b.trunk.mlp_w = v[2];
        auto maps = scam_forward(fv(t, grid, View::Exo), b);
        return ops::add(joint_cls_loss(maps.scores, maps.scores, 1, true), ops::mean(*maps.noise_maps));
      });
  CHECK(check.max_rel_error < 1e-5);
}

// -- pixel decoder ----------------------------------------------------------------

TEST_CASE("pixel decoder") {
  Rng r(7);
  const auto p = PixelDecoderParams::init(4, 3, r, 0.0);
  testing::Rng rng(36);
  const auto grid = testing::uniform({3, 5, 4}, rng, 0, 1);
  const auto out = pixel_forward(FeatureMap{View::Ego, grid, ""}, p);
  CHECK(out.shape() == Shape{3, 5, 3});
  for (double v : out.data()) CHECK(v == 0.5);
  CHECK_THROWS_AS(pixel_forward(FeatureMap{View::Exo, grid, ""}, p), ContractError);

  const auto p2 = PixelDecoderParams::init(4, 3, r, 1.0);
  const auto out2 = pixel_forward(FeatureMap{View::Ego, grid, ""}, p2);
  for (double v : out2.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("pixel loss oracle") {
  Tape tape;
  Tensor pred(Shape{2, 2}, std::vector<double>{0.9, 0.2, 0.6, 0.1});
  PseudoMask m;
  m.mask = BinaryGrid(2, 2);
  m.mask.cells = {1, 0, 1, 0};
  m.valid = true;
  const double mse = (0.01 + 0.04 + 0.16 + 0.01) / 4;
  const double dice = 1 - 2 * 1.5 / (1.8 + 2 + 1e-8);
  auto pv = tape.constant(pred);
  CHECK(pixel_loss(pv, m, PixelLossType::Mse).item() == doctest::Approx(mse).epsilon(1e-12));
  CHECK(pixel_loss(pv, m, PixelLossType::Dice).item() == doctest::Approx(dice).epsilon(1e-12));
  CHECK(pixel_loss(pv, m).item() == doctest::Approx(mse + dice).epsilon(1e-12));

  Tensor exact(Shape{2, 2}, std::vector<double>{1, 0, 1, 0});
  CHECK(pixel_loss(tape.constant(exact), m).item() == doctest::Approx(0.0).epsilon(1e-8));

  std::size_t skipped = 0;
  PseudoMask bad = m;
  bad.valid = false;
  CHECK(pixel_loss(pv, bad, PixelLossType::DiceMse, &skipped).item() == 0.0);
  CHECK(skipped == 1);
  CHECK_THROWS_AS(pixel_loss(tape.constant(Tensor(Shape{3, 2})), m), ShapeError);

  CHECK(parse_pixel_loss_type("dice+mse") == PixelLossType::DiceMse);
  CHECK(std::string(pixel_loss_type_name(parse_pixel_loss_type("mse"))) == "mse");
  CHECK_THROWS_AS(parse_pixel_loss_type("l1"), ContractError);
}

TEST_CASE("pixel loss gradient") {
  PseudoMask m;
  m.mask = BinaryGrid(2, 3);
  m.mask.cells = {1, 0, 1, 0, 0, 1};
  m.valid = true;
  testing::Rng rng(37);
  const auto check = testing::grad_check({testing::uniform({2, 3}, rng, 0.05, 0.95)},
                                         [&](Tape&, const std::vector<Var>& v) { return pixel_loss(v[0], m); });
  CHECK(check.max_rel_error < 1e-6);
}

// -- distillation -------------------------------------------------------------------

TEST_CASE("masked pooled feature") {
  Tape tape;
  Tensor map(Shape{1, 2}, std::vector<double>{0.0, 5.0});
  Tensor f(Shape{1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const auto h = masked_pooled_feature(tape.constant(map), tape.constant(f)).value();
  // Normalized map ≈ (0, 1): only the second cell contributes, halved by the mean.
  CHECK(h[0] == doctest::Approx(1.5).epsilon(1e-6));
  CHECK(h[1] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK_THROWS_AS(masked_pooled_feature(tape.constant(Tensor(Shape{2, 2})), tape.constant(f)), ShapeError);
}

TEST_CASE("denoise loss examples and properties") {
  Tape tape;
  auto e = [&](std::vector<double> v) { return vec(tape, std::move(v)); };
  PooledFeatures pf{e({1, 0}), e({1, 0}), {e({0, 1})}};
  // s_pixel = 1, s_noise = 0 → log(1 + e^{−1}).
  CHECK(denoise_loss(pf, 1.0).item() == doctest::Approx(std::log1p(std::exp(-1.0))));
  CHECK(denoise_loss(pf, 0.5).item() == doctest::Approx(std::log1p(std::exp(-2.0))));
  const auto s = similarity_scores(pf, 1.0);
  CHECK(s.s_pixel == doctest::Approx(1.0));
  CHECK(s.s_noise.at(0) == doctest::Approx(0.0));

  PooledFeatures none{e({1, 0}), e({1, 0}), {}};
  CHECK(denoise_loss(none, 1.0).item() == 0.0);
  CHECK_THROWS_AS(denoise_loss(pf, 0.0), ContractError);

  // Equal similarities: log(1 + M).
  PooledFeatures eq{e({1, 1}), e({1, 0}), {e({0, 1}), e({0, 2}), e({0, 3})}};
  CHECK(denoise_loss(eq, 1.0).item() == doctest::Approx(std::log(4.0)));

  testing::Rng rng(38);
  for (int trial = 0; trial < 20; ++trial) {
    Tape t;
    const auto fe = testing::uniform({5}, rng), fp = testing::uniform({5}, rng);
    std::vector<Var> noise;
    for (int m = 0; m < 3; ++m) noise.push_back(t.constant(testing::uniform({5}, rng)));
    PooledFeatures a{t.constant(fe), t.constant(fp), noise};
    const double base = denoise_loss(a, 0.7).item();
    CHECK(base >= 0.0);
    // Scale invariance of every feature.
    Tensor fe2 = fe;
    for (double& v : fe2.data()) v *= 4.0;
    PooledFeatures b{t.constant(fe2), t.constant(fp), noise};
    CHECK(denoise_loss(b, 0.7).item() == base);
    // Moving the teacher onto the exo feature can only lower the loss.
    PooledFeatures c{t.constant(fe), t.constant(fe), noise};
    CHECK(denoise_loss(c, 0.7).item() <= base + 1e-12);
  }
}

TEST_CASE("denoise loss gradient and teacher detachment") {
  testing::Rng rng(39);
  const auto check = testing::grad_check(
      {testing::uniform({4}, rng), testing::uniform({4}, rng), testing::uniform({4}, rng)},
      [](Tape&, const std::vector<Var>& v) {
        return denoise_loss(PooledFeatures{v[0], v[1], {v[2]}}, 0.5);
      });
  CHECK(check.max_rel_error < 1e-5);

  Tape tape;
  auto teacher = tape.leaf(testing::uniform({4}, rng));
  auto exo = tape.leaf(testing::uniform({4}, rng));
  auto noise = tape.leaf(testing::uniform({4}, rng));
  tape.backward(denoise_loss(PooledFeatures{exo, ops::detach(teacher), {noise}}, 1.0));
  const auto gt = tape.grad(teacher), ge = tape.grad(exo);
  for (double g : gt.vec()) CHECK(g == 0.0);
  double s = 0;
  for (double g : ge.vec()) s += std::abs(g);
  CHECK(s > 0);
}

TEST_CASE("correlation loss") {
  Tape tape;
  auto a = vec(tape, {1, 2, 3, 4});
  CHECK(corr_loss(a, a).item() == doctest::Approx(0.0));
  // Positive affine maps of either argument leave it unchanged.
  auto b = vec(tape, {2, 0, 1, 5});
  auto b2 = vec(tape, {7, 1, 4, 16});
  CHECK(corr_loss(a, b).item() == doctest::Approx(corr_loss(a, b2).item()).epsilon(1e-9));
  // Anti-correlated: centered unit vectors are opposite, squared distance 4 over 4 entries.
  auto c = vec(tape, {4, 3, 2, 1});
  CHECK(corr_loss(a, c).item() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(corr_loss(a, vec(tape, {1, 2})), ShapeError);

  testing::Rng rng(40);
  const auto check = testing::grad_check({testing::uniform({4}, rng), testing::uniform({4}, rng)},
                                         [](Tape&, const std::vector<Var>& v) { return corr_loss(v[0], v[1]); });
  CHECK(check.max_rel_error < 1e-5);
}

TEST_CASE("one-way alignment loss") {
  Tape tape;
  Tensor g(Shape{1, 2}, std::vector<double>{0.0, 1.0});
  Tensor f(Shape{1, 2, 2}, std::vector<double>{0, 0, 1, 0});
  Tensor f2(Shape{1, 2, 2}, std::vector<double>{0, 0, 0, 0});
  auto gv = tape.constant(g);
  CHECK(one_way_align_loss(gv, tape.constant(f), gv, tape.constant(f)).item() == 0.0);
  // h = (0.5, 0) against 0: squared distance 0.25.
  CHECK(one_way_align_loss(gv, tape.constant(f), gv, tape.constant(f2)).item() ==
        doctest::Approx(0.25).epsilon(1e-6));
}
