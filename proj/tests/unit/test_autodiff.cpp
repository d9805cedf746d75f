#include <doctest.h>

#include <cmath>

#include "looptrans/autodiff.hpp"
#include "testing.hpp"

using namespace looptrans;
using looptrans::testing::grad_check;
using looptrans::testing::uniform;

namespace {

Tensor t2(std::size_t h, std::size_t w, std::vector<double> v) { return Tensor(Shape{h, w}, std::move(v)); }

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor t(Shape{2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(shape_str(t.shape()) == "[2x3x4]");
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
  CHECK(t.reshaped({4, 6}).shape() == Shape{4, 6});
  CHECK_THROWS(t.item());
  CHECK(Tensor::scalar(2.5).item() == 2.5);
}

TEST_CASE("minmax_normalize examples") {
  Tape tape;
  auto c = ops::minmax_normalize(tape.constant(t2(2, 2, {3, 3, 3, 3})));
  for (double v : c.value().data()) CHECK(v == 0.0);

  auto m = ops::minmax_normalize(tape.constant(t2(2, 2, {0, 2, 4, 0})));
  CHECK(m.value()[0] == doctest::Approx(0.0));
  CHECK(m.value()[1] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(m.value()[2] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(m.value()[3] == doctest::Approx(0.0));

  CHECK_THROWS_AS(ops::minmax_normalize(tape.constant(Tensor(Shape{4}))), ShapeError);
  CHECK_THROWS_AS(ops::minmax_normalize(tape.constant(Tensor(Shape{2, 2, 1}))), ShapeError);
}

TEST_CASE("minmax_normalize matches a scalar loop and stays in [0,1]") {
  testing::Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = uniform({5, 5}, rng, -3, 3);
    Tape tape;
    const auto y = ops::minmax_normalize(tape.constant(x)).value();
    double mn = x[0], mx = x[0];
    for (double v : x.data()) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    std::size_t ones = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(std::abs(y[i] - (x[i] - mn) / (mx - mn + 1e-8)) < 1e-9);
      CHECK(y[i] >= 0.0);
      CHECK(y[i] <= 1.0);
      ones += std::abs(y[i] - 1.0) < 1e-6 ? 1 : 0;
    }
    CHECK(ones == 1);
  }
}

TEST_CASE("gap examples and scalar oracle") {
  Tape tape;
  CHECK(ops::gap(tape.constant(t2(2, 2, {1, 3, 5, 7}))).item() == 4.0);
  CHECK(ops::gap(tape.constant(Tensor(Shape{3, 3}, 2.5))).item() == doctest::Approx(2.5));
  CHECK_THROWS_AS(ops::gap(tape.constant(Tensor(Shape{0, 3}))), ShapeError);
  CHECK_THROWS_AS(ops::gap(tape.constant(Tensor(Shape{4}))), ShapeError);

  testing::Rng rng(3);
  const auto x = uniform({7, 7, 3}, rng);
  const auto g = ops::gap(tape.constant(x)).value();
  REQUIRE(g.shape() == Shape{3});
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0;
    for (std::size_t i = 0; i < 49; ++i) s += x[i * 3 + c];
    CHECK(std::abs(g[c] - s / 49) < 1e-9);
  }
}

TEST_CASE("cosine_sim examples and degenerate warning") {
  Tape tape;
  auto a = tape.constant(Tensor(Shape{3}, std::vector<double>{1, 2, 3}));
  CHECK(ops::cosine_sim(a, a).item() == doctest::Approx(1.0).epsilon(1e-8));
  auto e1 = tape.constant(Tensor(Shape{2}, std::vector<double>{1, 0}));
  auto e2 = tape.constant(Tensor(Shape{2}, std::vector<double>{0, 1}));
  CHECK(ops::cosine_sim(e1, e2).item() == 0.0);
  CHECK(tape.warnings().empty());
  auto z = tape.constant(Tensor(Shape{2}));
  CHECK(ops::cosine_sim(z, z).item() == 0.0);
  CHECK(tape.warnings().size() == 1);
  CHECK_THROWS_AS(ops::cosine_sim(a, e1), ShapeError);

  testing::Rng rng(5);
  for (int i = 0; i < 10; ++i) {
    const auto x = uniform({8}, rng), y = uniform({8}, rng);
    double d = 0, nx = 0, ny = 0;
    for (std::size_t k = 0; k < 8; ++k) {
      d += x[k] * y[k];
      nx += x[k] * x[k];
      ny += y[k] * y[k];
    }
    const double expect = d / std::max(std::sqrt(nx) * std::sqrt(ny), 1e-8);
    const double got = ops::cosine_sim(tape.constant(x), tape.constant(y)).item();
    CHECK(std::abs(got - expect) < 1e-9);
    CHECK(got >= -1.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("backward contract") {
  SUBCASE("sum gives all-ones gradient") {
    Tape tape;
    auto x = tape.leaf(Tensor(Shape{2, 3}, 0.7));
    tape.backward(ops::sum(x));
    const auto g = tape.grad(x);
    for (double v : g.data()) CHECK(v == 1.0);
  }
  SUBCASE("non-scalar loss rejected") {
    Tape tape;
    auto x = tape.leaf(Tensor(Shape{3}));
    CHECK_THROWS_AS(tape.backward(x), ContractError);
  }
  SUBCASE("second backward rejected, and so is recording afterwards") {
    Tape tape;
    auto x = tape.leaf(Tensor::scalar(2.0));
    auto y = ops::mul(x, x);
    tape.backward(y);
    CHECK(tape.grad(x).item() == 4.0);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
    CHECK_THROWS_AS(ops::mul(x, x), ContractError);
  }
  SUBCASE("mixing tapes rejected") {
    Tape a, b;
    auto x = a.leaf(Tensor::scalar(1.0));
    auto y = b.leaf(Tensor::scalar(1.0));
    CHECK_THROWS_AS(ops::add(x, y), ContractError);
  }
  SUBCASE("detach and constants receive no gradient") {
    Tape tape;
    auto x = tape.leaf(Tensor::scalar(3.0));
    auto c = tape.constant(Tensor::scalar(2.0));
    auto y = ops::add(ops::mul(ops::detach(x), x), c);
    tape.backward(y);
    CHECK(tape.grad(x).item() == 3.0);
    CHECK(tape.grad(c).item() == 0.0);
    CHECK_FALSE(c.requires_grad());
  }
}

TEST_CASE("sigmoid range and stable log_sigmoid") {
  Tape tape;
  auto x = tape.constant(Tensor(Shape{5}, std::vector<double>{-800, -30, 0, 30, 800}));
  const auto s = ops::sigmoid(x).value();
  CHECK(s[2] == 0.5);
  for (std::size_t i = 1; i < 4; ++i) {
    CHECK(s[i] > 0.0);
    CHECK(s[i] < 1.0);
  }
  const auto ls = ops::log_sigmoid(x).value();
  CHECK(ls[0] == doctest::Approx(-800.0));
  CHECK(ls[4] == doctest::Approx(0.0));
  CHECK(ls.all_finite());
}

TEST_CASE("finite-difference agreement for every differentiable op") {
  using testing::LossFn;
  testing::Rng rng(2024);
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    LossFn f;
    double lo = -1.0, hi = 1.0;
  };
  auto weighted = [](Tape& t, const Var& y, std::uint64_t seed) {
    // Random projection so every output entry matters to the scalar.
    testing::Rng r(seed);
    return ops::sum(ops::mul(y, t.constant(uniform(y.shape(), r))));
  };
  const std::vector<Case> cases = {
      {"add", {{3, 4}, {3, 4}}, [&](Tape& t, auto& v) { return weighted(t, ops::add(v[0], v[1]), 1); }},
      {"sub", {{3, 4}, {3, 4}}, [&](Tape& t, auto& v) { return weighted(t, ops::sub(v[0], v[1]), 2); }},
      {"mul", {{3, 4}, {3, 4}}, [&](Tape& t, auto& v) { return weighted(t, ops::mul(v[0], v[1]), 3); }},
      {"mul-broadcast", {{3, 4}, {1}}, [&](Tape& t, auto& v) { return weighted(t, ops::mul(v[0], v[1]), 4); }},
      {"div", {{5}, {5}}, [&](Tape& t, auto& v) { return weighted(t, ops::div(v[0], v[1]), 5); }, 0.5, 2.0},
      {"relu", {{4, 4}}, [&](Tape& t, auto& v) { return weighted(t, ops::relu(v[0]), 6); }},
      {"sigmoid", {{4, 4}}, [&](Tape& t, auto& v) { return weighted(t, ops::sigmoid(v[0]), 7); }},
      {"log", {{6}}, [&](Tape& t, auto& v) { return weighted(t, ops::log(v[0]), 8); }, 0.2, 3.0},
      {"exp", {{6}}, [&](Tape& t, auto& v) { return weighted(t, ops::exp(v[0]), 9); }},
      {"log_sigmoid", {{6}}, [&](Tape& t, auto& v) { return weighted(t, ops::log_sigmoid(v[0]), 10); }, -5, 5},
      {"mean", {{3, 3}}, [&](Tape&, auto& v) { return ops::mean(ops::mul(v[0], v[0])); }},
      {"matmul", {{3, 4}, {4, 2}}, [&](Tape& t, auto& v) { return weighted(t, ops::matmul(v[0], v[1]), 11); }},
      {"conv3x3", {{4, 5, 3}, {3, 3, 3, 2}, {2}},
       [&](Tape& t, auto& v) { return weighted(t, ops::conv3x3(v[0], v[1], v[2]), 12); }},
      {"conv1x1", {{4, 4, 3}, {3, 5}, {5}},
       [&](Tape& t, auto& v) { return weighted(t, ops::conv1x1(v[0], v[1], &v[2]), 13); }},
      {"hadamard", {{3, 3}, {3, 3, 4}}, [&](Tape& t, auto& v) { return weighted(t, ops::hadamard(v[0], v[1]), 14); }},
      {"minmax_normalize+gap", {{4, 4}}, [&](Tape&, auto& v) { return ops::gap(ops::minmax_normalize(v[0])); }},
      {"minmax_normalize", {{4, 4}}, [&](Tape& t, auto& v) { return weighted(t, ops::minmax_normalize(v[0]), 15); }},
      {"gap-channels", {{3, 3, 4}}, [&](Tape& t, auto& v) { return weighted(t, ops::gap(v[0]), 16); }},
      {"cosine_sim", {{8}, {8}}, [&](Tape&, auto& v) { return ops::cosine_sim(v[0], v[1]); }},
      {"l2_normalize", {{6}}, [&](Tape& t, auto& v) { return weighted(t, ops::l2_normalize(v[0]), 17); }},
      {"logsumexp", {{6}}, [&](Tape&, auto& v) { return ops::logsumexp(v[0]); }, -3, 3},
      {"channel+stack", {{3, 3, 4}},
       [&](Tape& t, auto& v) {
         auto c = ops::gap(ops::channel(v[0], 2));
         auto e = ops::element(ops::gap(v[0]), 1);
         return weighted(t, ops::stack({c, e}), 18);
       }},
      {"channels", {{3, 3, 5}}, [&](Tape& t, auto& v) { return weighted(t, ops::channels(v[0], 1, 3), 19); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<Tensor> in;
      for (const auto& s : c.shapes) in.push_back(uniform(s, rng, c.lo, c.hi));
      const auto r = grad_check(in, c.f);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("minmax ties send the subgradient to the first achieving element") {
  Tape tape;
  auto x = tape.leaf(t2(2, 2, {1, 5, 1, 5}));
  auto y = ops::sum(ops::minmax_normalize(x));
  tape.backward(y);
  const auto g = tape.grad(x);
  // Elements 2 and 3 tie with the min/max but only elements 0 and 1 carry them.
  CHECK(g[2] == doctest::Approx(1.0 / (4 + 1e-8)));
  CHECK(g[3] == doctest::Approx(1.0 / (4 + 1e-8)));
  CHECK(g[0] != g[2]);
  CHECK(g[1] != g[3]);
}

TEST_CASE("identical inputs give bit-identical results") {
  testing::Rng r1(9), r2(9);
  const auto x1 = uniform({6, 6, 4}, r1), x2 = uniform({6, 6, 4}, r2);
  const auto w = uniform({3, 3, 4, 4}, r1);
  auto run = [&](const Tensor& x) {
    Tape tape;
    auto xv = tape.leaf(x);
    auto y = ops::sum(ops::relu(ops::conv3x3(xv, tape.constant(w), tape.constant(Tensor(Shape{4})))));
    tape.backward(y);
    return std::pair{y.item(), tape.grad(xv)};
  };
  const auto a = run(x1), b = run(x2);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}
