#pragma once

// Helpers shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <functional>
#include <random>
#include <vector>

#include "looptrans/autodiff.hpp"
#include "looptrans/tensor.hpp"

namespace looptrans::testing {

using Rng = std::mt19937_64;

inline Tensor uniform(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.data()) v = d(rng);
  return t;
}

inline BinaryGrid random_grid(std::size_t h, std::size_t w, Rng& rng, double p = 0.5) {
  BinaryGrid g(h, w);
  std::bernoulli_distribution d(p);
  for (auto& c : g.cells) c = d(rng) ? 1 : 0;
  return g;
}

using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

/// Compares tape gradients against central differences over every input
/// entry. Relative error is |a − n| / max(|a|, |n|, floor); the floor keeps
/// entries whose true gradient is zero from dividing rounding noise by zero.
inline GradCheck grad_check(const std::vector<Tensor>& inputs, const LossFn& f, double h = 1e-5,
                            double floor = 1e-6) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    auto loss = f(tape, leaves);
    tape.backward(loss);
    for (const auto& l : leaves) analytic.push_back(tape.grad(l));
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Var> vs;
    for (const auto& t : xs) vs.push_back(tape.constant(t));
    return f(tape, vs).item();
  };
  GradCheck r;
  auto xs = inputs;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t k = 0; k < xs[i].size(); ++k) {
      const double orig = xs[i][k];
      xs[i][k] = orig + h;
      const double fp = eval(xs);
      xs[i][k] = orig - h;
      const double fm = eval(xs);
      xs[i][k] = orig;
      const double num = (fp - fm) / (2 * h);
      const double a = analytic[i][k];
      const double denom = std::max({std::abs(a), std::abs(num), floor});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(a - num) / denom);
      ++r.entries;
    }
  return r;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("looptrans-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace looptrans::testing
