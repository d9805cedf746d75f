// Serial reference kernels against their OpenMP versions.
//
//   looptrans_bench [repeats]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <vector>

#include "looptrans/kernels.hpp"

namespace k = looptrans::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

double best_of(int repeats, const std::function<void()>& f) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void report(const char* name, double serial, double parallel, bool same) {
  std::printf("%-28s %10.3f ms %10.3f ms %7.2fx  %s\n", name, serial * 1e3, parallel * 1e3, serial / parallel,
              same ? "bitwise equal" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::max(1, std::atoi(argv[1])) : 5;
  std::mt19937_64 rng(7);
  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-28s %13s %13s %8s\n", "kernel", "reference", "openmp", "speedup");

  {
    const std::size_t m = 256, kk = 256, n = 256;
    const auto a = random_vec(m * kk, rng), b = random_vec(kk * n, rng), gc = random_vec(m * n, rng);
    std::vector<double> c1(m * n), c2(m * n);
    const double s = best_of(repeats, [&] { k::reference::matmul(a, b, c1, m, kk, n); });
    const double p = best_of(repeats, [&] { k::omp::matmul(a, b, c2, m, kk, n); });
    report("matmul 256^3", s, p, c1 == c2);

    std::vector<double> ga1(m * kk), gb1(kk * n), ga2(m * kk), gb2(kk * n);
    const double sb = best_of(repeats, [&] {
      std::fill(ga1.begin(), ga1.end(), 0.0);
      std::fill(gb1.begin(), gb1.end(), 0.0);
      k::reference::matmul_backward(a, b, gc, ga1, gb1, m, kk, n);
    });
    const double pb = best_of(repeats, [&] {
      std::fill(ga2.begin(), ga2.end(), 0.0);
      std::fill(gb2.begin(), gb2.end(), 0.0);
      k::omp::matmul_backward(a, b, gc, ga2, gb2, m, kk, n);
    });
    report("matmul_backward 256^3", sb, pb, ga1 == ga2 && gb1 == gb2);
  }
  {
    const k::ConvDims d{32, 32, 64, 64};
    const auto x = random_vec(32 * 32 * 64, rng), w = random_vec(9 * 64 * 64, rng), bias = random_vec(64, rng);
    const auto gy = random_vec(32 * 32 * 64, rng);
    std::vector<double> y1(x.size()), y2(x.size());
    const double s = best_of(repeats, [&] { k::reference::conv3x3(x, w, bias, y1, d); });
    const double p = best_of(repeats, [&] { k::omp::conv3x3(x, w, bias, y2, d); });
    report("conv3x3 32x32x64->64", s, p, y1 == y2);

    std::vector<double> gx1(x.size()), gw1(w.size()), gx2(x.size()), gw2(w.size());
    const double sb = best_of(repeats, [&] {
      std::fill(gx1.begin(), gx1.end(), 0.0);
      std::fill(gw1.begin(), gw1.end(), 0.0);
      k::reference::conv3x3_backward(x, w, gy, gx1, gw1, d);
    });
    const double pb = best_of(repeats, [&] {
      std::fill(gx2.begin(), gx2.end(), 0.0);
      std::fill(gw2.begin(), gw2.end(), 0.0);
      k::omp::conv3x3_backward(x, w, gy, gx2, gw2, d);
    });
    report("conv3x3_backward", sb, pb, gx1 == gx2 && gw1 == gw2);
  }
  return 0;
}
