#include "looptrans/kernels.hpp"

#include <atomic>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace looptrans::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 16;

#ifdef _OPENMP
std::atomic<bool> g_parallel{true};
#else
std::atomic<bool> g_parallel{false};
#endif

inline bool in_bounds(std::ptrdiff_t v, std::size_t n) { return v >= 0 && v < static_cast<std::ptrdiff_t>(n); }

}  // namespace

// ---------------------------------------------------------------------------
// Reference (serial) implementations.

namespace reference {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

void matmul_backward(std::span<const double> a, std::span<const double> b, std::span<const double> grad_c,
                     std::span<double> grad_a, std::span<double> grad_b, std::size_t m, std::size_t k,
                     std::size_t n) {
  if (!grad_a.empty())
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += grad_c[i * n + j] * b[p * n + j];
        grad_a[i * k + p] += acc;
      }
  if (!grad_b.empty())
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += a[i * k + p] * grad_c[i * n + j];
        grad_b[p * n + j] += acc;
      }
}

void conv3x3(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
             std::span<double> y, ConvDims d) {
  const auto [H, W, Ci, Co] = d;
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t co = 0; co < Co; ++co) {
        double acc = bias.empty() ? 0.0 : bias[co];
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const auto ii = static_cast<std::ptrdiff_t>(i + ky) - 1;
            const auto jj = static_cast<std::ptrdiff_t>(j + kx) - 1;
            if (!in_bounds(ii, H) || !in_bounds(jj, W)) continue;
            for (std::size_t ci = 0; ci < Ci; ++ci)
              acc += x[(ii * W + jj) * Ci + ci] * w[((ky * 3 + kx) * Ci + ci) * Co + co];
          }
        y[(i * W + j) * Co + co] = acc;
      }
}

void conv3x3_backward(std::span<const double> x, std::span<const double> w, std::span<const double> grad_y,
                      std::span<double> grad_x, std::span<double> grad_w, ConvDims d) {
  const auto [H, W, Ci, Co] = d;
  if (!grad_x.empty())
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t ci = 0; ci < Ci; ++ci) {
          double acc = 0.0;
          for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
              // output (oi, oj) read input (i, j) through tap (ky, kx)
              const auto oi = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(ky) + 1;
              const auto oj = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(kx) + 1;
              if (!in_bounds(oi, H) || !in_bounds(oj, W)) continue;
              for (std::size_t co = 0; co < Co; ++co)
                acc += grad_y[(oi * W + oj) * Co + co] * w[((ky * 3 + kx) * Ci + ci) * Co + co];
            }
          grad_x[(i * W + j) * Ci + ci] += acc;
        }
  if (!grad_w.empty())
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx)
        for (std::size_t ci = 0; ci < Ci; ++ci)
          for (std::size_t co = 0; co < Co; ++co) {
            double acc = 0.0;
            for (std::size_t i = 0; i < H; ++i)
              for (std::size_t j = 0; j < W; ++j) {
                const auto ii = static_cast<std::ptrdiff_t>(i + ky) - 1;
                const auto jj = static_cast<std::ptrdiff_t>(j + kx) - 1;
                if (!in_bounds(ii, H) || !in_bounds(jj, W)) continue;
                acc += x[(ii * W + jj) * Ci + ci] * grad_y[(i * W + j) * Co + co];
              }
            grad_w[((ky * 3 + kx) * Ci + ci) * Co + co] += acc;
          }
}

}  // namespace reference

// ---------------------------------------------------------------------------
// OpenMP implementations. Loops are reordered so the innermost runs over
// contiguous channels, but each output keeps the reference summation order.

namespace omp {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_backward(std::span<const double> a, std::span<const double> b, std::span<const double> grad_c,
                     std::span<double> grad_a, std::span<double> grad_b, std::size_t m, std::size_t k,
                     std::size_t n) {
  const bool par = m * k * n >= kParallelWork;
  if (!grad_a.empty()) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t i = 0; i < rows; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double* gc = grad_c.data() + i * n;
        const double* brow = b.data() + p * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += gc[j] * brow[j];
        grad_a[i * k + p] += acc;
      }
  }
  if (!grad_b.empty()) {
    const auto cols = static_cast<std::ptrdiff_t>(k);
#pragma omp parallel if (par)
    {
      std::vector<double> acc(n);
#pragma omp for schedule(static)
      for (std::ptrdiff_t p = 0; p < cols; ++p) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          const double av = a[i * k + p];
          const double* gc = grad_c.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) acc[j] += av * gc[j];
        }
        for (std::size_t j = 0; j < n; ++j) grad_b[p * n + j] += acc[j];
      }
    }
  }
}

void conv3x3(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
             std::span<double> y, ConvDims d) {
  const auto [H, W, Ci, Co] = d;
  const auto rows = static_cast<std::ptrdiff_t>(H);
#pragma omp parallel for schedule(static) if (H * W * Ci * Co * 9 >= kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      double* out = y.data() + (i * W + j) * Co;
      for (std::size_t co = 0; co < Co; ++co) out[co] = bias.empty() ? 0.0 : bias[co];
      for (std::size_t ky = 0; ky < 3; ++ky)
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const auto ii = i + static_cast<std::ptrdiff_t>(ky) - 1;
          const auto jj = static_cast<std::ptrdiff_t>(j + kx) - 1;
          if (!in_bounds(ii, H) || !in_bounds(jj, W)) continue;
          const double* xin = x.data() + (ii * W + jj) * Ci;
          const double* wtap = w.data() + (ky * 3 + kx) * Ci * Co;
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            const double xv = xin[ci];
            const double* wrow = wtap + ci * Co;
            for (std::size_t co = 0; co < Co; ++co) out[co] += xv * wrow[co];
          }
        }
    }
}

void conv3x3_backward(std::span<const double> x, std::span<const double> w, std::span<const double> grad_y,
                      std::span<double> grad_x, std::span<double> grad_w, ConvDims d) {
  const auto [H, W, Ci, Co] = d;
  const bool par = H * W * Ci * Co * 9 >= kParallelWork;
  if (!grad_x.empty()) {
    const auto rows = static_cast<std::ptrdiff_t>(H);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t ci = 0; ci < Ci; ++ci) {
          double acc = 0.0;
          for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const auto oi = i - static_cast<std::ptrdiff_t>(ky) + 1;
              const auto oj = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(kx) + 1;
              if (!in_bounds(oi, H) || !in_bounds(oj, W)) continue;
              const double* gy = grad_y.data() + (oi * W + oj) * Co;
              const double* wrow = w.data() + ((ky * 3 + kx) * Ci + ci) * Co;
              for (std::size_t co = 0; co < Co; ++co) acc += gy[co] * wrow[co];
            }
          grad_x[(i * W + j) * Ci + ci] += acc;
        }
  }
  if (!grad_w.empty()) {
    const auto taps = static_cast<std::ptrdiff_t>(9 * Ci);
#pragma omp parallel if (par)
    {
      std::vector<double> acc(Co);
#pragma omp for schedule(static)
      for (std::ptrdiff_t t = 0; t < taps; ++t) {
        const std::size_t tap = static_cast<std::size_t>(t) / Ci;
        const std::size_t ci = static_cast<std::size_t>(t) % Ci;
        const std::size_t ky = tap / 3;
        const std::size_t kx = tap % 3;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j) {
            const auto ii = static_cast<std::ptrdiff_t>(i + ky) - 1;
            const auto jj = static_cast<std::ptrdiff_t>(j + kx) - 1;
            if (!in_bounds(ii, H) || !in_bounds(jj, W)) continue;
            const double xv = x[(ii * W + jj) * Ci + ci];
            const double* gy = grad_y.data() + (i * W + j) * Co;
            for (std::size_t co = 0; co < Co; ++co) acc[co] += xv * gy[co];
          }
        double* gw = grad_w.data() + (tap * Ci + ci) * Co;
        for (std::size_t co = 0; co < Co; ++co) gw[co] += acc[co];
      }
    }
  }
}

}  // namespace omp

// ---------------------------------------------------------------------------

void set_parallel(bool enabled) { g_parallel = enabled; }
bool parallel_enabled() { return g_parallel; }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
  g_parallel ? omp::matmul(a, b, c, m, k, n) : reference::matmul(a, b, c, m, k, n);
}

void matmul_backward(std::span<const double> a, std::span<const double> b, std::span<const double> grad_c,
                     std::span<double> grad_a, std::span<double> grad_b, std::size_t m, std::size_t k,
                     std::size_t n) {
  g_parallel ? omp::matmul_backward(a, b, grad_c, grad_a, grad_b, m, k, n)
             : reference::matmul_backward(a, b, grad_c, grad_a, grad_b, m, k, n);
}

void conv3x3(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
             std::span<double> y, ConvDims d) {
  g_parallel ? omp::conv3x3(x, w, bias, y, d) : reference::conv3x3(x, w, bias, y, d);
}

void conv3x3_backward(std::span<const double> x, std::span<const double> w, std::span<const double> grad_y,
                      std::span<double> grad_x, std::span<double> grad_w, ConvDims d) {
  g_parallel ? omp::conv3x3_backward(x, w, grad_y, grad_x, grad_w, d)
             : reference::conv3x3_backward(x, w, grad_y, grad_x, grad_w, d);
}

}  // namespace looptrans::kernels
