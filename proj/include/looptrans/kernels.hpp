#pragma once

// Dense compute kernels behind the autodiff ops.
//
// Two implementations with identical numerics:
//   reference::  plain serial loops, kept as the test oracle.
//   omp::        OpenMP data-parallel versions. Every output element is
//                accumulated in the same order as the reference, so results
//                are bitwise identical for any thread count.
//
// Layouts (row-major):
//   feature map  x  [H][W][Ci]
//   3x3 weights  w  [3][3][Ci][Co]
//   matrices     A  [m][k], B [k][n]

#include <cstddef>
#include <span>

namespace looptrans::kernels {

struct ConvDims {
  std::size_t height;
  std::size_t width;
  std::size_t in_channels;
  std::size_t out_channels;
};

namespace reference {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n);
// grad_a += grad_c * b^T ; grad_b += a^T * grad_c (either output may be empty)
void matmul_backward(std::span<const double> a, std::span<const double> b, std::span<const double> grad_c,
                     std::span<double> grad_a, std::span<double> grad_b, std::size_t m, std::size_t k,
                     std::size_t n);
void conv3x3(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
             std::span<double> y, ConvDims d);
void conv3x3_backward(std::span<const double> x, std::span<const double> w, std::span<const double> grad_y,
                      std::span<double> grad_x, std::span<double> grad_w, ConvDims d);
}  // namespace reference

namespace omp {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n);
void matmul_backward(std::span<const double> a, std::span<const double> b, std::span<const double> grad_c,
                     std::span<double> grad_a, std::span<double> grad_b, std::size_t m, std::size_t k,
                     std::size_t n);
void conv3x3(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
             std::span<double> y, ConvDims d);
void conv3x3_backward(std::span<const double> x, std::span<const double> w, std::span<const double> grad_y,
                      std::span<double> grad_x, std::span<double> grad_w, ConvDims d);
}  // namespace omp

/// Selects the backend used by the dispatching entry points below. Defaults
/// to the OpenMP backend when compiled with OpenMP.
void set_parallel(bool enabled);
bool parallel_enabled();
int max_threads();

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n);
void matmul_backward(std::span<const double> a, std::span<const double> b, std::span<const double> grad_c,
                     std::span<double> grad_a, std::span<double> grad_b, std::size_t m, std::size_t k,
                     std::size_t n);
void conv3x3(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
             std::span<double> y, ConvDims d);
void conv3x3_backward(std::span<const double> x, std::span<const double> w, std::span<const double> grad_y,
                      std::span<double> grad_x, std::span<double> grad_w, ConvDims d);

}  // namespace looptrans::kernels
