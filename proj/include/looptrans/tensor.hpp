#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace looptrans {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Storage precision recorded alongside a tensor. Arithmetic always runs in
/// double; the tag controls how the tensor is written to disk.
enum class DType : std::uint32_t { Float32 = 1, Float64 = 2 };

std::size_t dtype_size(DType d);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1; }

  DType dtype() const { return dtype_; }
  void set_dtype(DType d) { dtype_ = d; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D / 3-D accessors (row-major, last index fastest).
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  double item() const;
  Tensor reshaped(Shape s) const;
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::Float64;
};

/// Binary H×W grid stored as bytes (0/1).
struct BinaryGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> cells;

  BinaryGrid() = default;
  BinaryGrid(std::size_t h, std::size_t w) : height(h), width(w), cells(h * w, 0) {}

  std::size_t size() const { return cells.size(); }
  std::size_t count() const;
  bool empty_set() const { return count() == 0; }
  std::uint8_t& operator()(std::size_t i, std::size_t j) { return cells[i * width + j]; }
  std::uint8_t operator()(std::size_t i, std::size_t j) const { return cells[i * width + j]; }
  friend bool operator==(const BinaryGrid&, const BinaryGrid&) = default;
};

}  // namespace looptrans
