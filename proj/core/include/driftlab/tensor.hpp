#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace driftlab {

/// Dense row-major tensor of doubles. Rank 1 and 2 are the only shapes the
/// library produces; the shape vector is kept general for the archive format.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);

  static Tensor vector(std::size_t n, double fill = 0.0) { return Tensor(std::vector<std::size_t>{n}, fill); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  /// Column count; rank-1 tensors behave as a single row-major strip.
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v);
  void scale_inplace(double s);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

double dot(std::span<const double> a, std::span<const double> b);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// out = a (m×k) · b (k×n)
Tensor matmul(const Tensor& a, const Tensor& b);
/// out = a (m×k) · bᵀ (n×k)
Tensor matmul_transposed(const Tensor& a, const Tensor& b);
/// out = aᵀ (k×m)ᵀ · b (k×n), i.e. (m×n)
Tensor transposed_matmul(const Tensor& a, const Tensor& b);

}  // namespace driftlab
