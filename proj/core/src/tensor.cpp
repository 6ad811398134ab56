#include "driftlab/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace driftlab {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  const std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  data_.assign(shape_.empty() ? 0 : n, fill);
}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill) : Tensor(std::vector<std::size_t>{rows, cols}, fill) {}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::scale_inplace(double s) {
  for (auto& v : data_) v *= s;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) axpy(a(i, k), b.row(k), orow);
  }
  return out;
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_transposed: inner dimension mismatch");
  Tensor out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

Tensor transposed_matmul(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("transposed_matmul: inner dimension mismatch");
  Tensor out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k)
    for (std::size_t i = 0; i < a.cols(); ++i) axpy(a(k, i), b.row(k), out.row(i));
  return out;
}

}  // namespace driftlab
