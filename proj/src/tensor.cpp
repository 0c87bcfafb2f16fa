#include "dvae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dvae/errors.hpp"

namespace dvae {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::size_t rows, std::size_t cols) : Tensor(std::vector<std::size_t>{rows, cols}) {}

Tensor::Tensor(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  shape_ = {r, c};
  data_.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged initializer for matrix");
    data_.insert(data_.end(), row.begin(), row.end());
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::vector(std::vector<double> values) {
  Tensor t(std::vector<std::size_t>{values.size()});
  std::copy(values.begin(), values.end(), t.data_.begin());
  return t;
}

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw ShapeError("rows() requires a rank-2 tensor");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw ShapeError("cols() requires a rank-2 tensor");
  return shape_[1];
}

double& Tensor::at(std::size_t i, std::size_t j) {
  if (ndim() != 2) throw ShapeError("at(i,j) requires a rank-2 tensor");
  return data_[i * shape_[1] + j];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (ndim() != 2) throw ShapeError("at(i,j) requires a rank-2 tensor");
  return data_[i * shape_[1] + j];
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (shape_numel(shape) != numel()) throw ShapeError("reshape changes element count");
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

Tensor Tensor::row(std::size_t i) const {
  const std::size_t c = cols();
  if (i >= rows()) throw ShapeError("row index out of range");
  Tensor v(std::vector<std::size_t>{c});
  std::copy(data_.begin() + i * c, data_.begin() + (i + 1) * c, v.data_.begin());
  return v;
}

Tensor Tensor::rows_slice(std::size_t begin, std::size_t end) const {
  const std::size_t c = cols();
  if (begin > end || end > rows()) throw ShapeError("row slice out of range");
  Tensor t(end - begin, c);
  std::copy(data_.begin() + begin * c, data_.begin() + end * c, t.data_.begin());
  return t;
}

Tensor Tensor::cols_slice(std::size_t begin, std::size_t end) const {
  const std::size_t r = rows();
  const std::size_t c = cols();
  if (begin > end || end > c) throw ShapeError("column slice out of range");
  Tensor t(r, end - begin);
  for (std::size_t i = 0; i < r; ++i)
    std::copy(data_.begin() + i * c + begin, data_.begin() + i * c + end,
              t.data_.begin() + i * (end - begin));
  return t;
}

void Tensor::set_row(std::size_t i, const Tensor& v) {
  const std::size_t c = cols();
  if (v.numel() != c) throw ShapeError("set_row length mismatch");
  if (i >= rows()) throw ShapeError("row index out of range");
  std::copy(v.data_.begin(), v.data_.end(), data_.begin() + i * c);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

double Tensor::frobenius_norm() const {
  double s = 0.0;
  for (double x : data_) s += x * x;
  return std::sqrt(s);
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::fabs(x));
  return m;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!same_shape(other)) throw ShapeError("elementwise add shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  if (!same_shape(other)) throw ShapeError("elementwise sub shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

Tensor& Tensor::hadamard_inplace(const Tensor& other) {
  if (!same_shape(other)) throw ShapeError("hadamard shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] *= other.data_[i];
  return *this;
}

Tensor hadamard(Tensor a, const Tensor& b) { return a.hadamard_inplace(b); }

}  // namespace dvae
