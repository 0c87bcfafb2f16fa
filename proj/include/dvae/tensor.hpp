#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace dvae {

// Dense row-major array of doubles. Rank is the length of shape();
// most of the library uses rank 1 (vectors) and rank 2 (matrices).
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::size_t rows, std::size_t cols);
  Tensor(std::initializer_list<std::initializer_list<double>> rows);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor identity(std::size_t n);
  static Tensor vector(std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Rank-2 accessors (throw ShapeError on other ranks).
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  Tensor reshaped(std::vector<std::size_t> shape) const;
  Tensor row(std::size_t i) const;           // rank-2 -> rank-1
  Tensor rows_slice(std::size_t begin, std::size_t end) const;
  Tensor cols_slice(std::size_t begin, std::size_t end) const;
  void set_row(std::size_t i, const Tensor& v);

  bool all_finite() const;
  double frobenius_norm() const;
  double sum() const;
  double max_abs() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);
  Tensor& hadamard_inplace(const Tensor& other);

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, double s) { return a *= s; }
  friend Tensor operator*(double s, Tensor a) { return a *= s; }

private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

Tensor hadamard(Tensor a, const Tensor& b);

}  // namespace dvae
