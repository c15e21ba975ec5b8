#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedsplit {

using Shape = std::vector<std::size_t>;

// Dense row-major array of doubles. A default-constructed tensor is empty
// (no shape, no data); every other tensor has positive extents and
// numel() == product(shape).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  // Rank-2 literal, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 accessors.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  // Throws NumericError naming `where` if any element is NaN or Inf.
  void require_finite(std::string_view where) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Element-wise bit comparison; distinguishes -0.0 from 0.0 and compares NaN
// payloads.
bool bitwise_equal(const Tensor& a, const Tensor& b);

double max_abs_diff(const Tensor& a, const Tensor& b);

std::string shape_string(const Shape& shape);

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view where);

}  // namespace fedsplit
