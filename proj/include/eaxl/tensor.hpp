#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace eaxl {

#ifdef EAXL_USE_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array of rank 1 or 2. Rank-1 tensors act as a single row
/// wherever an op needs a matrix view.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = 0);
  Tensor(Shape shape, std::vector<Scalar> data);

  static Tensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows);
  static Tensor vector(std::initializer_list<Scalar> values);
  static Tensor scalar(Scalar value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> span() { return data_; }
  std::span<const Scalar> span() const { return data_; }
  std::vector<Scalar>& values() { return data_; }
  const std::vector<Scalar>& values() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }
  Scalar& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Scalar at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<const Scalar> row(std::size_t r) const {
    return std::span<const Scalar>(data_).subspan(r * cols(), cols());
  }
  std::span<Scalar> row(std::size_t r) {
    return std::span<Scalar>(data_).subspan(r * cols(), cols());
  }

  void fill(Scalar value);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<Scalar> data_;
};

/// A trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0); }
};

}  // namespace eaxl
