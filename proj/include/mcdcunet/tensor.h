// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef MCDCUNET_TENSOR_H_
#define MCDCUNET_TENSOR_H_

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcdc {

using Shape = std::vector<int64_t>;

std::string ShapeString(const Shape &shape);
int64_t NumElements(const Shape &shape);

// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor Zeros(const Shape &shape) { return Tensor(shape, 0.0); }
  static Tensor Ones(const Shape &shape) { return Tensor(shape, 1.0); }
  static Tensor Randn(const Shape &shape, std::mt19937_64 &rng,
                      double stddev = 1.0);
  static Tensor Uniform(const Shape &shape, std::mt19937_64 &rng, double lo,
                        double hi);
  static Tensor Scalar(double value) { return Tensor({1}, value); }

  const Shape &shape() const { return shape_; }
  int dim() const { return static_cast<int>(shape_.size()); }
  int64_t size(int axis) const;
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double *data() { return data_.data(); }
  const double *data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double> &storage() { return data_; }
  const std::vector<double> &storage() const { return data_; }

  double &operator[](int64_t i) { return data_[i]; }
  double operator[](int64_t i) const { return data_[i]; }
  double &at(std::initializer_list<int64_t> index);
  double at(std::initializer_list<int64_t> index) const;
  double item() const;

  // Same data, new shape with identical element count.
  Tensor Reshaped(Shape shape) const;

  void Fill(double value);
  void AddInPlace(const Tensor &other, double scale = 1.0);
  void ScaleInPlace(double scale);

  double Sum() const;
  double MaxAbs() const;
  bool AllFinite() const;

 private:
  int64_t Offset(std::initializer_list<int64_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

// A complex tensor exposes real and imaginary planes of identical shape.
struct ComplexTensor {
  Tensor real;
  Tensor imag;

  ComplexTensor() = default;
  explicit ComplexTensor(const Shape &shape)
      : real(shape), imag(shape) {}
  ComplexTensor(Tensor re, Tensor im);

  const Shape &shape() const { return real.shape(); }
  int64_t numel() const { return real.numel(); }
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void CheckSameShape(const Shape &expected, const Shape &actual,
                    const std::string &where);

}  // namespace mcdc

#endif  // MCDCUNET_TENSOR_H_
