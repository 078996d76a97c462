// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "mcdcunet/tensor.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mcdc {

std::string ShapeString(const Shape &shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

int64_t NumElements(const Shape &shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0)
      throw ShapeError("non-positive dimension in shape " + ShapeString(shape));
    n *= d;
  }
  return n;
}

void CheckSameShape(const Shape &expected, const Shape &actual,
                    const std::string &where) {
  if (expected != actual)
    throw ShapeError(where + ": expected shape " + ShapeString(expected) +
                     ", got " + ShapeString(actual));
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(NumElements(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (NumElements(shape_) != static_cast<int64_t>(data_.size()))
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + ShapeString(shape_));
}

Tensor Tensor::Randn(const Shape &shape, std::mt19937_64 &rng,
                     double stddev) {
  Tensor t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double &v : t.data_) v = dist(rng);
  return t;
}

Tensor Tensor::Uniform(const Shape &shape, std::mt19937_64 &rng, double lo,
                       double hi) {
  Tensor t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double &v : t.data_) v = dist(rng);
  return t;
}

int64_t Tensor::size(int axis) const {
  if (axis < 0) axis += dim();
  if (axis < 0 || axis >= dim())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     ShapeString(shape_));
  return shape_[axis];
}

int64_t Tensor::Offset(std::initializer_list<int64_t> index) const {
  if (static_cast<int>(index.size()) != dim())
    throw ShapeError("index rank mismatch for " + ShapeString(shape_));
  int64_t off = 0;
  int axis = 0;
  for (int64_t i : index) {
    if (i < 0 || i >= shape_[axis])
      throw ShapeError("index out of range for " + ShapeString(shape_));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double &Tensor::at(std::initializer_list<int64_t> index) {
  return data_[Offset(index)];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  return data_[Offset(index)];
}

double Tensor::item() const {
  if (data_.size() != 1)
    throw ShapeError("item() on tensor of shape " + ShapeString(shape_));
  return data_[0];
}

Tensor Tensor::Reshaped(Shape shape) const {
  if (NumElements(shape) != numel())
    throw ShapeError("cannot reshape " + ShapeString(shape_) + " to " +
                     ShapeString(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::Fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::AddInPlace(const Tensor &other, double scale) {
  CheckSameShape(shape_, other.shape_, "Tensor::AddInPlace");
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

void Tensor::ScaleInPlace(double scale) {
  for (double &v : data_) v *= scale;
}

double Tensor::Sum() const {
  return std::accumulate(data_.begin(), data_.end(), 0.0);
}

double Tensor::MaxAbs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

bool Tensor::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

ComplexTensor::ComplexTensor(Tensor re, Tensor im)
    : real(std::move(re)), imag(std::move(im)) {
  CheckSameShape(real.shape(), imag.shape(), "ComplexTensor planes");
}

}  // namespace mcdc
