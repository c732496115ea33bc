#include "safer/tensor.hpp"

#include <cmath>

#include "safer/errors.hpp"

namespace safer {

namespace {

std::size_t shape_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_count(shape_) != values_.size()) {
    throw ShapeError("tensor: value count does not match shape");
  }
  if (!all_finite()) {
    throw NumericError("tensor: non-finite value at creation");
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  Tensor t;
  t.values_.assign(shape_count(shape), 0.0);
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("tensor: rows() on non-matrix");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("tensor: cols() on non-matrix");
  return shape_[1];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  return values_[r * cols() + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return values_[r * cols() + c];
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)),
      value(std::move(value_)),
      grad(Tensor::zeros(value.shape())) {}

void Parameter::zero_grad() {
  std::fill(grad.values().begin(), grad.values().end(), 0.0);
}

}  // namespace safer
