#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace safer {

/// Dense row-major tensor of 64-bit floats. Values are checked finite at
/// creation boundaries (constructors, file loads); internal arithmetic
/// trusts the invariant.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }

  /// Rank-2 accessors.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string name_, Tensor value_);

  void zero_grad();
  std::size_t size() const { return value.size(); }
};

}  // namespace safer
