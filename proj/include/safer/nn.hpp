#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "safer/rng.hpp"
#include "safer/tape.hpp"
#include "safer/tensor.hpp"

namespace safer {

/// Weight init: uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);

/// One affine layer, weight [out x in] row-major plus bias [out].
struct Dense {
  Parameter weight;
  Parameter bias;

  static Dense make(const std::string& name, std::size_t in, std::size_t out,
                    Rng& rng);

  std::size_t in_dim() const { return weight.value.cols(); }
  std::size_t out_dim() const { return weight.value.rows(); }

  Var apply(Tape& t, Var x);
};

/// Affine layers with rectifier between them; the final layer is linear.
struct Mlp {
  std::vector<Dense> layers;

  /// dims = {in, hidden..., out}; at least two entries.
  static Mlp make(const std::string& name, const std::vector<std::size_t>& dims,
                  Rng& rng);

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }

  Var forward(Tape& t, Var x);

  void collect(std::vector<Parameter*>& out);
};

/// Per-feature running mean/variance used by the optional standardization
/// in front of the weight head. Statistics are treated as constants by the
/// gradient (updated only in training mode, from batch moments via EMA).
struct RunningNorm {
  Tensor mean;
  Tensor var;
  double momentum = 0.1;
  std::uint64_t updates = 0;

  static RunningNorm make(std::size_t dim);

  void update(const std::vector<std::vector<double>>& batch);
  /// Standardizes x with the current statistics (constant on the tape).
  Var apply(Tape& t, Var x) const;
};

}  // namespace safer
