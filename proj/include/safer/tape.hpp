#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "safer/tensor.hpp"

namespace safer {

/// Handle to a tape node.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode autodiff tape over vector values. Forward values are
/// computed eagerly at node creation (define-by-run); backward() sweeps the
/// recorded nodes in reverse. Values and gradients live in flat arenas so a
/// tape can be reset and reused without reallocation.
///
/// Aggregation primitives take operand lists, which keeps per-graph tapes
/// compact: one node per aggregated vector rather than a chain of adds.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves ----
  Var leaf(std::span<const double> values);
  Var leaf(const Tensor& t) { return leaf(std::span(t.data(), t.size())); }
  Var scalar(double v);
  /// Binds a parameter as a leaf; repeated binds of the same parameter on
  /// one tape return the same node. accumulate_param_grads() adds the
  /// tape gradient into Parameter::grad after backward().
  Var param(Parameter& p);

  // ---- elementwise / linear ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  /// Elementwise (Hadamard) product.
  Var mul(Var a, Var b);
  /// c0 * x + c1, elementwise with scalar constants.
  Var scale_add(Var x, double c0, double c1 = 0.0);
  /// (1 - l) * x + l * y.
  Var lerp(Var x, Var y, double l);
  /// Vector times scalar node.
  Var mul_scalar(Var x, Var s);
  /// Matrix(rows x cols, row-major) times vector(cols).
  Var matvec(Var w, Var x);
  Var concat(std::span<const Var> parts);
  Var sigmoid(Var x);
  Var relu(Var x);

  // ---- list aggregations ----
  /// Coordinate-wise max over equally sized vectors.
  Var maxpool(std::span<const Var> xs);
  /// Arithmetic mean; summands are added in value-sorted order so the
  /// result is bitwise invariant to operand order.
  Var mean_sorted(std::span<const Var> xs);
  /// c * sum(xs); `dim` sizes the zero result when xs is empty.
  Var sum_scaled(std::span<const Var> xs, double c, std::size_t dim);
  /// sum_i xs[i]*w[i] / (1 + sum_i w[i]); weights are scalar nodes.
  /// `dim` sizes the zero result when the lists are empty.
  Var weighted_mean_norm(std::span<const Var> xs, std::span<const Var> ws,
                         std::size_t dim);

  // ---- reductions ----
  Var l2_norm(Var x);
  Var cosine(Var a, Var b);
  Var sum(Var x);

  // ---- access ----
  std::span<const double> value(Var v) const;
  double scalar_value(Var v) const;
  Tensor tensor_value(Var v) const;
  std::size_t size(Var v) const { return static_cast<std::size_t>(node(v).len); }
  std::size_t num_nodes() const { return nodes_.size(); }

  /// Reverse sweep from a scalar node. May be called once per build.
  void backward(Var loss);
  std::span<const double> grad(Var v) const;
  void accumulate_param_grads();

  /// Clears nodes and bindings, keeping arena capacity.
  void reset();

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kAdd,
    kSub,
    kScaleAdd,
    kLerp,
    kMulScalar,
    kMatVec,
    kConcat,
    kSigmoid,
    kRelu,
    kMaxPool,
    kMeanSorted,
    kSumScaled,
    kWeightedMeanNorm,
    kL2Norm,
    kCosine,
    kSum,
  };

  struct Node {
    Op op;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::int32_t args_off = 0;
    std::int32_t nargs = 0;
    std::int64_t off = 0;
    std::int32_t len = 0;
    double c0 = 0.0;
    double c1 = 0.0;
    std::int64_t aux = -1;
  };

  const Node& node(Var v) const;
  Var push(Op op, std::int32_t len);
  double* out(const Node& n) { return vals_.data() + n.off; }
  const double* val(std::int32_t id) const {
    return vals_.data() + nodes_[static_cast<std::size_t>(id)].off;
  }
  double* gradient(std::int32_t id) {
    return grads_.data() + nodes_[static_cast<std::size_t>(id)].off;
  }
  std::int32_t len_of(std::int32_t id) const {
    return nodes_[static_cast<std::size_t>(id)].len;
  }
  std::int32_t store_args(std::span<const Var> vars);
  void check_vec(Var v, const char* op) const;
  void backward_node(const Node& n);

  std::vector<Node> nodes_;
  std::vector<double> scratch_;
  std::vector<double> vals_;
  std::vector<double> grads_;
  std::vector<std::int32_t> args_;
  std::vector<std::int32_t> aux_i_;
  std::vector<std::pair<Parameter*, std::int32_t>> bindings_;
  std::unordered_map<const Parameter*, std::int32_t> binding_cache_;
  bool grads_valid_ = false;
};

}  // namespace safer
