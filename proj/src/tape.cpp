#include "safer/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "safer/errors.hpp"

namespace safer {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw StateError("tape: invalid var handle");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::push(Op op, std::int32_t len) {
  Node n;
  n.op = op;
  n.len = len;
  n.off = static_cast<std::int64_t>(vals_.size());
  vals_.resize(vals_.size() + static_cast<std::size_t>(len));
  nodes_.push_back(n);
  grads_valid_ = false;
  return Var{static_cast<std::int32_t>(nodes_.size()) - 1};
}

std::int32_t Tape::store_args(std::span<const Var> vars) {
  const std::int32_t off = static_cast<std::int32_t>(args_.size());
  for (Var v : vars) {
    node(v);  // validate
    args_.push_back(v.id);
  }
  return off;
}

void Tape::check_vec(Var v, const char* op) const {
  if (node(v).len <= 0) {
    throw ShapeError(std::string(op) + ": empty operand");
  }
}

Var Tape::leaf(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("tape leaf: non-finite value");
  }
  // push() may grow the value arena; stage first in case `values` aliases it.
  scratch_.assign(values.begin(), values.end());
  Var r = push(Op::kLeaf, static_cast<std::int32_t>(values.size()));
  std::copy(scratch_.begin(), scratch_.end(), out(nodes_.back()));
  return r;
}

Var Tape::scalar(double v) { return leaf(std::span(&v, 1)); }

Var Tape::param(Parameter& p) {
  auto it = binding_cache_.find(&p);
  if (it != binding_cache_.end()) return Var{it->second};
  Var r = leaf(std::span(p.value.data(), p.value.size()));
  bindings_.emplace_back(&p, r.id);
  binding_cache_.emplace(&p, r.id);
  return r;
}

Var Tape::add(Var a, Var b) {
  const Node &na = node(a), &nb = node(b);
  if (na.len != nb.len) throw ShapeError("add: length mismatch");
  Var r = push(Op::kAdd, na.len);
  Node& n = nodes_.back();
  n.a = a.id;
  n.b = b.id;
  const double *pa = val(a.id), *pb = val(b.id);
  double* po = out(n);
  for (std::int32_t i = 0; i < n.len; ++i) po[i] = pa[i] + pb[i];
  return r;
}

Var Tape::sub(Var a, Var b) {
  const Node &na = node(a), &nb = node(b);
  if (na.len != nb.len) throw ShapeError("sub: length mismatch");
  Var r = push(Op::kSub, na.len);
  Node& n = nodes_.back();
  n.a = a.id;
  n.b = b.id;
  const double *pa = val(a.id), *pb = val(b.id);
  double* po = out(n);
  for (std::int32_t i = 0; i < n.len; ++i) po[i] = pa[i] - pb[i];
  return r;
}

Var Tape::scale_add(Var x, double c0, double c1) {
  const Node& nx = node(x);
  Var r = push(Op::kScaleAdd, nx.len);
  Node& n = nodes_.back();
  n.a = x.id;
  n.c0 = c0;
  n.c1 = c1;
  const double* px = val(x.id);
  double* po = out(n);
  for (std::int32_t i = 0; i < n.len; ++i) po[i] = c0 * px[i] + c1;
  return r;
}

Var Tape::lerp(Var x, Var y, double l) {
  const Node &nx = node(x), &ny = node(y);
  if (nx.len != ny.len) throw ShapeError("lerp: length mismatch");
  Var r = push(Op::kLerp, nx.len);
  Node& n = nodes_.back();
  n.a = x.id;
  n.b = y.id;
  n.c0 = l;
  const double *px = val(x.id), *py = val(y.id);
  double* po = out(n);
  for (std::int32_t i = 0; i < n.len; ++i) {
    po[i] = (1.0 - l) * px[i] + l * py[i];
  }
  return r;
}

Var Tape::mul_scalar(Var x, Var s) {
  const Node& nx = node(x);
  if (node(s).len != 1) throw ShapeError("mul_scalar: scale is not a scalar");
  Var r = push(Op::kMulScalar, nx.len);
  Node& n = nodes_.back();
  n.a = x.id;
  n.b = s.id;
  const double* px = val(x.id);
  const double sv = *val(s.id);
  double* po = out(n);
  for (std::int32_t i = 0; i < n.len; ++i) po[i] = px[i] * sv;
  return r;
}

Var Tape::matvec(Var w, Var x) {
  const Node &nw = node(w), &nx = node(x);
  if (nx.len == 0 || nw.len % nx.len != 0) {
    throw ShapeError("matvec: matrix size not a multiple of vector size");
  }
  const std::int32_t rows = nw.len / nx.len;
  const std::int32_t cols = nx.len;
  Var r = push(Op::kMatVec, rows);
  Node& n = nodes_.back();
  n.a = w.id;
  n.b = x.id;
  const double *pw = val(w.id), *px = val(x.id);
  double* po = out(n);
  for (std::int32_t i = 0; i < rows; ++i) {
    const double* row = pw + static_cast<std::size_t>(i) * cols;
    double acc = 0.0;
    for (std::int32_t j = 0; j < cols; ++j) acc += row[j] * px[j];
    po[i] = acc;
  }
  return r;
}

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  std::int32_t total = 0;
  for (Var v : parts) total += node(v).len;
  const std::int32_t aoff = store_args(parts);
  Var r = push(Op::kConcat, total);
  Node& n = nodes_.back();
  n.args_off = aoff;
  n.nargs = static_cast<std::int32_t>(parts.size());
  double* po = out(n);
  for (Var v : parts) {
    const Node& nv = node(v);
    std::memcpy(po, val(v.id), static_cast<std::size_t>(nv.len) * sizeof(double));
    po += nv.len;
  }
  return r;
}

Var Tape::sigmoid(Var x) {
  const Node& nx = node(x);
  Var r = push(Op::kSigmoid, nx.len);
  Node& n = nodes_.back();
  n.a = x.id;
  const double* px = val(x.id);
  double* po = out(n);
  for (std::int32_t i = 0; i < n.len; ++i) po[i] = stable_sigmoid(px[i]);
  return r;
}

Var Tape::relu(Var x) {
  const Node& nx = node(x);
  Var r = push(Op::kRelu, nx.len);
  Node& n = nodes_.back();
  n.a = x.id;
  const double* px = val(x.id);
  double* po = out(n);
  for (std::int32_t i = 0; i < n.len; ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
  return r;
}

Var Tape::maxpool(std::span<const Var> xs) {
  if (xs.empty()) throw ShapeError("maxpool: no operands");
  const std::int32_t len = node(xs[0]).len;
  for (Var v : xs) {
    if (node(v).len != len) throw ShapeError("maxpool: length mismatch");
  }
  const std::int32_t aoff = store_args(xs);
  const std::int64_t axoff = static_cast<std::int64_t>(aux_i_.size());
  aux_i_.resize(aux_i_.size() + static_cast<std::size_t>(len));
  Var r = push(Op::kMaxPool, len);
  Node& n = nodes_.back();
  n.args_off = aoff;
  n.nargs = static_cast<std::int32_t>(xs.size());
  n.aux = axoff;
  double* po = out(n);
  std::int32_t* am = aux_i_.data() + axoff;
  for (std::int32_t i = 0; i < len; ++i) {
    double best = val(xs[0].id)[i];
    std::int32_t who = 0;
    for (std::int32_t k = 1; k < n.nargs; ++k) {
      const double c = val(xs[static_cast<std::size_t>(k)].id)[i];
      if (c > best) {
        best = c;
        who = k;
      }
    }
    po[i] = best;
    am[i] = who;
  }
  return r;
}

Var Tape::mean_sorted(std::span<const Var> xs) {
  if (xs.empty()) throw ShapeError("mean_sorted: no operands");
  const std::int32_t len = node(xs[0]).len;
  for (Var v : xs) {
    if (node(v).len != len) throw ShapeError("mean_sorted: length mismatch");
  }
  // Sum in value-lexicographic order: the forward result is then bitwise
  // invariant to operand order (gradients are order-free anyway).
  std::vector<std::int32_t> order(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) order[k] = xs[k].id;
  std::sort(order.begin(), order.end(), [&](std::int32_t l, std::int32_t r) {
    const double *pl = val(l), *pr = val(r);
    return std::lexicographical_compare(pl, pl + len, pr, pr + len);
  });
  std::vector<Var> ordered(xs.size());
  for (std::size_t k = 0; k < order.size(); ++k) ordered[k] = Var{order[k]};
  const std::int32_t aoff = store_args(ordered);
  Var r = push(Op::kMeanSorted, len);
  Node& n = nodes_.back();
  n.args_off = aoff;
  n.nargs = static_cast<std::int32_t>(xs.size());
  double* po = out(n);
  std::fill(po, po + len, 0.0);
  for (std::int32_t k = 0; k < n.nargs; ++k) {
    const double* p = val(args_[static_cast<std::size_t>(aoff + k)]);
    for (std::int32_t i = 0; i < len; ++i) po[i] += p[i];
  }
  const double inv = 1.0 / static_cast<double>(n.nargs);
  for (std::int32_t i = 0; i < len; ++i) po[i] *= inv;
  return r;
}

Var Tape::sum_scaled(std::span<const Var> xs, double c, std::size_t dim) {
  std::int32_t len = static_cast<std::int32_t>(dim);
  for (Var v : xs) {
    if (node(v).len != len) throw ShapeError("sum_scaled: length mismatch");
  }
  const std::int32_t aoff = store_args(xs);
  Var r = push(Op::kSumScaled, len);
  Node& n = nodes_.back();
  n.args_off = aoff;
  n.nargs = static_cast<std::int32_t>(xs.size());
  n.c0 = c;
  double* po = out(n);
  std::fill(po, po + len, 0.0);
  for (std::int32_t k = 0; k < n.nargs; ++k) {
    const double* p = val(args_[static_cast<std::size_t>(aoff + k)]);
    for (std::int32_t i = 0; i < len; ++i) po[i] += p[i];
  }
  for (std::int32_t i = 0; i < len; ++i) po[i] *= c;
  return r;
}

Var Tape::weighted_mean_norm(std::span<const Var> xs, std::span<const Var> ws,
                             std::size_t dim) {
  if (xs.size() != ws.size()) {
    throw ShapeError("weighted_mean_norm: operand/weight count mismatch");
  }
  const std::int32_t len = static_cast<std::int32_t>(dim);
  for (Var v : xs) {
    if (node(v).len != len) throw ShapeError("weighted_mean_norm: length mismatch");
  }
  for (Var w : ws) {
    if (node(w).len != 1) throw ShapeError("weighted_mean_norm: weight not scalar");
  }
  // args = [x_0..x_{m-1}, w_0..w_{m-1}]
  std::vector<Var> all;
  all.reserve(xs.size() * 2);
  all.insert(all.end(), xs.begin(), xs.end());
  all.insert(all.end(), ws.begin(), ws.end());
  const std::int32_t aoff = store_args(all);
  Var r = push(Op::kWeightedMeanNorm, len);
  Node& n = nodes_.back();
  n.args_off = aoff;
  n.nargs = static_cast<std::int32_t>(xs.size());
  double* po = out(n);
  std::fill(po, po + len, 0.0);
  double denom = 1.0;
  for (std::int32_t k = 0; k < n.nargs; ++k) {
    const double w = *val(args_[static_cast<std::size_t>(aoff + n.nargs + k)]);
    const double* p = val(args_[static_cast<std::size_t>(aoff + k)]);
    for (std::int32_t i = 0; i < len; ++i) po[i] += p[i] * w;
    denom += w;
  }
  const double inv = 1.0 / denom;
  for (std::int32_t i = 0; i < len; ++i) po[i] *= inv;
  n.c0 = denom;
  return r;
}

Var Tape::l2_norm(Var x) {
  check_vec(x, "l2_norm");
  Var r = push(Op::kL2Norm, 1);
  Node& n = nodes_.back();
  n.a = x.id;
  const double* px = val(x.id);
  double acc = 0.0;
  for (std::int32_t i = 0; i < len_of(x.id); ++i) acc += px[i] * px[i];
  *out(n) = std::sqrt(acc);
  return r;
}

Var Tape::cosine(Var a, Var b) {
  const Node &na = node(a), &nb = node(b);
  if (na.len != nb.len) throw ShapeError("cosine: length mismatch");
  if (na.len == 0) throw ShapeError("cosine: empty operands");
  const double *pa = val(a.id), *pb = val(b.id);
  double dot = 0.0, qa = 0.0, qb = 0.0;
  for (std::int32_t i = 0; i < na.len; ++i) {
    dot += pa[i] * pb[i];
    qa += pa[i] * pa[i];
    qb += pb[i] * pb[i];
  }
  const double norm_a = std::sqrt(qa), norm_b = std::sqrt(qb);
  if (norm_a == 0.0 || norm_b == 0.0) {
    throw NumericError("cosine: zero-norm operand, score undefined");
  }
  Var r = push(Op::kCosine, 1);
  Node& n = nodes_.back();
  n.a = a.id;
  n.b = b.id;
  n.c0 = norm_a;
  n.c1 = norm_b;
  *out(n) = dot / (norm_a * norm_b);
  return r;
}

Var Tape::sum(Var x) {
  check_vec(x, "sum");
  Var r = push(Op::kSum, 1);
  Node& n = nodes_.back();
  n.a = x.id;
  const double* px = val(x.id);
  double acc = 0.0;
  for (std::int32_t i = 0; i < len_of(x.id); ++i) acc += px[i];
  *out(n) = acc;
  return r;
}

std::span<const double> Tape::value(Var v) const {
  const Node& n = node(v);
  return std::span(vals_.data() + n.off, static_cast<std::size_t>(n.len));
}

double Tape::scalar_value(Var v) const {
  const Node& n = node(v);
  if (n.len != 1) throw ShapeError("scalar_value: node is not a scalar");
  return vals_[static_cast<std::size_t>(n.off)];
}

Tensor Tape::tensor_value(Var v) const {
  auto s = value(v);
  return Tensor({s.size()}, std::vector<double>(s.begin(), s.end()));
}

void Tape::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.len != 1) throw ShapeError("backward: loss is not a scalar");
  grads_.assign(vals_.size(), 0.0);
  grads_[static_cast<std::size_t>(ln.off)] = 1.0;
  for (std::size_t i = static_cast<std::size_t>(loss.id) + 1; i-- > 0;) {
    backward_node(nodes_[i]);
  }
  grads_valid_ = true;
}

void Tape::backward_node(const Node& n) {
  const double* g = grads_.data() + n.off;
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kAdd: {
      double *ga = gradient(n.a), *gb = gradient(n.b);
      for (std::int32_t i = 0; i < n.len; ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
      break;
    }
    case Op::kSub: {
      double *ga = gradient(n.a), *gb = gradient(n.b);
      for (std::int32_t i = 0; i < n.len; ++i) {
        ga[i] += g[i];
        gb[i] -= g[i];
      }
      break;
    }
    case Op::kScaleAdd: {
      double* ga = gradient(n.a);
      for (std::int32_t i = 0; i < n.len; ++i) ga[i] += n.c0 * g[i];
      break;
    }
    case Op::kLerp: {
      double *ga = gradient(n.a), *gb = gradient(n.b);
      for (std::int32_t i = 0; i < n.len; ++i) {
        ga[i] += (1.0 - n.c0) * g[i];
        gb[i] += n.c0 * g[i];
      }
      break;
    }
    case Op::kMulScalar: {
      double* ga = gradient(n.a);
      double* gs = gradient(n.b);
      const double* pa = val(n.a);
      const double sv = *val(n.b);
      double acc = 0.0;
      for (std::int32_t i = 0; i < n.len; ++i) {
        ga[i] += g[i] * sv;
        acc += g[i] * pa[i];
      }
      *gs += acc;
      break;
    }
    case Op::kMatVec: {
      const std::int32_t rows = n.len;
      const std::int32_t cols = len_of(n.b);
      double* gw = gradient(n.a);
      double* gx = gradient(n.b);
      const double* pw = val(n.a);
      const double* px = val(n.b);
      for (std::int32_t i = 0; i < rows; ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        const double* row = pw + static_cast<std::size_t>(i) * cols;
        double* grow = gw + static_cast<std::size_t>(i) * cols;
        for (std::int32_t j = 0; j < cols; ++j) {
          grow[j] += gi * px[j];
          gx[j] += gi * row[j];
        }
      }
      break;
    }
    case Op::kConcat: {
      const double* gp = g;
      for (std::int32_t k = 0; k < n.nargs; ++k) {
        const std::int32_t id = args_[static_cast<std::size_t>(n.args_off + k)];
        const std::int32_t plen = len_of(id);
        double* gk = gradient(id);
        for (std::int32_t i = 0; i < plen; ++i) gk[i] += gp[i];
        gp += plen;
      }
      break;
    }
    case Op::kSigmoid: {
      double* ga = gradient(n.a);
      const double* po = vals_.data() + n.off;
      for (std::int32_t i = 0; i < n.len; ++i) {
        ga[i] += g[i] * po[i] * (1.0 - po[i]);
      }
      break;
    }
    case Op::kRelu: {
      double* ga = gradient(n.a);
      const double* pa = val(n.a);
      for (std::int32_t i = 0; i < n.len; ++i) {
        if (pa[i] > 0.0) ga[i] += g[i];
      }
      break;
    }
    case Op::kMaxPool: {
      const std::int32_t* am = aux_i_.data() + n.aux;
      for (std::int32_t i = 0; i < n.len; ++i) {
        const std::int32_t id =
            args_[static_cast<std::size_t>(n.args_off + am[i])];
        gradient(id)[i] += g[i];
      }
      break;
    }
    case Op::kMeanSorted: {
      const double inv = 1.0 / static_cast<double>(n.nargs);
      for (std::int32_t k = 0; k < n.nargs; ++k) {
        const std::int32_t id = args_[static_cast<std::size_t>(n.args_off + k)];
        double* gk = gradient(id);
        for (std::int32_t i = 0; i < n.len; ++i) gk[i] += g[i] * inv;
      }
      break;
    }
    case Op::kSumScaled: {
      for (std::int32_t k = 0; k < n.nargs; ++k) {
        const std::int32_t id = args_[static_cast<std::size_t>(n.args_off + k)];
        double* gk = gradient(id);
        for (std::int32_t i = 0; i < n.len; ++i) gk[i] += g[i] * n.c0;
      }
      break;
    }
    case Op::kWeightedMeanNorm: {
      // out = sum x_k w_k / D with D = 1 + sum w_k (stored in c0).
      // dx_k = g * w_k / D;  dw_k = g . (x_k - out) / D.
      const double inv = 1.0 / n.c0;
      const double* po = vals_.data() + n.off;
      for (std::int32_t k = 0; k < n.nargs; ++k) {
        const std::int32_t xid = args_[static_cast<std::size_t>(n.args_off + k)];
        const std::int32_t wid =
            args_[static_cast<std::size_t>(n.args_off + n.nargs + k)];
        const double w = *val(wid);
        const double* px = val(xid);
        double* gx = gradient(xid);
        double acc = 0.0;
        for (std::int32_t i = 0; i < n.len; ++i) {
          gx[i] += g[i] * w * inv;
          acc += g[i] * (px[i] - po[i]);
        }
        *gradient(wid) += acc * inv;
      }
      break;
    }
    case Op::kL2Norm: {
      const double norm = vals_[static_cast<std::size_t>(n.off)];
      if (norm == 0.0) break;  // subgradient 0 at the origin
      double* ga = gradient(n.a);
      const double* pa = val(n.a);
      const double s = g[0] / norm;
      for (std::int32_t i = 0; i < len_of(n.a); ++i) ga[i] += s * pa[i];
      break;
    }
    case Op::kCosine: {
      const double cosv = vals_[static_cast<std::size_t>(n.off)];
      const double na = n.c0, nb = n.c1;
      const double* pa = val(n.a);
      const double* pb = val(n.b);
      double* ga = gradient(n.a);
      double* gb = gradient(n.b);
      const double g0 = g[0];
      const double inv_ab = 1.0 / (na * nb);
      const double ca = cosv / (na * na);
      const double cb = cosv / (nb * nb);
      for (std::int32_t i = 0; i < len_of(n.a); ++i) {
        ga[i] += g0 * (pb[i] * inv_ab - ca * pa[i]);
        gb[i] += g0 * (pa[i] * inv_ab - cb * pb[i]);
      }
      break;
    }
    case Op::kSum: {
      double* ga = gradient(n.a);
      const double g0 = g[0];
      for (std::int32_t i = 0; i < len_of(n.a); ++i) ga[i] += g0;
      break;
    }
  }
}

std::span<const double> Tape::grad(Var v) const {
  if (!grads_valid_) throw StateError("tape: grad() before backward()");
  const Node& n = node(v);
  return std::span(grads_.data() + n.off, static_cast<std::size_t>(n.len));
}

void Tape::accumulate_param_grads() {
  if (!grads_valid_) throw StateError("tape: gradients not computed");
  for (auto& [p, id] : bindings_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const double* g = grads_.data() + n.off;
    double* dst = p->grad.data();
    for (std::int32_t i = 0; i < n.len; ++i) dst[i] += g[i];
  }
}

void Tape::reset() {
  nodes_.clear();
  vals_.clear();
  grads_.clear();
  args_.clear();
  aux_i_.clear();
  bindings_.clear();
  binding_cache_.clear();
  grads_valid_ = false;
}

}  // namespace safer
