#include "kgsal/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace kgsal::ad {

Var Tape::push(Op op, int out_size, int a0, int a1) {
  Node n;
  n.op = op;
  n.off = static_cast<int>(values_.size());
  n.size = out_size;
  n.a0 = a0;
  n.a1 = a1;
  n.args_off = static_cast<int>(args_.size());
  n.aux_off = static_cast<int>(aux_.size());
  values_.resize(values_.size() + out_size, 0.0);
  grads_.resize(grads_.size() + out_size, 0.0);
  nodes_.push_back(n);
  return Var{static_cast<int>(nodes_.size()) - 1};
}

int Tape::push_args(std::span<const Var> vars) {
  const int off = static_cast<int>(args_.size());
  for (Var v : vars) args_.push_back(v.i);
  return off;
}

int Tape::push_aux(std::span<const double> data) {
  const int off = static_cast<int>(aux_.size());
  aux_.insert(aux_.end(), data.begin(), data.end());
  return off;
}

std::span<const double> Tape::value(Var v) const {
  const Node& n = nodes_[v.i];
  return {values_.data() + n.off, static_cast<size_t>(n.size)};
}

std::span<double> Tape::value_mut(Var v) {
  const Node& n = nodes_[v.i];
  return {values_.data() + n.off, static_cast<size_t>(n.size)};
}

std::span<const double> Tape::grad(Var v) const {
  const Node& n = nodes_[v.i];
  return {grads_.data() + n.off, static_cast<size_t>(n.size)};
}

double Tape::scalar(Var v) const {
  return values_[nodes_[v.i].off];
}

// ---------------------------------------------------------------------------
// ops

Var Tape::leaf(std::span<const double> data) {
  Var v = push(Op::kLeaf, static_cast<int>(data.size()));
  std::copy(data.begin(), data.end(), val(v.i));
  return v;
}

Var Tape::leaf_zeros(int n) { return push(Op::kLeaf, n); }

Var Tape::add(Var a, Var b) {
  const int n = size(a);
  Var v = push(Op::kAdd, n, a.i, b.i);
  const double* pa = val(a.i);
  const double* pb = val(b.i);
  double* o = val(v.i);
  for (int i = 0; i < n; ++i) o[i] = pa[i] + pb[i];
  return v;
}

Var Tape::sub(Var a, Var b) {
  const int n = size(a);
  Var v = push(Op::kSub, n, a.i, b.i);
  const double* pa = val(a.i);
  const double* pb = val(b.i);
  double* o = val(v.i);
  for (int i = 0; i < n; ++i) o[i] = pa[i] - pb[i];
  return v;
}

Var Tape::scale(Var a, double c) {
  const int n = size(a);
  Var v = push(Op::kScale, n, a.i);
  nodes_[v.i].c = c;
  const double* pa = val(a.i);
  double* o = val(v.i);
  for (int i = 0; i < n; ++i) o[i] = c * pa[i];
  return v;
}

Var Tape::cmul(Var a, Var b) {
  const int n = size(a);
  Var v = push(Op::kCMul, n, a.i, b.i);
  const double* pa = val(a.i);
  const double* pb = val(b.i);
  double* o = val(v.i);
  for (int i = 0; i < n; ++i) o[i] = pa[i] * pb[i];
  return v;
}

Var Tape::tanh_(Var a) {
  const int n = size(a);
  Var v = push(Op::kTanh, n, a.i);
  const double* pa = val(a.i);
  double* o = val(v.i);
  for (int i = 0; i < n; ++i) o[i] = std::tanh(pa[i]);
  return v;
}

Var Tape::sigmoid_(Var a) {
  const int n = size(a);
  Var v = push(Op::kSigmoid, n, a.i);
  const double* pa = val(a.i);
  double* o = val(v.i);
  for (int i = 0; i < n; ++i) o[i] = 1.0 / (1.0 + std::exp(-pa[i]));
  return v;
}

Var Tape::log_(Var a) {
  const int n = size(a);
  Var v = push(Op::kLog, n, a.i);
  const double* pa = val(a.i);
  double* o = val(v.i);
  for (int i = 0; i < n; ++i) o[i] = std::log(pa[i]);
  return v;
}

Var Tape::dot(Var a, Var b) {
  const int n = size(a);
  Var v = push(Op::kDot, 1, a.i, b.i);
  const double* pa = val(a.i);
  const double* pb = val(b.i);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += pa[i] * pb[i];
  *val(v.i) = acc;
  return v;
}

Var Tape::matvec(Var w, Var x, int rows) {
  const int cols = size(x);
  Var v = push(Op::kMatVec, rows, w.i, x.i);
  nodes_[v.i].idx = rows;
  const double* pw = val(w.i);
  const double* px = val(x.i);
  double* o = val(v.i);
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* wr = pw + r * cols;
    for (int c = 0; c < cols; ++c) acc += wr[c] * px[c];
    o[r] = acc;
  }
  return v;
}

Var Tape::concat(Var a, Var b) {
  const int na = size(a), nb = size(b);
  Var v = push(Op::kConcat, na + nb, a.i, b.i);
  const double* pa = val(a.i);
  const double* pb = val(b.i);
  double* o = val(v.i);
  std::copy(pa, pa + na, o);
  std::copy(pb, pb + nb, o + na);
  return v;
}

Var Tape::row(Var table, int r, int row_size) {
  Var v = push(Op::kRow, row_size, table.i);
  nodes_[v.i].idx = r;
  const double* src = val(table.i) + r * row_size;
  std::copy(src, src + row_size, val(v.i));
  return v;
}

Var Tape::sum_many(std::span<const Var> xs) {
  const int n = size(xs.front());
  const int args_off = push_args(xs);
  Var v = push(Op::kSumMany, n);
  nodes_[v.i].args_off = args_off;
  nodes_[v.i].n_args = static_cast<int>(xs.size());
  double* o = val(v.i);
  for (Var x : xs) {
    const double* px = val(x.i);
    for (int i = 0; i < n; ++i) o[i] += px[i];
  }
  return v;
}

Var Tape::mean_many(std::span<const Var> xs) {
  return scale(sum_many(xs), 1.0 / static_cast<double>(xs.size()));
}

Var Tape::pick(Var a, int index) {
  Var v = push(Op::kPick, 1, a.i);
  nodes_[v.i].idx = index;
  *val(v.i) = val(a.i)[index];
  return v;
}

Var Tape::sum_elems(Var a) {
  Var v = push(Op::kSumElems, 1, a.i);
  const double* pa = val(a.i);
  double acc = 0.0;
  for (int i = 0; i < size(a); ++i) acc += pa[i];
  *val(v.i) = acc;
  return v;
}

Var Tape::softmax(Var scores) {
  const int n = size(scores);
  Var v = push(Op::kSoftmax, n, scores.i);
  const double* ps = val(scores.i);
  double* o = val(v.i);
  double mx = ps[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, ps[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    o[i] = std::exp(ps[i] - mx);
    z += o[i];
  }
  for (int i = 0; i < n; ++i) o[i] /= z;
  return v;
}

Var Tape::masked_softmax(Var scores, std::span<const double> weights) {
  const int n = size(scores);
  const int aux_off = push_aux(weights);
  Var v = push(Op::kMaskedSoftmax, n, scores.i);
  nodes_[v.i].aux_off = aux_off;
  const double* ps = val(scores.i);
  double* o = val(v.i);
  double mx = -1e300;
  bool any = false;
  for (int i = 0; i < n; ++i) {
    if (weights[i] > 0.0) {
      mx = any ? std::max(mx, ps[i]) : ps[i];
      any = true;
    }
  }
  if (!any) throw DegenerateMaskError();
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    o[i] = weights[i] > 0.0 ? weights[i] * std::exp(ps[i] - mx) : 0.0;
    z += o[i];
  }
  for (int i = 0; i < n; ++i) o[i] /= z;
  return v;
}

Var Tape::weighted_sum(Var weights, std::span<const Var> items) {
  const int d = size(items.front());
  const int args_off = push_args(items);
  Var v = push(Op::kWeightedSum, d, weights.i);
  nodes_[v.i].args_off = args_off;
  nodes_[v.i].n_args = static_cast<int>(items.size());
  const double* pw = val(weights.i);
  double* o = val(v.i);
  for (size_t u = 0; u < items.size(); ++u) {
    const double* pi = val(items[u].i);
    for (int i = 0; i < d; ++i) o[i] += pw[u] * pi[i];
  }
  return v;
}

Var Tape::stack_scalars(std::span<const Var> scalars) {
  const int args_off = push_args(scalars);
  Var v = push(Op::kStackScalars, static_cast<int>(scalars.size()));
  nodes_[v.i].args_off = args_off;
  nodes_[v.i].n_args = static_cast<int>(scalars.size());
  double* o = val(v.i);
  for (size_t i = 0; i < scalars.size(); ++i) o[i] = *val(scalars[i].i);
  return v;
}

Var Tape::cross_entropy_logits(Var logits, int target) {
  const int n = size(logits);
  const double* pl = val(logits.i);
  // cache the softmax for the backward pass
  std::vector<double> p(n);
  double mx = pl[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, pl[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    p[i] = std::exp(pl[i] - mx);
    z += p[i];
  }
  for (int i = 0; i < n; ++i) p[i] /= z;
  const int aux_off = push_aux(p);
  Var v = push(Op::kCrossEntropyLogits, 1, logits.i);
  nodes_[v.i].aux_off = aux_off;
  nodes_[v.i].idx = target;
  *val(v.i) = std::log(z) + mx - pl[target];
  return v;
}

Var Tape::kl_to_target(std::span<const double> target, Var q) {
  const int n = size(q);
  const int aux_off = push_aux(target);
  Var v = push(Op::kKlToTarget, 1, q.i);
  nodes_[v.i].aux_off = aux_off;
  const double* pq = val(q.i);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    if (target[i] > 0.0) {
      if (pq[i] <= 0.0) {
        throw std::runtime_error("kl_to_target: zero predicted mass on a positive unit");
      }
      acc += target[i] * (std::log(target[i]) - std::log(pq[i]));
    }
  }
  *val(v.i) = acc;
  return v;
}

Var Tape::bce(Var p, double y) {
  Var v = push(Op::kBce, 1, p.i);
  nodes_[v.i].c = y;
  const double pv = *val(p.i);
  const double eps = 1e-300;
  *val(v.i) = -(y * std::log(std::max(pv, eps)) +
                (1.0 - y) * std::log(std::max(1.0 - pv, eps)));
  return v;
}

// ---------------------------------------------------------------------------
// backward

void Tape::backward(Var f, double seed) {
  grads_[nodes_[f.i].off] += seed;
  for (int i = f.i; i >= 0; --i) {
    const Node& n = nodes_[i];
    const double* g = grads_.data() + n.off;
    bool all_zero = true;
    for (int k = 0; k < n.size && all_zero; ++k) all_zero = g[k] == 0.0;
    if (all_zero) continue;

    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd: {
        double* ga = grd(n.a0);
        double* gb = grd(n.a1);
        for (int k = 0; k < n.size; ++k) {
          ga[k] += g[k];
          gb[k] += g[k];
        }
        break;
      }
      case Op::kSub: {
        double* ga = grd(n.a0);
        double* gb = grd(n.a1);
        for (int k = 0; k < n.size; ++k) {
          ga[k] += g[k];
          gb[k] -= g[k];
        }
        break;
      }
      case Op::kScale: {
        double* ga = grd(n.a0);
        for (int k = 0; k < n.size; ++k) ga[k] += n.c * g[k];
        break;
      }
      case Op::kCMul: {
        double* ga = grd(n.a0);
        double* gb = grd(n.a1);
        const double* pa = val(n.a0);
        const double* pb = val(n.a1);
        for (int k = 0; k < n.size; ++k) {
          ga[k] += pb[k] * g[k];
          gb[k] += pa[k] * g[k];
        }
        break;
      }
      case Op::kTanh: {
        double* ga = grd(n.a0);
        const double* y = val(i);
        for (int k = 0; k < n.size; ++k) ga[k] += (1.0 - y[k] * y[k]) * g[k];
        break;
      }
      case Op::kSigmoid: {
        double* ga = grd(n.a0);
        const double* y = val(i);
        for (int k = 0; k < n.size; ++k) ga[k] += y[k] * (1.0 - y[k]) * g[k];
        break;
      }
      case Op::kLog: {
        double* ga = grd(n.a0);
        const double* x = val(n.a0);
        for (int k = 0; k < n.size; ++k) ga[k] += g[k] / x[k];
        break;
      }
      case Op::kDot: {
        double* ga = grd(n.a0);
        double* gb = grd(n.a1);
        const double* pa = val(n.a0);
        const double* pb = val(n.a1);
        const int m = nodes_[n.a0].size;
        const double gs = g[0];
        for (int k = 0; k < m; ++k) {
          ga[k] += pb[k] * gs;
          gb[k] += pa[k] * gs;
        }
        break;
      }
      case Op::kMatVec: {
        const int rows = n.idx;
        const int cols = nodes_[n.a1].size;
        double* gw = grd(n.a0);
        double* gx = grd(n.a1);
        const double* pw = val(n.a0);
        const double* px = val(n.a1);
        for (int r = 0; r < rows; ++r) {
          const double gr = g[r];
          if (gr == 0.0) continue;
          double* gwr = gw + r * cols;
          const double* pwr = pw + r * cols;
          for (int c = 0; c < cols; ++c) {
            gwr[c] += gr * px[c];
            gx[c] += gr * pwr[c];
          }
        }
        break;
      }
      case Op::kConcat: {
        const int na = nodes_[n.a0].size;
        double* ga = grd(n.a0);
        double* gb = grd(n.a1);
        for (int k = 0; k < na; ++k) ga[k] += g[k];
        for (int k = 0; k < n.size - na; ++k) gb[k] += g[na + k];
        break;
      }
      case Op::kRow: {
        double* gt = grd(n.a0) + n.idx * n.size;
        for (int k = 0; k < n.size; ++k) gt[k] += g[k];
        break;
      }
      case Op::kSumMany: {
        for (int a = 0; a < n.n_args; ++a) {
          double* ga = grd(args_[n.args_off + a]);
          for (int k = 0; k < n.size; ++k) ga[k] += g[k];
        }
        break;
      }
      case Op::kPick: {
        grd(n.a0)[n.idx] += g[0];
        break;
      }
      case Op::kSumElems: {
        double* ga = grd(n.a0);
        const int m = nodes_[n.a0].size;
        for (int k = 0; k < m; ++k) ga[k] += g[0];
        break;
      }
      case Op::kSoftmax:
      case Op::kMaskedSoftmax: {
        double* ga = grd(n.a0);
        const double* y = val(i);
        double dot_gy = 0.0;
        for (int k = 0; k < n.size; ++k) dot_gy += g[k] * y[k];
        for (int k = 0; k < n.size; ++k) ga[k] += y[k] * (g[k] - dot_gy);
        break;
      }
      case Op::kWeightedSum: {
        double* gw = grd(n.a0);
        const double* pw = val(n.a0);
        for (int a = 0; a < n.n_args; ++a) {
          const int item = args_[n.args_off + a];
          double* gi = grd(item);
          const double* pi = val(item);
          double acc = 0.0;
          for (int k = 0; k < n.size; ++k) {
            acc += g[k] * pi[k];
            gi[k] += pw[a] * g[k];
          }
          gw[a] += acc;
        }
        break;
      }
      case Op::kStackScalars: {
        for (int a = 0; a < n.n_args; ++a) {
          grd(args_[n.args_off + a])[0] += g[a];
        }
        break;
      }
      case Op::kCrossEntropyLogits: {
        double* ga = grd(n.a0);
        const double* p = aux_.data() + n.aux_off;
        const int m = nodes_[n.a0].size;
        const double gs = g[0];
        for (int k = 0; k < m; ++k) {
          ga[k] += gs * (p[k] - (k == n.idx ? 1.0 : 0.0));
        }
        break;
      }
      case Op::kKlToTarget: {
        double* ga = grd(n.a0);
        const double* t = aux_.data() + n.aux_off;
        const double* q = val(n.a0);
        const int m = nodes_[n.a0].size;
        const double gs = g[0];
        for (int k = 0; k < m; ++k) {
          if (t[k] > 0.0) ga[k] -= gs * t[k] / q[k];
        }
        break;
      }
      case Op::kBce: {
        const double pv = *val(n.a0);
        const double y = n.c;
        const double eps = 1e-12;
        grd(n.a0)[0] += g[0] * (-(y / std::max(pv, eps)) +
                                (1.0 - y) / std::max(1.0 - pv, eps));
        break;
      }
    }
  }
}

void Tape::zero_all_grads() {
  std::fill(grads_.begin(), grads_.end(), 0.0);
}

void Tape::zero_grads_from(int mark) {
  const size_t off = mark == 0 ? 0
                               : static_cast<size_t>(nodes_[mark - 1].off) +
                                     static_cast<size_t>(nodes_[mark - 1].size);
  std::fill(grads_.begin() + off, grads_.end(), 0.0);
}

void Tape::reset_to(int mark) {
  if (mark < 0 || mark > static_cast<int>(nodes_.size())) {
    throw std::logic_error("Tape::reset_to: bad mark");
  }
  if (mark == static_cast<int>(nodes_.size())) return;
  size_t vsize = 0, asize = 0, xsize = 0;
  if (mark > 0) {
    const Node& last = nodes_[mark - 1];
    vsize = static_cast<size_t>(last.off) + last.size;
    asize = static_cast<size_t>(last.args_off) + last.n_args;
    // aux extent of the last retained node: scan is avoided because aux_off is
    // monotone; the next node's aux_off (the first dropped one) bounds it.
    xsize = static_cast<size_t>(nodes_[mark].aux_off);
  }
  nodes_.resize(mark);
  values_.resize(vsize);
  grads_.resize(vsize);
  args_.resize(asize);
  aux_.resize(xsize);
}

}  // namespace kgsal::ad
