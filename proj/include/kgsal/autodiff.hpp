#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace kgsal::ad {

// Reverse-mode tape over double vectors. Values are computed eagerly when an
// op is recorded; backward() runs the adjoint sweep. Parameter leaves are
// recorded first and survive reset_to(mark); per-instance nodes are truncated
// between steps, so the arenas are reused without reallocation.
//
// Single-threaded by construction. All math is in double precision with a
// fixed evaluation order, so results are bit-reproducible.

struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

struct DegenerateMaskError : std::runtime_error {
  DegenerateMaskError() : std::runtime_error("attention mask has no surviving units") {}
};

class Tape {
 public:
  Tape() = default;

  // --- leaves -------------------------------------------------------------
  Var leaf(std::span<const double> data);
  Var leaf_zeros(int n);

  // --- elementwise / linear ops --------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double c);
  Var cmul(Var a, Var b);
  Var tanh_(Var a);
  Var sigmoid_(Var a);
  Var log_(Var a);
  Var dot(Var a, Var b);                     // -> size 1
  Var matvec(Var w, Var x, int rows);        // w is row-major rows x |x|
  Var concat(Var a, Var b);
  Var row(Var table, int r, int row_size);   // copy one row of an embedding table
  Var sum_many(std::span<const Var> xs);     // same-size vectors
  Var mean_many(std::span<const Var> xs);
  Var pick(Var a, int index);                // -> size 1
  Var sum_elems(Var a);                      // -> size 1

  // --- attention / loss ops -------------------------------------------------
  Var softmax(Var scores);
  // weights in [0,1]; exact zeros for zeroed units, survivors renormalized.
  // Throws DegenerateMaskError if nothing survives.
  Var masked_softmax(Var scores, std::span<const double> weights);
  Var weighted_sum(Var weights, std::span<const Var> items);
  Var stack_scalars(std::span<const Var> scalars);
  Var cross_entropy_logits(Var logits, int target);      // -> size 1
  Var kl_to_target(std::span<const double> target, Var q);  // sum t*ln(t/q) -> size 1
  Var bce(Var p, double y);                              // p size 1 in (0,1)

  // --- access ----------------------------------------------------------------
  int size(Var v) const { return nodes_[v.i].size; }
  std::span<const double> value(Var v) const;
  std::span<double> value_mut(Var v);
  std::span<const double> grad(Var v) const;
  double scalar(Var v) const;

  // --- autodiff ----------------------------------------------------------------
  // Accumulates into existing grads; zero the relevant regions first.
  void backward(Var f, double seed = 1.0);
  void zero_all_grads();
  void zero_grads_from(int mark);

  // --- lifetime ----------------------------------------------------------------
  int mark() const { return static_cast<int>(nodes_.size()); }
  void reset_to(int mark);

 private:
  enum class Op : uint8_t {
    kLeaf, kAdd, kSub, kScale, kCMul, kTanh, kSigmoid, kLog, kDot, kMatVec,
    kConcat, kRow, kSumMany, kPick, kSumElems, kSoftmax, kMaskedSoftmax,
    kWeightedSum, kStackScalars, kCrossEntropyLogits, kKlToTarget, kBce,
  };

  struct Node {
    Op op;
    int off = 0;       // offset into values_/grads_
    int size = 0;
    int a0 = -1;       // child vars
    int a1 = -1;
    int args_off = 0;  // extra children in args_
    int n_args = 0;
    int aux_off = 0;   // per-op doubles in aux_
    int idx = 0;       // row index / pick index / CE target / matvec rows
    double c = 0.0;
  };

  Var push(Op op, int out_size, int a0 = -1, int a1 = -1);
  int push_args(std::span<const Var> vars);
  int push_aux(std::span<const double> data);
  double* val(int node) { return values_.data() + nodes_[node].off; }
  const double* val(int node) const { return values_.data() + nodes_[node].off; }
  double* grd(int node) { return grads_.data() + nodes_[node].off; }

  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> grads_;
  std::vector<int> args_;
  std::vector<double> aux_;
  size_t mark_values_ = 0;
  size_t mark_args_ = 0;
  size_t mark_aux_ = 0;
  int mark_nodes_ = 0;
};

}  // namespace kgsal::ad
