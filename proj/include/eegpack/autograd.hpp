#pragma once
// Reverse-mode automatic differentiation on a dynamic tape.
//
// Every op's backward is itself expressed through ops, so gradients can be
// differentiated again (needed for gradient penalties). Recording is
// controlled by a thread-local flag; inside NoGradGuard the same ops run as
// plain tensor math with no graph.

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "eegpack/tensor.hpp"

namespace eegpack::nn {

class Var;

using BackwardFn = std::function<std::vector<Var>(const Var& grad_out)>;

struct VarNode {
  Tensor value;
  bool requires_grad = false;
  std::vector<Var> parents;
  BackwardFn backward;  // empty for leaves
  std::uint64_t seq = 0;
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::vector<long>& shape() const { return value().shape(); }

  // Same value, cut off from the graph.
  Var detach() const { return Var(node_->value, false); }

  VarNode* node() const { return node_.get(); }
  std::shared_ptr<VarNode> node_ptr() const { return node_; }

 private:
  explicit Var(std::shared_ptr<VarNode> n) : node_(std::move(n)) {}
  std::shared_ptr<VarNode> node_;
  friend Var make_op(Tensor, std::vector<Var>, BackwardFn);
};

bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Records an op node when grad is enabled and any parent requires grad;
// otherwise returns a constant.
Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward);

// d(output)/d(inputs) for a scalar output. With create_graph the returned
// Vars carry their own graph and can be differentiated again. Inputs that
// the output does not depend on get zero gradients.
std::vector<Var> backprop(const Var& output, const std::vector<Var>& inputs, bool create_graph);

// Convenience: plain tensors, no second-order graph.
std::vector<Tensor> gradients(const Var& output, const std::vector<Var>& inputs);

// ---------------------------------------------------------------------------
// Primitive ops. Shapes follow Tensor::mat(): leading dims are rows, the
// trailing dim is columns. All ops preserve that convention.
// ---------------------------------------------------------------------------

// Elementwise / scalar.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var exp_op(const Var& a);
Var log_op(const Var& a);
Var sqrt_op(const Var& a);
Var recip(const Var& a);
Var tanh_op(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var softplus(const Var& a);
// y = a .* mul_coeff + add_coeff, both coefficients constant tensors.
Var affine_const(const Var& a, const Tensor& mul_coeff, const Tensor& add_coeff);

// Matrix.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, std::vector<long> shape);

// Broadcast / reductions.
Var add_rowvec(const Var& x, const Var& b);    // {m,n} + {n}
Var mul_colvec(const Var& x, const Var& v);    // row i of x scaled by v[i]
Var row_sum(const Var& x);                     // {m,n} -> {m}
Var col_sum(const Var& x);                     // {m,n} -> {n}
Var broadcast_col(const Var& v, long n);       // {m} -> {m,n}
Var broadcast_row(const Var& v, long m);       // {n} -> {m,n}
Var sum_all(const Var& x);                     // -> {1}
Var mean_all(const Var& x);                    // -> {1}
Var broadcast_scalar(const Var& s, std::vector<long> shape);

// Row indexing. index -1 selects an implicit zero row (gather) or drops the
// row (scatter). scatter_rows adds rows that share a target index.
Var gather_rows(const Var& x, std::vector<long> indices);
Var scatter_rows(const Var& x, std::vector<long> indices, long out_rows);

// Column slicing / concatenation.
Var slice_cols(const Var& x, long c0, long c1);
Var embed_cols(const Var& x, long c0, long total_cols);  // zero-pad columns
Var concat_cols(const std::vector<Var>& parts);

// Layout change {B,C,N} -> {B*N, C} (row (b*N+n) holds timestep n of item b).
Var bcn_to_bnc(const Var& x);

// Composites (built from primitives, differentiable to any order the
// primitives support).
Var row_l2_normalize(const Var& x, double eps = 1e-12);
// Mean cross-entropy of rows of `logits` against integer `labels`.
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);
// Row-wise softmax probabilities.
Var softmax_rows(const Var& logits);

}  // namespace eegpack::nn
