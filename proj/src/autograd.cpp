#include "eegpack/autograd.hpp"

#include <atomic>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace eegpack::nn {

namespace {
thread_local int nograd_depth = 0;
std::atomic<std::uint64_t> next_seq{1};
}  // namespace

bool grad_enabled() { return nograd_depth == 0; }

NoGradGuard::NoGradGuard() { ++nograd_depth; }
NoGradGuard::~NoGradGuard() { --nograd_depth; }

Var::Var(Tensor value, bool requires_grad) {
  node_ = std::make_shared<VarNode>();
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->seq = next_seq.fetch_add(1, std::memory_order_relaxed);
}

Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents)
      if (p.requires_grad()) {
        needs = true;
        break;
      }
  }
  if (!needs) return Var(std::move(value), false);
  auto node = std::make_shared<VarNode>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->parents = std::move(parents);
  node->backward = std::move(backward);
  node->seq = next_seq.fetch_add(1, std::memory_order_relaxed);
  return Var(std::move(node));
}

// ---------------------------------------------------------------------------
// Backprop
// ---------------------------------------------------------------------------

static std::vector<Var> backprop_impl(const Var& output, const std::vector<Var>& inputs) {
  if (output.value().size() != 1)
    throw std::logic_error("backprop: output must be scalar");

  // Topological order, parents before children.
  std::vector<VarNode*> order;
  std::unordered_set<VarNode*> seen;
  {
    struct Frame {
      VarNode* node;
      std::size_t next_parent;
    };
    std::vector<Frame> stack;
    if (output.requires_grad()) stack.push_back({output.node(), 0});
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent == 0 && seen.count(f.node)) {
        stack.pop_back();
        continue;
      }
      if (f.next_parent < f.node->parents.size()) {
        VarNode* p = f.node->parents[f.next_parent].node();
        ++f.next_parent;
        if (p->requires_grad && !seen.count(p)) stack.push_back({p, 0});
      } else {
        seen.insert(f.node);
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }

  std::unordered_map<VarNode*, Var> grads;
  if (output.requires_grad())
    grads.emplace(output.node(), Var(Tensor::full(output.value().shape(), 1.0)));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    VarNode* node = *it;
    auto git = grads.find(node);
    if (git == grads.end()) continue;  // unreachable from output
    if (!node->backward) continue;     // leaf
    std::vector<Var> parent_grads = node->backward(git->second);
    if (parent_grads.size() != node->parents.size())
      throw std::logic_error("backward arity mismatch");
    for (std::size_t i = 0; i < parent_grads.size(); ++i) {
      const Var& p = node->parents[i];
      if (!p.requires_grad() || !parent_grads[i].defined()) continue;
      auto pit = grads.find(p.node());
      if (pit == grads.end())
        grads.emplace(p.node(), parent_grads[i]);
      else
        pit->second = add(pit->second, parent_grads[i]);
    }
  }

  std::vector<Var> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto it = grads.find(in.node());
    if (it == grads.end())
      out.emplace_back(Tensor::zeros(in.value().shape()));
    else
      out.push_back(it->second);
  }
  return out;
}

std::vector<Var> backprop(const Var& output, const std::vector<Var>& inputs, bool create_graph) {
  if (create_graph) return backprop_impl(output, inputs);
  NoGradGuard guard;
  return backprop_impl(output, inputs);
}

std::vector<Tensor> gradients(const Var& output, const std::vector<Var>& inputs) {
  auto vars = backprop(output, inputs, false);
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (auto& v : vars) out.push_back(v.value());
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

static void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor v(a.value().shape(), a.value().raw() + b.value().raw());
  return make_op(std::move(v), {a, b}, [](const Var& g) {
    return std::vector<Var>{g, g};
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor v(a.value().shape(), a.value().raw() - b.value().raw());
  return make_op(std::move(v), {a, b}, [](const Var& g) {
    return std::vector<Var>{g, neg(g)};
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor v(a.value().shape(), a.value().raw() * b.value().raw());
  return make_op(std::move(v), {a, b}, [a, b](const Var& g) {
    return std::vector<Var>{mul(g, b), mul(g, a)};
  });
}

Var neg(const Var& a) {
  Tensor v(a.value().shape(), -a.value().raw());
  return make_op(std::move(v), {a}, [](const Var& g) {
    return std::vector<Var>{neg(g)};
  });
}

Var scale(const Var& a, double s) {
  Tensor v(a.value().shape(), a.value().raw() * s);
  return make_op(std::move(v), {a}, [s](const Var& g) {
    return std::vector<Var>{scale(g, s)};
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor v(a.value().shape(), a.value().raw() + s);
  return make_op(std::move(v), {a}, [](const Var& g) {
    return std::vector<Var>{g};
  });
}

Var exp_op(const Var& a) {
  Tensor v(a.value().shape(), a.value().raw().exp());
  return make_op(std::move(v), {a}, [a](const Var& g) {
    return std::vector<Var>{mul(g, exp_op(a))};
  });
}

Var log_op(const Var& a) {
  Tensor v(a.value().shape(), a.value().raw().log());
  return make_op(std::move(v), {a}, [a](const Var& g) {
    return std::vector<Var>{mul(g, recip(a))};
  });
}

Var sqrt_op(const Var& a) {
  Tensor v(a.value().shape(), a.value().raw().sqrt());
  return make_op(std::move(v), {a}, [a](const Var& g) {
    return std::vector<Var>{scale(mul(g, recip(sqrt_op(a))), 0.5)};
  });
}

Var recip(const Var& a) {
  Tensor v(a.value().shape(), a.value().raw().inverse());
  return make_op(std::move(v), {a}, [a](const Var& g) {
    Var r = recip(a);
    return std::vector<Var>{neg(mul(g, mul(r, r)))};
  });
}

Var tanh_op(const Var& a) {
  Tensor v(a.value().shape(), a.value().raw().tanh());
  return make_op(std::move(v), {a}, [a](const Var& g) {
    Var y = tanh_op(a);
    Var one_minus = add_scalar(neg(mul(y, y)), 1.0);
    return std::vector<Var>{mul(g, one_minus)};
  });
}

Var sigmoid(const Var& a) {
  Tensor v(a.value().shape(), 0.5 * ((0.5 * a.value().raw()).tanh() + 1.0));
  return make_op(std::move(v), {a}, [a](const Var& g) {
    Var y = sigmoid(a);
    Var dy = mul(y, add_scalar(neg(y), 1.0));
    return std::vector<Var>{mul(g, dy)};
  });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var leaky_relu(const Var& a, double slope) {
  Tensor v(a.value().shape(),
           (a.value().raw() > 0.0).select(a.value().raw(), a.value().raw() * slope));
  return make_op(std::move(v), {a}, [a, slope](const Var& g) {
    // Derivative mask is piecewise constant; treated as a constant tensor.
    Tensor mask(a.value().shape(),
                (a.value().raw() > 0.0)
                    .select(Eigen::ArrayXd::Ones(a.value().size()),
                            Eigen::ArrayXd::Constant(a.value().size(), slope)));
    return std::vector<Var>{affine_const(g, mask, Tensor::zeros(g.value().shape()))};
  });
}

Var softplus(const Var& a) {
  // log(1 + e^x), computed stably.
  Eigen::ArrayXd x = a.value().raw();
  Eigen::ArrayXd v = x.max(0.0) + (-x.abs()).exp().log1p();
  return make_op(Tensor(a.value().shape(), std::move(v)), {a}, [a](const Var& g) {
    return std::vector<Var>{mul(g, sigmoid(a))};
  });
}

Var affine_const(const Var& a, const Tensor& mul_coeff, const Tensor& add_coeff) {
  if (!a.value().same_shape(mul_coeff) || !a.value().same_shape(add_coeff))
    throw std::invalid_argument("affine_const: shape mismatch");
  Tensor v(a.value().shape(), a.value().raw() * mul_coeff.raw() + add_coeff.raw());
  return make_op(std::move(v), {a}, [mul_coeff](const Var& g) {
    return std::vector<Var>{affine_const(g, mul_coeff, Tensor::zeros(mul_coeff.shape()))};
  });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.value().cols() != b.value().rows())
    throw std::invalid_argument("matmul: inner dimension mismatch");
  Tensor v({a.value().rows(), b.value().cols()});
  v.mat().noalias() = a.value().mat() * b.value().mat();
  return make_op(std::move(v), {a, b}, [a, b](const Var& g) {
    return std::vector<Var>{matmul(g, transpose(b)), matmul(transpose(a), g)};
  });
}

Var transpose(const Var& a) {
  Tensor v({a.value().cols(), a.value().rows()});
  v.mat() = a.value().mat().transpose();
  return make_op(std::move(v), {a}, [](const Var& g) {
    return std::vector<Var>{transpose(g)};
  });
}

Var reshape(const Var& a, std::vector<long> shape) {
  Tensor v = a.value().reshaped(std::move(shape));
  auto prev = a.value().shape();
  return make_op(std::move(v), {a}, [prev](const Var& g) {
    return std::vector<Var>{reshape(g, prev)};
  });
}

// ---------------------------------------------------------------------------
// Broadcast / reductions
// ---------------------------------------------------------------------------

Var add_rowvec(const Var& x, const Var& b) {
  if (b.value().size() != x.value().cols())
    throw std::invalid_argument("add_rowvec: width mismatch");
  Tensor v({x.value().rows(), x.value().cols()});
  v.mat() = x.value().mat().rowwise() + b.value().raw().transpose().matrix();
  return make_op(std::move(v), {x, b}, [](const Var& g) {
    return std::vector<Var>{g, col_sum(g)};
  });
}

Var mul_colvec(const Var& x, const Var& v) {
  if (v.value().size() != x.value().rows())
    throw std::invalid_argument("mul_colvec: height mismatch");
  Tensor out({x.value().rows(), x.value().cols()});
  out.mat() = x.value().mat().array().colwise() * v.value().raw();
  return make_op(std::move(out), {x, v}, [x, v](const Var& g) {
    return std::vector<Var>{mul_colvec(g, v), row_sum(mul(g, x))};
  });
}

Var row_sum(const Var& x) {
  Tensor v({x.value().rows()});
  v.raw() = x.value().mat().rowwise().sum();
  const long n = x.value().cols();
  return make_op(std::move(v), {x}, [n](const Var& g) {
    return std::vector<Var>{broadcast_col(g, n)};
  });
}

Var col_sum(const Var& x) {
  Tensor v({x.value().cols()});
  v.raw() = x.value().mat().colwise().sum();
  const long m = x.value().rows();
  return make_op(std::move(v), {x}, [m](const Var& g) {
    return std::vector<Var>{broadcast_row(g, m)};
  });
}

Var broadcast_col(const Var& v, long n) {
  Tensor out({v.value().size(), n});
  out.mat() = v.value().raw().matrix() * Eigen::RowVectorXd::Ones(n);
  return make_op(std::move(out), {v}, [](const Var& g) {
    return std::vector<Var>{row_sum(g)};
  });
}

Var broadcast_row(const Var& v, long m) {
  Tensor out({m, v.value().size()});
  out.mat() = Eigen::VectorXd::Ones(m) * v.value().raw().matrix().transpose();
  return make_op(std::move(out), {v}, [](const Var& g) {
    return std::vector<Var>{col_sum(g)};
  });
}

Var sum_all(const Var& x) {
  Tensor v = Tensor::scalar(x.value().raw().sum());
  auto shape = x.value().shape();
  return make_op(std::move(v), {x}, [shape](const Var& g) {
    return std::vector<Var>{broadcast_scalar(g, shape)};
  });
}

Var mean_all(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum_all(x), 1.0 / n);
}

Var broadcast_scalar(const Var& s, std::vector<long> shape) {
  if (s.value().size() != 1) throw std::invalid_argument("broadcast_scalar: non-scalar");
  Tensor v = Tensor::full(shape, s.value().item());
  return make_op(std::move(v), {s}, [](const Var& g) {
    return std::vector<Var>{sum_all(g)};
  });
}

// ---------------------------------------------------------------------------
// Row indexing
// ---------------------------------------------------------------------------

Var gather_rows(const Var& x, std::vector<long> indices) {
  const long cols = x.value().cols();
  const long in_rows = x.value().rows();
  Tensor v({static_cast<long>(indices.size()), cols});
  auto src = x.value().mat();
  auto dst = v.mat();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const long i = indices[r];
    if (i >= in_rows) throw std::out_of_range("gather_rows: index out of range");
    if (i >= 0)
      dst.row(static_cast<long>(r)) = src.row(i);
    else
      dst.row(static_cast<long>(r)).setZero();
  }
  return make_op(std::move(v), {x}, [indices = std::move(indices), in_rows](const Var& g) {
    return std::vector<Var>{scatter_rows(g, indices, in_rows)};
  });
}

Var scatter_rows(const Var& x, std::vector<long> indices, long out_rows) {
  if (static_cast<long>(indices.size()) != x.value().rows())
    throw std::invalid_argument("scatter_rows: index count mismatch");
  Tensor v({out_rows, x.value().cols()});
  auto src = x.value().mat();
  auto dst = v.mat();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const long i = indices[r];
    if (i >= out_rows) throw std::out_of_range("scatter_rows: index out of range");
    if (i >= 0) dst.row(i) += src.row(static_cast<long>(r));
  }
  return make_op(std::move(v), {x}, [indices = std::move(indices)](const Var& g) {
    return std::vector<Var>{gather_rows(g, indices)};
  });
}

// ---------------------------------------------------------------------------
// Column slicing
// ---------------------------------------------------------------------------

Var slice_cols(const Var& x, long c0, long c1) {
  if (c0 < 0 || c1 > x.value().cols() || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range");
  Tensor v({x.value().rows(), c1 - c0});
  v.mat() = x.value().mat().middleCols(c0, c1 - c0);
  const long total = x.value().cols();
  return make_op(std::move(v), {x}, [c0, total](const Var& g) {
    return std::vector<Var>{embed_cols(g, c0, total)};
  });
}

Var embed_cols(const Var& x, long c0, long total_cols) {
  const long w = x.value().cols();
  if (c0 < 0 || c0 + w > total_cols) throw std::invalid_argument("embed_cols: bad range");
  Tensor v({x.value().rows(), total_cols});
  v.mat().middleCols(c0, w) = x.value().mat();
  return make_op(std::move(v), {x}, [c0, w](const Var& g) {
    return std::vector<Var>{slice_cols(g, c0, c0 + w)};
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const long rows = parts[0].value().rows();
  long total = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    total += p.value().cols();
  }
  Tensor v({rows, total});
  std::vector<long> offsets(parts.size());
  long off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    offsets[i] = off;
    v.mat().middleCols(off, parts[i].value().cols()) = parts[i].value().mat();
    off += parts[i].value().cols();
  }
  std::vector<long> widths(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) widths[i] = parts[i].value().cols();
  return make_op(std::move(v), parts, [offsets, widths](const Var& g) {
    std::vector<Var> out;
    out.reserve(offsets.size());
    for (std::size_t i = 0; i < offsets.size(); ++i)
      out.push_back(slice_cols(g, offsets[i], offsets[i] + widths[i]));
    return out;
  });
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

static Var bnc_to_bcn(const Var& x, long B, long C, long N);

Var bcn_to_bnc(const Var& x) {
  if (x.value().rank() != 3) throw std::invalid_argument("bcn_to_bnc: rank-3 required");
  const long B = x.value().dim(0), C = x.value().dim(1), N = x.value().dim(2);
  Tensor v({B * N, C});
  const double* src = x.value().raw().data();
  double* dst = v.raw().data();
  for (long b = 0; b < B; ++b)
    for (long c = 0; c < C; ++c) {
      const double* s = src + (b * C + c) * N;
      double* d = dst + b * N * C + c;
      for (long n = 0; n < N; ++n) d[n * C] = s[n];
    }
  return make_op(std::move(v), {x}, [B, C, N](const Var& g) {
    return std::vector<Var>{bnc_to_bcn(g, B, C, N)};
  });
}

static Var bnc_to_bcn(const Var& x, long B, long C, long N) {
  Tensor v({B, C, N});
  const double* src = x.value().raw().data();
  double* dst = v.raw().data();
  for (long b = 0; b < B; ++b)
    for (long n = 0; n < N; ++n) {
      const double* s = src + (b * N + n) * C;
      double* d = dst + b * C * N + n;
      for (long c = 0; c < C; ++c) d[c * N] = s[c];
    }
  return make_op(std::move(v), {x}, [](const Var& g) {
    return std::vector<Var>{bcn_to_bnc(g)};
  });
}

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

Var row_l2_normalize(const Var& x, double eps) {
  Var sq = row_sum(mul(x, x));
  Var norm = sqrt_op(add_scalar(sq, eps));
  return mul_colvec(x, recip(norm));
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const long m = logits.value().rows();
  const long k = logits.value().cols();
  if (static_cast<long>(labels.size()) != m)
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  // Constant row-max shift for stability; does not change value or gradient.
  Tensor shift({m, k});
  {
    auto L = logits.value().mat();
    for (long i = 0; i < m; ++i) shift.mat().row(i).setConstant(L.row(i).maxCoeff());
  }
  Var z = sub(logits, Var(shift));
  Var lse = log_op(row_sum(exp_op(z)));
  Tensor onehot({m, k});
  for (long i = 0; i < m; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw std::invalid_argument("softmax_cross_entropy: label out of range");
    onehot.mat()(i, y) = 1.0;
  }
  Var picked = row_sum(mul(z, Var(onehot)));
  return mean_all(sub(lse, picked));
}

Var softmax_rows(const Var& logits) {
  const long m = logits.value().rows();
  const long k = logits.value().cols();
  Tensor shift({m, k});
  {
    auto L = logits.value().mat();
    for (long i = 0; i < m; ++i) shift.mat().row(i).setConstant(L.row(i).maxCoeff());
  }
  Var e = exp_op(sub(logits, Var(shift)));
  return mul_colvec(e, recip(row_sum(e)));
}

}  // namespace eegpack::nn
