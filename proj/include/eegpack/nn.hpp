#pragma once
// Trainable modules (dense, LSTM stack, convolution helpers) and optimizers.

#include <memory>
#include <string>
#include <vector>

#include "eegpack/autograd.hpp"
#include "eegpack/common.hpp"
#include "eegpack/tensor.hpp"

namespace eegpack::nn {

struct Param {
  std::string name;
  Var var;  // leaf, requires_grad
};

// Initializers (all deterministic given the Rng).
Tensor glorot_uniform(Rng& rng, long fan_in, long fan_out, std::vector<long> shape);
Tensor uniform_init(Rng& rng, double bound, std::vector<long> shape);
Tensor normal_init(Rng& rng, double stddev, std::vector<long> shape);

// ---------------------------------------------------------------------------
// Dense layer: x {m,in} -> {m,out}
// ---------------------------------------------------------------------------
class Dense {
 public:
  Dense() = default;
  Dense(std::string name, long in, long out, Rng& rng, bool zero_init = false);

  Var forward(const Var& x) const { return add_rowvec(matmul(x, W.var), b.var); }
  void collect(std::vector<Param>& out) const;
  void adopt(std::vector<Param>& out);  // collect by reference for in-place load

  Param W, b;  // W {in,out}, b {out}
};

// ---------------------------------------------------------------------------
// LSTM stack. Consumes a {B,C,N} signal batch as N steps of C-dim vectors
// and returns the top layer's final hidden state {B,H}.
// Gate layout in the 4H axis: input, forget, cell, output.
// ---------------------------------------------------------------------------
class LstmStack {
 public:
  LstmStack() = default;
  LstmStack(std::string name, long input_dim, long hidden, int layers, Rng& rng);

  Var forward(const Tensor& signals_bcn) const;
  void collect(std::vector<Param>& out) const;

  long hidden() const { return hidden_; }

  struct Layer {
    Param Wx;  // {in, 4H}
    Param Wh;  // {H, 4H}
    Param b;   // {4H}
  };
  std::vector<Layer> layers;

 private:
  long hidden_ = 0;
};

// ---------------------------------------------------------------------------
// Convolution helpers. Activations are stored as row matrices:
//   1-D (temporal): {B*L, W} with row (b*L + l)
//   2-D (images):   {B*H*W, C} with row ((b*H + h)*W + w)
// Kernels are matrices ready for matmul:
//   1-D: {k*W_in, W_out}, row (dt*W_in + w)
//   2-D: {k*k*C_in, C_out}, row ((dy*k + dx)*C_in + c)
// 1-D convolution is unpadded (valid); 2-D is zero-padded.
// ---------------------------------------------------------------------------
long conv1d_out_len(long L, long k, long stride);
Var conv1d(const Var& rows, long B, long L, const Var& kernel, const Var& bias, long k,
           long stride);
long conv2d_out_len(long H, long k, long stride, long pad);
Var conv2d(const Var& rows, long B, long H, long W, const Var& kernel, const Var& bias, long k,
           long stride, long pad);
Var upsample2x(const Var& rows, long B, long H, long W);       // nearest neighbour
Var global_avg_pool_rows(const Var& rows, long B, long L);     // {B*L,W} -> {B,W}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------
enum class OptimizerKind { sgd_momentum, adaptive_moments };

OptimizerKind optimizer_kind_from_string(const std::string& s);
std::string to_string(OptimizerKind k);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // grads[i] pairs with params[i]; updates values in place.
  virtual void step(std::vector<Param>& params, const std::vector<Tensor>& grads) = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

std::unique_ptr<Optimizer> make_adam(const AdamOptions& opts);
std::unique_ptr<Optimizer> make_sgd_momentum(double lr, double momentum = 0.9);
std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr);

// Parameter utilities.
std::vector<Var> param_vars(const std::vector<Param>& params);
long param_count(const std::vector<Param>& params);
std::string params_hash(const std::vector<Param>& params);  // float32 image hash

}  // namespace eegpack::nn
