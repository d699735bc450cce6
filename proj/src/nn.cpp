#include "eegpack/nn.hpp"

#include <cmath>

namespace eegpack::nn {

Tensor glorot_uniform(Rng& rng, long fan_in, long fan_out, std::vector<long> shape) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_init(rng, bound, std::move(shape));
}

Tensor uniform_init(Rng& rng, double bound, std::vector<long> shape) {
  Tensor t(std::move(shape));
  for (long i = 0; i < t.size(); ++i) t.raw()[i] = rng.uniform(-bound, bound);
  return t;
}

Tensor normal_init(Rng& rng, double stddev, std::vector<long> shape) {
  Tensor t(std::move(shape));
  for (long i = 0; i < t.size(); ++i) t.raw()[i] = stddev * rng.normal();
  return t;
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

Dense::Dense(std::string name, long in, long out, Rng& rng, bool zero_init) {
  Tensor w = zero_init ? Tensor::zeros({in, out}) : glorot_uniform(rng, in, out, {in, out});
  W = Param{name + ".W", Var(std::move(w), true)};
  Tensor bias = zero_init ? Tensor::zeros({out})
                          : uniform_init(rng, 1.0 / std::sqrt(static_cast<double>(in)), {out});
  b = Param{name + ".b", Var(std::move(bias), true)};
}

void Dense::collect(std::vector<Param>& out) const {
  out.push_back(W);
  out.push_back(b);
}

void Dense::adopt(std::vector<Param>& out) {
  out.push_back(W);
  out.push_back(b);
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

LstmStack::LstmStack(std::string name, long input_dim, long hidden, int layers_n, Rng& rng)
    : hidden_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (int l = 0; l < layers_n; ++l) {
    const long in = (l == 0) ? input_dim : hidden;
    Layer layer;
    const std::string prefix = name + "." + std::to_string(l);
    layer.Wx = Param{prefix + ".Wx", Var(uniform_init(rng, bound, {in, 4 * hidden}), true)};
    layer.Wh = Param{prefix + ".Wh", Var(uniform_init(rng, bound, {hidden, 4 * hidden}), true)};
    Tensor bias = uniform_init(rng, bound, {4 * hidden});
    // Forget gate bias starts at one so memory survives early training.
    for (long i = hidden; i < 2 * hidden; ++i) bias.raw()[i] += 1.0;
    layer.b = Param{prefix + ".b", Var(std::move(bias), true)};
    layers.push_back(std::move(layer));
  }
}

Var LstmStack::forward(const Tensor& signals_bcn) const {
  if (signals_bcn.rank() != 3) throw std::invalid_argument("LstmStack: {B,C,N} input required");
  const long B = signals_bcn.dim(0), C = signals_bcn.dim(1), N = signals_bcn.dim(2);
  const long H = hidden_;

  // Eager per-timestep slices; inputs are constants.
  std::vector<Var> steps;
  steps.reserve(static_cast<std::size_t>(N));
  for (long t = 0; t < N; ++t) {
    Tensor xt({B, C});
    for (long b = 0; b < B; ++b)
      for (long c = 0; c < C; ++c) xt.mat()(b, c) = signals_bcn.raw()[(b * C + c) * N + t];
    steps.emplace_back(std::move(xt));
  }

  Var h_final;
  for (const auto& layer : layers) {
    Var h(Tensor::zeros({B, H}));
    Var c(Tensor::zeros({B, H}));
    std::vector<Var> outputs;
    outputs.reserve(steps.size());
    for (const auto& xt : steps) {
      Var z = add_rowvec(add(matmul(xt, layer.Wx.var), matmul(h, layer.Wh.var)), layer.b.var);
      Var i = sigmoid(slice_cols(z, 0, H));
      Var f = sigmoid(slice_cols(z, H, 2 * H));
      Var g = tanh_op(slice_cols(z, 2 * H, 3 * H));
      Var o = sigmoid(slice_cols(z, 3 * H, 4 * H));
      c = add(mul(f, c), mul(i, g));
      h = mul(o, tanh_op(c));
      outputs.push_back(h);
    }
    steps = std::move(outputs);
    h_final = h;
  }
  return h_final;
}

void LstmStack::collect(std::vector<Param>& out) const {
  for (const auto& layer : layers) {
    out.push_back(layer.Wx);
    out.push_back(layer.Wh);
    out.push_back(layer.b);
  }
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

long conv1d_out_len(long L, long k, long stride) {
  if (L < k) return 0;
  return (L - k) / stride + 1;
}

Var conv1d(const Var& rows, long B, long L, const Var& kernel, const Var& bias, long k,
           long stride) {
  const long Lo = conv1d_out_len(L, k, stride);
  if (Lo < 1) throw ConfigError("conv1d: input length " + std::to_string(L) +
                                " too short for kernel " + std::to_string(k));
  std::vector<Var> taps;
  taps.reserve(static_cast<std::size_t>(k));
  for (long dt = 0; dt < k; ++dt) {
    std::vector<long> idx(static_cast<std::size_t>(B * Lo));
    for (long b = 0; b < B; ++b)
      for (long l = 0; l < Lo; ++l) idx[static_cast<std::size_t>(b * Lo + l)] = b * L + l * stride + dt;
    taps.push_back(gather_rows(rows, std::move(idx)));
  }
  Var cols = concat_cols(taps);
  return add_rowvec(matmul(cols, kernel), bias);
}

long conv2d_out_len(long H, long k, long stride, long pad) {
  const long span = H + 2 * pad - k;
  if (span < 0) return 0;
  return span / stride + 1;
}

Var conv2d(const Var& rows, long B, long H, long W, const Var& kernel, const Var& bias, long k,
           long stride, long pad) {
  const long Ho = conv2d_out_len(H, k, stride, pad);
  const long Wo = conv2d_out_len(W, k, stride, pad);
  if (Ho < 1 || Wo < 1) throw ConfigError("conv2d: output collapsed below 1x1");
  std::vector<Var> taps;
  taps.reserve(static_cast<std::size_t>(k * k));
  for (long dy = 0; dy < k; ++dy)
    for (long dx = 0; dx < k; ++dx) {
      std::vector<long> idx(static_cast<std::size_t>(B * Ho * Wo));
      std::size_t r = 0;
      for (long b = 0; b < B; ++b)
        for (long y = 0; y < Ho; ++y)
          for (long x = 0; x < Wo; ++x) {
            const long sy = y * stride + dy - pad;
            const long sx = x * stride + dx - pad;
            idx[r++] = (sy < 0 || sy >= H || sx < 0 || sx >= W) ? -1 : (b * H + sy) * W + sx;
          }
      taps.push_back(gather_rows(rows, std::move(idx)));
    }
  Var cols = concat_cols(taps);
  return add_rowvec(matmul(cols, kernel), bias);
}

Var upsample2x(const Var& rows, long B, long H, long W) {
  std::vector<long> idx(static_cast<std::size_t>(B * 2 * H * 2 * W));
  std::size_t r = 0;
  for (long b = 0; b < B; ++b)
    for (long y = 0; y < 2 * H; ++y)
      for (long x = 0; x < 2 * W; ++x) idx[r++] = (b * H + y / 2) * W + x / 2;
  return gather_rows(rows, std::move(idx));
}

Var global_avg_pool_rows(const Var& rows, long B, long L) {
  std::vector<long> idx(static_cast<std::size_t>(B * L));
  for (long b = 0; b < B; ++b)
    for (long l = 0; l < L; ++l) idx[static_cast<std::size_t>(b * L + l)] = b;
  return scale(scatter_rows(rows, std::move(idx), B), 1.0 / static_cast<double>(L));
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd_momentum") return OptimizerKind::sgd_momentum;
  if (s == "adaptive_moments") return OptimizerKind::adaptive_moments;
  throw ConfigError("unknown optimizer: " + s);
}

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::sgd_momentum ? "sgd_momentum" : "adaptive_moments";
}

namespace {

class Adam final : public Optimizer {
 public:
  explicit Adam(const AdamOptions& o) : o_(o) {}

  void step(std::vector<Param>& params, const std::vector<Tensor>& grads) override {
    if (params.size() != grads.size()) throw std::logic_error("optimizer: grad count mismatch");
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(Eigen::ArrayXd::Zero(p.var.value().size()));
        v_.emplace_back(Eigen::ArrayXd::Zero(p.var.value().size()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(o_.beta1, t_);
    const double bc2 = 1.0 - std::pow(o_.beta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& g = grads[i].raw();
      m_[i] = o_.beta1 * m_[i] + (1.0 - o_.beta1) * g;
      v_[i] = o_.beta2 * v_[i] + (1.0 - o_.beta2) * g * g;
      auto& w = params[i].var.mutable_value().raw();
      w -= o_.lr * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + o_.eps);
    }
  }

 private:
  AdamOptions o_;
  long t_ = 0;
  std::vector<Eigen::ArrayXd> m_, v_;
};

class SgdMomentum final : public Optimizer {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void step(std::vector<Param>& params, const std::vector<Tensor>& grads) override {
    if (params.size() != grads.size()) throw std::logic_error("optimizer: grad count mismatch");
    if (vel_.empty())
      for (const auto& p : params) vel_.emplace_back(Eigen::ArrayXd::Zero(p.var.value().size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      vel_[i] = momentum_ * vel_[i] - lr_ * grads[i].raw();
      params[i].var.mutable_value().raw() += vel_[i];
    }
  }

 private:
  double lr_, momentum_;
  std::vector<Eigen::ArrayXd> vel_;
};

}  // namespace

std::unique_ptr<Optimizer> make_adam(const AdamOptions& opts) {
  return std::make_unique<Adam>(opts);
}

std::unique_ptr<Optimizer> make_sgd_momentum(double lr, double momentum) {
  return std::make_unique<SgdMomentum>(lr, momentum);
}

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr) {
  if (kind == OptimizerKind::sgd_momentum) return make_sgd_momentum(lr);
  AdamOptions o;
  o.lr = lr;
  return make_adam(o);
}

std::vector<Var> param_vars(const std::vector<Param>& params) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.var);
  return out;
}

long param_count(const std::vector<Param>& params) {
  long n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

std::string params_hash(const std::vector<Param>& params) {
  Fnv1a64 h;
  for (const auto& p : params) {
    h.update(p.name);
    const auto& raw = p.var.value().raw();
    for (long i = 0; i < raw.size(); ++i) {
      const float f = static_cast<float>(raw[i]);
      h.update(&f, sizeof(f));
    }
  }
  return h.hex();
}

}  // namespace eegpack::nn
