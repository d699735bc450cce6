#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "eegpack/autograd.hpp"
#include "eegpack/nn.hpp"
#include "test_util.hpp"

using namespace eegpack;
using namespace eegpack::nn;
using testutil::fd_gradient;
using testutil::max_rel_err;
using testutil::random_tensor;

TEST_CASE("elementwise chain gradients match finite differences") {
  Rng rng = make_rng(11);
  Tensor a0 = random_tensor(rng, {4, 5});
  Tensor b0 = random_tensor(rng, {4, 5});

  auto loss_of = [&](const Tensor& at, const Tensor& bt) {
    NoGradGuard ng;
    Var a(at), b(bt);
    Var y = mean_all(mul(tanh_op(a), sigmoid(add(mul(a, b), scale(b, 0.3)))));
    return y.value().item();
  };

  Var a(a0, true), b(b0, true);
  Var y = mean_all(mul(tanh_op(a), sigmoid(add(mul(a, b), scale(b, 0.3)))));
  auto grads = gradients(y, {a, b});

  Tensor fda = fd_gradient([&](const Tensor& t) { return loss_of(t, b0); }, a0);
  Tensor fdb = fd_gradient([&](const Tensor& t) { return loss_of(a0, t); }, b0);
  CHECK(max_rel_err(grads[0], fda) < 1e-6);
  CHECK(max_rel_err(grads[1], fdb) < 1e-6);
}

TEST_CASE("matmul / broadcast / reduction gradients") {
  Rng rng = make_rng(12);
  Tensor A0 = random_tensor(rng, {3, 4});
  Tensor B0 = random_tensor(rng, {4, 6});
  Tensor v0 = random_tensor(rng, {6});
  Tensor c0 = random_tensor(rng, {3});

  auto build = [&](const Var& A, const Var& B, const Var& v, const Var& c) {
    Var y = add_rowvec(matmul(A, B), v);
    y = mul_colvec(y, c);
    Var r = row_sum(mul(y, y));
    Var s = col_sum(y);
    return add(sum_all(r), sum_all(exp_op(scale(s, 0.1))));
  };

  Var A(A0, true), B(B0, true), v(v0, true), c(c0, true);
  auto grads = gradients(build(A, B, v, c), {A, B, v, c});

  auto loss_at = [&](const Tensor& At, const Tensor& Bt, const Tensor& vt, const Tensor& ct) {
    NoGradGuard ng;
    return build(Var(At), Var(Bt), Var(vt), Var(ct)).value().item();
  };
  CHECK(max_rel_err(grads[0], fd_gradient([&](const Tensor& t) { return loss_at(t, B0, v0, c0); }, A0)) < 1e-6);
  CHECK(max_rel_err(grads[1], fd_gradient([&](const Tensor& t) { return loss_at(A0, t, v0, c0); }, B0)) < 1e-6);
  CHECK(max_rel_err(grads[2], fd_gradient([&](const Tensor& t) { return loss_at(A0, B0, t, c0); }, v0)) < 1e-6);
  CHECK(max_rel_err(grads[3], fd_gradient([&](const Tensor& t) { return loss_at(A0, B0, v0, t); }, c0)) < 1e-6);
}

TEST_CASE("gather / scatter / slice / concat gradients") {
  Rng rng = make_rng(13);
  Tensor X0 = random_tensor(rng, {5, 4});
  std::vector<long> idx = {3, 0, -1, 2, 0};

  auto build = [&](const Var& X) {
    Var g = gather_rows(X, idx);
    Var s = slice_cols(X, 1, 3);
    Var e = embed_cols(s, 0, 4);
    Var cat = concat_cols({g, scale(e, 0.5)});
    Var sc = scatter_rows(cat, {1, 1, 0, 2, -1}, 3);
    return sum_all(mul(sc, sc));
  };

  Var X(X0, true);
  auto grads = gradients(build(X), {X});
  Tensor fd = fd_gradient(
      [&](const Tensor& t) {
        NoGradGuard ng;
        return build(Var(t)).value().item();
      },
      X0);
  CHECK(max_rel_err(grads[0], fd) < 1e-6);
}

TEST_CASE("bcn layout round trip and gradient") {
  Rng rng = make_rng(14);
  Tensor X0 = random_tensor(rng, {2, 3, 4});

  auto build = [&](const Var& X) {
    Var rows = bcn_to_bnc(X);  // {8, 3}
    return sum_all(mul(rows, rows));
  };
  Var X(X0, true);
  auto grads = gradients(build(X), {X});
  Tensor fd = fd_gradient(
      [&](const Tensor& t) {
        NoGradGuard ng;
        return build(Var(t)).value().item();
      },
      X0);
  CHECK(max_rel_err(grads[0], fd) < 1e-7);

  // Element mapping: row (b*N+n), col c == X[b,c,n].
  Var rows = bcn_to_bnc(Var(X0));
  CHECK(rows.value().mat()(1 * 4 + 2, 1) == X0.raw()[(1 * 3 + 1) * 4 + 2]);
}

TEST_CASE("softmax cross entropy matches log-softmax by hand") {
  Rng rng = make_rng(15);
  Tensor L0 = random_tensor(rng, {6, 4}, 2.0);
  std::vector<int> labels = {0, 3, 1, 1, 2, 0};

  Var L(L0, true);
  Var loss = softmax_cross_entropy(L, labels);

  double expect = 0.0;
  for (long i = 0; i < 6; ++i) {
    const auto row = L0.mat().row(i);
    double denom = 0.0;
    for (long j = 0; j < 4; ++j) denom += std::exp(row(j));
    expect += -std::log(std::exp(row(labels[static_cast<std::size_t>(i)])) / denom);
  }
  expect /= 6.0;
  CHECK(loss.value().item() == doctest::Approx(expect).epsilon(1e-12));

  auto grads = gradients(loss, {L});
  Tensor fd = fd_gradient(
      [&](const Tensor& t) {
        NoGradGuard ng;
        return softmax_cross_entropy(Var(t), labels).value().item();
      },
      L0);
  CHECK(max_rel_err(grads[0], fd) < 1e-6);
}

TEST_CASE("softmax rows sum to one and are positive") {
  Rng rng = make_rng(16);
  Tensor L0 = random_tensor(rng, {5, 7}, 3.0);
  Var p = softmax_rows(Var(L0));
  for (long i = 0; i < 5; ++i) {
    CHECK(p.value().mat().row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.value().mat().row(i).minCoeff() > 0.0);
  }
}

TEST_CASE("row normalization produces unit rows with correct gradient") {
  Rng rng = make_rng(17);
  Tensor X0 = random_tensor(rng, {4, 6});
  Var X(X0, true);
  Var y = row_l2_normalize(X);
  for (long i = 0; i < 4; ++i)
    CHECK(y.value().mat().row(i).norm() == doctest::Approx(1.0).epsilon(1e-9));

  Tensor W0 = random_tensor(rng, {4, 6});
  Var loss = sum_all(mul(y, Var(W0)));
  auto grads = gradients(loss, {X});
  Tensor fd = fd_gradient(
      [&](const Tensor& t) {
        NoGradGuard ng;
        return sum_all(mul(row_l2_normalize(Var(t)), Var(W0))).value().item();
      },
      X0);
  CHECK(max_rel_err(grads[0], fd) < 1e-6);
}

TEST_CASE("second-order: gradient penalty differentiates through backward") {
  // penalty(W) = || d/dx sum(tanh(x W)) ||^2 checked against finite
  // differences of the full penalty with respect to W.
  Rng rng = make_rng(18);
  Tensor W0 = random_tensor(rng, {3, 2});
  Tensor x0 = random_tensor(rng, {2, 3});

  auto penalty_value = [&](const Tensor& Wt) {
    Var W(Wt, true);
    Var x(x0, true);
    Var out = sum_all(tanh_op(matmul(x, W)));
    auto gx = backprop(out, {x}, false);
    NoGradGuard ng;
    return sum_all(mul(gx[0], gx[0])).value().item();
  };

  // Analytic: build penalty with graph, differentiate wrt W.
  Var W(W0, true);
  Var x(x0, true);
  Var out = sum_all(tanh_op(matmul(x, W)));
  auto gx = backprop(out, {x}, true);
  Var penalty = sum_all(mul(gx[0], gx[0]));
  auto gW = gradients(penalty, {W});

  Tensor fd = fd_gradient(penalty_value, W0, 1e-5);
  CHECK(max_rel_err(gW[0], fd) < 1e-5);
}

TEST_CASE("second-order through leaky relu and convolution-style gathers") {
  Rng rng = make_rng(19);
  Tensor W0 = random_tensor(rng, {4, 3});
  Tensor x0 = random_tensor(rng, {3, 4});

  auto make_out = [&](const Var& W, const Var& x) {
    Var h = leaky_relu(matmul(x, W), 0.2);
    Var g = gather_rows(h, {2, 0, 1, 1});
    return sum_all(mul(g, g));
  };

  Var W(W0, true);
  Var x(x0, true);
  Var out = make_out(W, x);
  auto gx = backprop(out, {x}, true);
  Var penalty = sum_all(mul(gx[0], gx[0]));
  auto gW = gradients(penalty, {W});

  Tensor fd = fd_gradient(
      [&](const Tensor& Wt) {
        Var Wl(Wt, true);
        Var xl(x0, true);
        auto gxl = backprop(make_out(Wl, xl), {xl}, true);
        NoGradGuard ng;
        return sum_all(mul(gxl[0], gxl[0])).value().item();
      },
      W0, 1e-5);
  CHECK(max_rel_err(gW[0], fd) < 1e-5);
}

TEST_CASE("no-grad guard suppresses graph construction") {
  Tensor a0 = Tensor::full({2, 2}, 1.5);
  Var a(a0, true);
  {
    NoGradGuard ng;
    Var y = mul(a, a);
    CHECK_FALSE(y.requires_grad());
  }
  Var y = mul(a, a);
  CHECK(y.requires_grad());
}

TEST_CASE("gradients for unreachable inputs are zero") {
  Var a(Tensor::full({2}, 1.0), true);
  Var b(Tensor::full({2}, 2.0), true);
  Var loss = sum_all(mul(a, a));
  auto g = gradients(loss, {a, b});
  CHECK(g[1].raw().abs().maxCoeff() == 0.0);
  CHECK(g[0].raw().abs().maxCoeff() > 0.0);
}

TEST_CASE("softplus is stable for large magnitudes") {
  Tensor t({3});
  t.raw() << -800.0, 0.0, 800.0;
  Var y = softplus(Var(t));
  CHECK(y.value().raw()[0] == doctest::Approx(0.0));
  CHECK(y.value().raw()[1] == doctest::Approx(std::log(2.0)));
  CHECK(y.value().raw()[2] == doctest::Approx(800.0));
  CHECK(std::isfinite(y.value().raw().maxCoeff()));
}

TEST_CASE("conv helpers: shapes, values and gradients") {
  Rng rng = make_rng(20);
  // 1-D: B=2, L=7, W=3, k=3, stride=2 -> Lo=3
  Tensor X0 = random_tensor(rng, {2 * 7, 3});
  Tensor K0 = random_tensor(rng, {9, 4});
  Tensor b0 = random_tensor(rng, {4});

  auto loss1d = [&](const Var& X, const Var& K, const Var& b) {
    Var y = conv1d(X, 2, 7, K, b, 3, 2);
    return sum_all(mul(y, y));
  };
  Var X(X0, true), K(K0, true), b(b0, true);
  Var y = conv1d(X, 2, 7, K, b, 3, 2);
  CHECK(y.value().rows() == 2 * 3);
  CHECK(y.value().cols() == 4);

  // Hand-check one output element: batch 0, output position 1, channel 0.
  double expect = b0.raw()[0];
  for (long dt = 0; dt < 3; ++dt)
    for (long w = 0; w < 3; ++w)
      expect += X0.mat()(0 * 7 + 1 * 2 + dt, w) * K0.mat()(dt * 3 + w, 0);
  CHECK(y.value().mat()(1, 0) == doctest::Approx(expect).epsilon(1e-12));

  auto g = gradients(loss1d(X, K, b), {X, K, b});
  Tensor fdX = fd_gradient(
      [&](const Tensor& t) {
        NoGradGuard ng;
        return loss1d(Var(t), Var(K0), Var(b0)).value().item();
      },
      X0);
  CHECK(max_rel_err(g[0], fdX) < 1e-6);

  // 2-D: B=1, H=W=5, C=2, k=3, stride=2, pad=1 -> 3x3
  Tensor I0 = random_tensor(rng, {25, 2});
  Tensor K2 = random_tensor(rng, {18, 3});
  Tensor b2 = random_tensor(rng, {3});
  auto loss2d = [&](const Var& I) {
    Var z = conv2d(I, 1, 5, 5, Var(K2), Var(b2), 3, 2, 1);
    return sum_all(mul(z, z));
  };
  Var I(I0, true);
  Var z = conv2d(I, 1, 5, 5, Var(K2), Var(b2), 3, 2, 1);
  CHECK(z.value().rows() == 9);
  auto g2 = gradients(loss2d(I), {I});
  Tensor fdI = fd_gradient(
      [&](const Tensor& t) {
        NoGradGuard ng;
        return loss2d(Var(t)).value().item();
      },
      I0);
  CHECK(max_rel_err(g2[0], fdI) < 1e-6);
}

TEST_CASE("upsample and pooling behave as nearest / mean") {
  Tensor X({4, 1});
  X.raw() << 1.0, 2.0, 3.0, 4.0;  // B=1, H=W=2
  Var up = upsample2x(Var(X), 1, 2, 2);
  CHECK(up.value().rows() == 16);
  CHECK(up.value().mat()(0, 0) == 1.0);
  CHECK(up.value().mat()(1, 0) == 1.0);
  CHECK(up.value().mat()(4, 0) == 1.0);
  CHECK(up.value().mat()(15, 0) == 4.0);

  Var pooled = global_avg_pool_rows(Var(X), 2, 2);  // two groups of two rows
  CHECK(pooled.value().mat()(0, 0) == doctest::Approx(1.5));
  CHECK(pooled.value().mat()(1, 0) == doctest::Approx(3.5));
}

TEST_CASE("adam drives a quadratic toward its minimum deterministically") {
  Rng rng = make_rng(21);
  Tensor w0 = random_tensor(rng, {4});
  std::vector<Param> params{{"w", Var(w0, true)}};
  AdamOptions opts;
  opts.lr = 0.05;
  auto opt = make_adam(opts);
  for (int i = 0; i < 400; ++i) {
    Var loss = sum_all(mul(params[0].var, params[0].var));
    auto g = gradients(loss, {params[0].var});
    opt->step(params, g);
  }
  CHECK(params[0].var.value().raw().abs().maxCoeff() < 1e-3);
}
