#pragma once
// Shared helpers for the unit suites: finite differences and random tensors.

#include <cmath>
#include <functional>

#include "eegpack/autograd.hpp"
#include "eegpack/common.hpp"

namespace testutil {

using eegpack::Rng;
using eegpack::nn::Tensor;
using eegpack::nn::Var;

inline Tensor random_tensor(Rng& rng, std::vector<long> shape, double scl = 1.0) {
  Tensor t(std::move(shape));
  for (long i = 0; i < t.size(); ++i) t.raw()[i] = scl * rng.normal();
  return t;
}

// Central finite differences of a scalar-valued function of one tensor,
// evaluated coordinate by coordinate.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double h = 1e-5) {
  Tensor g(x.shape());
  Tensor xp = x;
  for (long i = 0; i < x.size(); ++i) {
    const double orig = xp.raw()[i];
    const double step = h * (1.0 + std::abs(orig));
    xp.raw()[i] = orig + step;
    const double fplus = f(xp);
    xp.raw()[i] = orig - step;
    const double fminus = f(xp);
    xp.raw()[i] = orig;
    g.raw()[i] = (fplus - fminus) / (2.0 * step);
  }
  return g;
}

inline double max_rel_err(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (long i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a.raw()[i]), std::abs(b.raw()[i]), 1e-8});
    worst = std::max(worst, std::abs(a.raw()[i] - b.raw()[i]) / denom);
  }
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  return (a.raw() - b.raw()).abs().maxCoeff();
}

}  // namespace testutil
