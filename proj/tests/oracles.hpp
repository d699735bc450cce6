#pragma once
// Independent brute-force oracles used by the unit and acceptance suites.
// Everything here is deliberately written the slow, obvious way and shares
// no code with the library implementations it checks.

#include <Eigen/Dense>
#include <array>
#include <vector>

namespace oracles {

// All (a,p,n) with matching/differing labels whose negative lies strictly in
// the semi-hard band, via three nested loops and per-pair norms.
inline std::vector<std::array<long, 3>> semihard_bruteforce(const Eigen::MatrixXd& e,
                                                            const std::vector<int>& labels,
                                                            double margin) {
  std::vector<std::array<long, 3>> out;
  const long B = e.rows();
  for (long a = 0; a < B; ++a)
    for (long p = 0; p < B; ++p) {
      if (a == p) continue;
      if (labels[static_cast<std::size_t>(a)] != labels[static_cast<std::size_t>(p)]) continue;
      double dap = 0.0;
      for (long j = 0; j < e.cols(); ++j) dap += (e(a, j) - e(p, j)) * (e(a, j) - e(p, j));
      for (long n = 0; n < B; ++n) {
        if (labels[static_cast<std::size_t>(n)] == labels[static_cast<std::size_t>(a)]) continue;
        double dan = 0.0;
        for (long j = 0; j < e.cols(); ++j) dan += (e(a, j) - e(n, j)) * (e(a, j) - e(n, j));
        if (dap < dan && dan < dap + margin) out.push_back({a, p, n});
      }
    }
  return out;
}

// Mean hinge over explicit triples, evaluated coordinate by coordinate.
inline double triplet_loss_bruteforce(const Eigen::MatrixXd& e,
                                      const std::vector<std::array<long, 3>>& triples,
                                      double margin) {
  double total = 0.0;
  for (const auto& t : triples) {
    double dap = 0.0, dan = 0.0;
    for (long j = 0; j < e.cols(); ++j) {
      dap += (e(t[0], j) - e(t[1], j)) * (e(t[0], j) - e(t[1], j));
      dan += (e(t[0], j) - e(t[2], j)) * (e(t[0], j) - e(t[2], j));
    }
    const double v = dap - dan + margin;
    total += v > 0.0 ? v : 0.0;
  }
  return total / static_cast<double>(triples.size());
}

// Unbiased polynomial-kernel MMD^2 via explicit double loops.
inline double mmd2_bruteforce(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double d = static_cast<double>(a.cols());
  auto k = [d](const Eigen::RowVectorXd& x, const Eigen::RowVectorXd& y) {
    const double dot = x.dot(y) / d + 1.0;
    return dot * dot * dot;
  };
  const long m = a.rows(), n = b.rows();
  double kaa = 0.0, kbb = 0.0, kab = 0.0;
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < m; ++j)
      if (i != j) kaa += k(a.row(i), a.row(j));
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j)
      if (i != j) kbb += k(b.row(i), b.row(j));
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < n; ++j) kab += k(a.row(i), b.row(j));
  return kaa / static_cast<double>(m * (m - 1)) + kbb / static_cast<double>(n * (n - 1)) -
         2.0 * kab / static_cast<double>(m * n);
}

}  // namespace oracles
