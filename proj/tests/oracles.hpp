#ifndef FUSEGUARD_TESTS_ORACLES_HPP
#define FUSEGUARD_TESTS_ORACLES_HPP

// Independent reference implementations shared by the unit tests and the
// acceptance run.

#include <algorithm>
#include <cmath>
#include <vector>

#include "fuseguard/cka.hpp"
#include "fuseguard/random.hpp"

namespace fuseguard::testing {

// Smallest grid multiple at or above the order statistic that leaves at most
// r·N scores strictly above it.
inline double order_statistic_oracle(std::vector<double> scores, double r, double rho) {
  std::sort(scores.begin(), scores.end());
  const std::size_t n = scores.size();
  std::size_t allowed = 0;
  while (allowed + 1 <= n && static_cast<double>(allowed + 1) / static_cast<double>(n) <= r) ++allowed;
  if (allowed == n) return rho;
  const double s = scores[n - allowed - 1];
  auto i = static_cast<std::uint64_t>(std::max(1.0, std::ceil(s / rho)));
  while (rho * static_cast<double>(i) < s) ++i;
  while (i > 1 && rho * static_cast<double>(i - 1) >= s) --i;
  return rho * static_cast<double>(i);
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

// tr(K H L H)/(n−1)² with an explicit centering matrix and plain loops.
inline double brute_hsic(const Matrix& k, const Matrix& l) {
  const Eigen::Index n = k.rows();
  Matrix h(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) h(i, j) = (i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(n);
  Matrix kh = Matrix::Zero(n, n), lh = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index t = 0; t < n; ++t) {
        kh(i, j) += k(i, t) * h(t, j);
        lh(i, j) += l(i, t) * h(t, j);
      }
  double tr = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index t = 0; t < n; ++t) tr += kh(i, t) * lh(t, i);
  return tr / static_cast<double>((n - 1) * (n - 1));
}

inline Matrix random_rotation(Eigen::Index d, std::uint64_t seed) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(d, d, seed));
  return qr.householderQ();
}

}  // namespace fuseguard::testing

#endif  // FUSEGUARD_TESTS_ORACLES_HPP
