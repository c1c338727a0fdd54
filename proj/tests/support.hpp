#pragma once

// Independent oracles and fixtures shared by the unit tests and the
// acceptance binary. The oracles deliberately take different numerical routes
// from the library code (LU instead of Cholesky/Woodbury, exhaustive search
// instead of Gram-matrix shortcuts).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "rareis/density.hpp"
#include "rareis/em.hpp"
#include "rareis/random.hpp"
#include "rareis/stats.hpp"

namespace rareis::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = scale * rng.normal();
  return m;
}

inline std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::min(hi, lo + static_cast<std::size_t>(rng.uniform() * static_cast<double>(hi - lo + 1)));
}

/// ln N(x; mu, cov) from a dense LU factorization.
inline double dense_log_normal(const Vector& x, const Vector& mu, const Matrix& cov) {
  const Eigen::FullPivLU<Matrix> lu(cov);
  const Vector diff = x - mu;
  const double quad = diff.dot(lu.solve(diff));
  const double logdet = lu.matrixLU().diagonal().array().abs().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + logdet + quad);
}

/// Random MPPCA component with well-conditioned covariance.
inline MppcaComponent random_ppca(std::size_t d, std::size_t l, Rng& rng) {
  Vector mu = random_matrix(d, 1, rng, 2.0).col(0);
  Matrix w = random_matrix(d, l, rng, 0.2 + 1.5 * rng.uniform());
  const double sigma2 = 0.05 + 2.0 * rng.uniform();
  return MppcaComponent(mu, w, sigma2);
}

/// Exhaustive k-NN coverage.
inline double brute_coverage(const Points& real, const Points& gen, std::size_t k) {
  const Eigen::Index n = real.cols();
  std::size_t covered = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> dist;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) dist.push_back((real.col(i) - real.col(j)).norm());
    std::sort(dist.begin(), dist.end());
    const double radius = dist[k - 1];
    bool hit = false;
    for (Eigen::Index g = 0; g < gen.cols() && !hit; ++g) hit = (real.col(i) - gen.col(g)).norm() <= radius;
    covered += hit ? 1 : 0;
  }
  return static_cast<double>(covered) / static_cast<double>(n);
}

/// Draws n points from a planted PPCA model.
inline Points sample_ppca(const MppcaComponent& c, std::size_t n, Rng& rng) {
  const Matrix z = random_matrix(c.latent_dim(), n, rng);
  const Matrix e = random_matrix(c.dim(), n, rng, std::sqrt(c.sigma2()));
  Points x = c.w() * z + e;
  x.colwise() += c.mu();
  return x;
}

/// Principal-subspace projector of the column span of w.
inline Matrix span_projector(const Matrix& w) {
  const Eigen::HouseholderQR<Matrix> qr(w);
  const Matrix q = qr.householderQ() * Matrix::Identity(w.rows(), w.cols());
  return q * q.transpose();
}

}  // namespace rareis::testing
