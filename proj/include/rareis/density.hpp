#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>

#include "rareis/random.hpp"
#include "rareis/types.hpp"

namespace rareis {

inline constexpr double kDefaultSigma2Floor = 1e-6;

/// Standard multivariate normal p(x) in sampling space.
class StandardNormalPrior {
 public:
  explicit StandardNormalPrior(std::size_t d);

  std::size_t dim() const { return d_; }
  double log_density_point(const Eigen::Ref<const Vector>& x) const;
  Vector log_density(const Points& x) const;
  Points sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t d_;
};

/// One probabilistic PCA component, x = W z + mu + eps with covariance
/// C = sigma2 I + W W^T. Densities go through the l x l matrix
/// M = sigma2 I + W^T W so evaluation costs O(d l) per point.
class MppcaComponent {
 public:
  MppcaComponent(Vector mu, Matrix w, double sigma2, double sigma2_floor = kDefaultSigma2Floor);

  std::size_t dim() const { return static_cast<std::size_t>(mu_.size()); }
  std::size_t latent_dim() const { return static_cast<std::size_t>(w_.cols()); }
  const Vector& mu() const { return mu_; }
  const Matrix& w() const { return w_; }
  double sigma2() const { return sigma2_; }

  /// Dense C; for tests and diagnostics.
  Matrix covariance() const;

  double log_density_point(const Eigen::Ref<const Vector>& x) const;
  Vector log_density(const Points& x) const;

 private:
  Vector mu_;
  Matrix w_;
  double sigma2_;
  Matrix projector_;  // L^{-1} W^T with M = L L^T
  double log_norm_;   // -(d ln 2pi + ln|C|) / 2
};

/// Full-covariance Gaussian, evaluated through its Cholesky factor.
class GmmComponent {
 public:
  GmmComponent(Vector mu, Matrix cov);

  std::size_t dim() const { return static_cast<std::size_t>(mu_.size()); }
  const Vector& mu() const { return mu_; }
  const Matrix& cov() const { return cov_; }
  const Matrix& cholesky() const { return chol_; }

  double log_density_point(const Eigen::Ref<const Vector>& x) const;
  Vector log_density(const Points& x) const;

 private:
  Vector mu_;
  Matrix cov_;
  Matrix chol_;  // lower triangular
  double log_norm_;
};

namespace detail {

void validate_mixture_weights(const std::vector<double>& weights, std::size_t n_components);

}  // namespace detail

/// Mixture of probabilistic principal component analyzers.
class MppcaModel {
 public:
  MppcaModel(std::vector<double> weights, std::vector<MppcaComponent> components);

  std::size_t size() const { return components_.size(); }
  std::size_t dim() const { return components_.front().dim(); }
  std::size_t latent_dim() const { return components_.front().latent_dim(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<MppcaComponent>& components() const { return components_; }

  /// ln q(x | k) for every point (rows) and component (columns).
  Matrix component_log_densities(const Points& x) const;
  double log_density_point(const Eigen::Ref<const Vector>& x) const;
  Vector log_density(const Points& x) const;
  Points sample(std::size_t n, Rng& rng) const;

 private:
  std::vector<double> weights_;
  std::vector<MppcaComponent> components_;
};

/// Full-covariance Gaussian mixture; the baseline proposal family.
class GmmModel {
 public:
  GmmModel(std::vector<double> weights, std::vector<GmmComponent> components);

  std::size_t size() const { return components_.size(); }
  std::size_t dim() const { return components_.front().dim(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<GmmComponent>& components() const { return components_; }

  Matrix component_log_densities(const Points& x) const;
  double log_density_point(const Eigen::Ref<const Vector>& x) const;
  Vector log_density(const Points& x) const;
  Points sample(std::size_t n, Rng& rng) const;

 private:
  std::vector<double> weights_;
  std::vector<GmmComponent> components_;
};

/// Any density the samplers can draw from and evaluate.
using Proposal = std::variant<StandardNormalPrior, MppcaModel, GmmModel>;

std::size_t dim(const Proposal& q);
std::string family_name(const Proposal& q);
Vector log_density(const Proposal& q, const Points& x);
Points sample(const Proposal& q, std::size_t n, Rng& rng);

/// Per-point ln sum_k pi_k q_k(x) from an n x K matrix of component
/// log-densities, using max subtraction.
Vector mixture_log_density(const Matrix& component_log_densities, const std::vector<double>& weights);

}  // namespace rareis
