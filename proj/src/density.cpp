#include "rareis/density.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "rareis/stats.hpp"

namespace rareis {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_dim(std::size_t expected, Eigen::Index got, const char* what) {
  if (static_cast<Eigen::Index>(expected) != got) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (expected " +
                                std::to_string(expected) + ", got " + std::to_string(got) + ")");
  }
}

std::size_t pick_component(const std::vector<double>& weights, double u) {
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return k;
  }
  // u landed in the rounding gap above the last cumulative sum.
  for (std::size_t k = weights.size(); k-- > 0;) {
    if (weights[k] > 0.0) return k;
  }
  return 0;
}

template <class Component>
Matrix stack_log_densities(const std::vector<Component>& components, const Points& x) {
  Matrix out(x.cols(), static_cast<Eigen::Index>(components.size()));
  for (std::size_t k = 0; k < components.size(); ++k) {
    out.col(static_cast<Eigen::Index>(k)) = components[k].log_density(x);
    if (out.col(static_cast<Eigen::Index>(k)).hasNaN()) {
      throw NumericalError("component " + std::to_string(k) + ": log-density evaluated to NaN");
    }
  }
  return out;
}

template <class Component>
void validate_components(const std::vector<Component>& components, const char* what) {
  if (components.empty()) throw std::invalid_argument(std::string(what) + ": no components");
  for (std::size_t k = 1; k < components.size(); ++k) {
    if (components[k].dim() != components[0].dim()) {
      throw std::invalid_argument(std::string(what) + ": component " + std::to_string(k) +
                                  " has a different dimension");
    }
  }
}

}  // namespace

// --- StandardNormalPrior ---------------------------------------------------

StandardNormalPrior::StandardNormalPrior(std::size_t d) : d_(d) {
  if (d < 2) throw std::invalid_argument("StandardNormalPrior: d must be >= 2");
}

double StandardNormalPrior::log_density_point(const Eigen::Ref<const Vector>& x) const {
  check_dim(d_, x.size(), "prior_log_density");
  return -0.5 * static_cast<double>(d_) * kLog2Pi - 0.5 * x.squaredNorm();
}

Vector StandardNormalPrior::log_density(const Points& x) const {
  check_dim(d_, x.rows(), "prior_log_density");
  const double c = -0.5 * static_cast<double>(d_) * kLog2Pi;
  Vector out(x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) out[i] = c - 0.5 * x.col(i).squaredNorm();
  return out;
}

Points StandardNormalPrior::sample(std::size_t n, Rng& rng) const { return standard_normal(d_, n, rng); }

// --- MppcaComponent --------------------------------------------------------

MppcaComponent::MppcaComponent(Vector mu, Matrix w, double sigma2, double sigma2_floor)
    : mu_(std::move(mu)), w_(std::move(w)), sigma2_(sigma2) {
  const auto d = mu_.size();
  const auto l = w_.cols();
  if (w_.rows() != d) throw std::invalid_argument("MppcaComponent: W must have d rows");
  if (l < 1 || l >= d) throw std::invalid_argument("MppcaComponent: latent dimension must satisfy 1 <= l < d");
  if (!(sigma2_ >= sigma2_floor) || !std::isfinite(sigma2_)) {
    throw std::invalid_argument("MppcaComponent: sigma2 below floor or not finite");
  }
  if (!mu_.allFinite() || !w_.allFinite()) throw std::invalid_argument("MppcaComponent: non-finite entries");

  Matrix m = w_.transpose() * w_;
  m.diagonal().array() += sigma2_;
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw NumericalError("MppcaComponent: M = sigma2 I + W^T W is not positive definite");
  projector_ = llt.matrixL().solve(w_.transpose());
  const double log_det_m = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double log_det_c = static_cast<double>(d - l) * std::log(sigma2_) + log_det_m;
  log_norm_ = -0.5 * (static_cast<double>(d) * kLog2Pi + log_det_c);
  if (!std::isfinite(log_norm_) || !projector_.allFinite()) {
    throw NumericalError("MppcaComponent: non-finite normalizer");
  }
}

Matrix MppcaComponent::covariance() const {
  Matrix c = w_ * w_.transpose();
  c.diagonal().array() += sigma2_;
  return c;
}

double MppcaComponent::log_density_point(const Eigen::Ref<const Vector>& x) const {
  check_dim(dim(), x.size(), "mppca_component_log_density");
  const Vector y = x - mu_;
  const double quad = (y.squaredNorm() - (projector_ * y).squaredNorm()) / sigma2_;
  return log_norm_ - 0.5 * quad;
}

Vector MppcaComponent::log_density(const Points& x) const {
  check_dim(dim(), x.rows(), "mppca_component_log_density");
  const Matrix y = x.colwise() - mu_;
  const Matrix py = projector_ * y;
  Vector out(x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    const double quad = (y.col(i).squaredNorm() - py.col(i).squaredNorm()) / sigma2_;
    out[i] = log_norm_ - 0.5 * quad;
  }
  return out;
}

// --- GmmComponent ----------------------------------------------------------

GmmComponent::GmmComponent(Vector mu, Matrix cov) : mu_(std::move(mu)), cov_(std::move(cov)) {
  const auto d = mu_.size();
  if (cov_.rows() != d || cov_.cols() != d) throw std::invalid_argument("GmmComponent: covariance must be d x d");
  if (!mu_.allFinite() || !cov_.allFinite()) throw std::invalid_argument("GmmComponent: non-finite entries");
  const double scale = 1.0 + cov_.cwiseAbs().maxCoeff();
  if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw std::invalid_argument("GmmComponent: covariance is not symmetric");
  }
  Eigen::LLT<Matrix> llt(cov_);
  if (llt.info() != Eigen::Success) throw NumericalError("GmmComponent: Cholesky factorization failed");
  chol_ = llt.matrixL();
  const double log_det = 2.0 * chol_.diagonal().array().log().sum();
  log_norm_ = -0.5 * (static_cast<double>(d) * kLog2Pi + log_det);
  if (!std::isfinite(log_norm_)) throw NumericalError("GmmComponent: non-finite normalizer");
}

double GmmComponent::log_density_point(const Eigen::Ref<const Vector>& x) const {
  check_dim(dim(), x.size(), "gmm_log_density");
  const Vector z = chol_.triangularView<Eigen::Lower>().solve(x - mu_);
  return log_norm_ - 0.5 * z.squaredNorm();
}

Vector GmmComponent::log_density(const Points& x) const {
  check_dim(dim(), x.rows(), "gmm_log_density");
  const Matrix z = chol_.triangularView<Eigen::Lower>().solve(x.colwise() - mu_);
  return (log_norm_ - 0.5 * z.colwise().squaredNorm().array()).matrix().transpose();
}

// --- mixtures --------------------------------------------------------------

void detail::validate_mixture_weights(const std::vector<double>& weights, std::size_t n_components) {
  if (weights.size() != n_components) throw std::invalid_argument("mixture: weight count != component count");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("mixture: weights must be finite and >= 0");
    sum += w;
  }
  if (sum == 0.0) throw std::invalid_argument("mixture: all weights are zero");
  if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("mixture: weights must sum to 1");
}

Vector mixture_log_density(const Matrix& component_log_densities, const std::vector<double>& weights) {
  const Eigen::Index k_count = component_log_densities.cols();
  std::vector<double> log_w(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) log_w[k] = weights[k] > 0.0 ? std::log(weights[k]) : kNegInf;
  Vector out(component_log_densities.rows());
  std::vector<double> terms(static_cast<std::size_t>(k_count));
  for (Eigen::Index i = 0; i < component_log_densities.rows(); ++i) {
    for (Eigen::Index k = 0; k < k_count; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      terms[kk] = weights[kk] > 0.0 ? log_w[kk] + component_log_densities(i, k) : kNegInf;
    }
    out[i] = log_sum_exp(terms);
  }
  return out;
}

MppcaModel::MppcaModel(std::vector<double> weights, std::vector<MppcaComponent> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
  validate_components(components_, "MppcaModel");
  for (std::size_t k = 1; k < components_.size(); ++k) {
    if (components_[k].latent_dim() != components_[0].latent_dim()) {
      throw std::invalid_argument("MppcaModel: component " + std::to_string(k) + " has a different latent dimension");
    }
  }
  detail::validate_mixture_weights(weights_, components_.size());
}

Matrix MppcaModel::component_log_densities(const Points& x) const { return stack_log_densities(components_, x); }

Vector MppcaModel::log_density(const Points& x) const {
  return mixture_log_density(component_log_densities(x), weights_);
}

double MppcaModel::log_density_point(const Eigen::Ref<const Vector>& x) const {
  return log_density(Points(x))[0];
}

Points MppcaModel::sample(std::size_t n, Rng& rng) const {
  const auto d = static_cast<Eigen::Index>(dim());
  const auto l = static_cast<Eigen::Index>(latent_dim());
  Points out(d, static_cast<Eigen::Index>(n));
  Vector z(l);
  Vector eps(d);
  for (Eigen::Index i = 0; i < out.cols(); ++i) {
    const auto& c = components_[pick_component(weights_, rng.uniform())];
    for (Eigen::Index j = 0; j < l; ++j) z[j] = rng.normal();
    for (Eigen::Index j = 0; j < d; ++j) eps[j] = rng.normal();
    out.col(i) = c.w() * z + c.mu() + std::sqrt(c.sigma2()) * eps;
  }
  return out;
}

GmmModel::GmmModel(std::vector<double> weights, std::vector<GmmComponent> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
  validate_components(components_, "GmmModel");
  detail::validate_mixture_weights(weights_, components_.size());
}

Matrix GmmModel::component_log_densities(const Points& x) const { return stack_log_densities(components_, x); }

Vector GmmModel::log_density(const Points& x) const {
  return mixture_log_density(component_log_densities(x), weights_);
}

double GmmModel::log_density_point(const Eigen::Ref<const Vector>& x) const { return log_density(Points(x))[0]; }

Points GmmModel::sample(std::size_t n, Rng& rng) const {
  const auto d = static_cast<Eigen::Index>(dim());
  Points out(d, static_cast<Eigen::Index>(n));
  Vector z(d);
  for (Eigen::Index i = 0; i < out.cols(); ++i) {
    const auto& c = components_[pick_component(weights_, rng.uniform())];
    for (Eigen::Index j = 0; j < d; ++j) z[j] = rng.normal();
    out.col(i) = c.mu() + c.cholesky().triangularView<Eigen::Lower>() * z;
  }
  return out;
}

// --- Proposal --------------------------------------------------------------

std::size_t dim(const Proposal& q) {
  return std::visit([](const auto& m) { return m.dim(); }, q);
}

std::string family_name(const Proposal& q) {
  struct Visitor {
    std::string operator()(const StandardNormalPrior&) const { return "prior"; }
    std::string operator()(const MppcaModel&) const { return "mppca"; }
    std::string operator()(const GmmModel&) const { return "gmm"; }
  };
  return std::visit(Visitor{}, q);
}

Vector log_density(const Proposal& q, const Points& x) {
  return std::visit([&](const auto& m) -> Vector { return m.log_density(x); }, q);
}

Points sample(const Proposal& q, std::size_t n, Rng& rng) {
  return std::visit([&](const auto& m) { return m.sample(n, rng); }, q);
}

}  // namespace rareis
