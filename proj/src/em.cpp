#include "rareis/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "rareis/cluster.hpp"
#include "rareis/stats.hpp"

namespace rareis {

void WeightedDataset::validate() const {
  if (points.cols() < 1) throw std::invalid_argument("WeightedDataset: need at least one point");
  if (weights.size() != points.cols()) throw std::invalid_argument("WeightedDataset: weight count mismatch");
  bool any_positive = false;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(weights[i]) || weights[i] < 0.0) {
      throw std::invalid_argument("WeightedDataset: weight " + std::to_string(i) + " is negative or not finite");
    }
    any_positive = any_positive || weights[i] > 0.0;
  }
  if (!any_positive) throw std::invalid_argument("WeightedDataset: all weights are zero");
  if (!points.allFinite()) throw std::invalid_argument("WeightedDataset: non-finite point coordinates");
}

double WeightedDataset::effective_sample_size() const {
  const double s = weights.sum();
  const double s2 = weights.squaredNorm();
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

WeightedDataset unweighted(Points points) {
  const auto n = points.cols();
  return WeightedDataset{std::move(points), Vector::Ones(n)};
}

void FitTrace::write_csv(std::ostream& out) const {
  out << "iteration,L_w,min_pi,min_sigma2\n";
  const auto old = out.precision(17);
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.log_likelihood << ',' << r.min_weight << ',' << r.min_variance << '\n';
  }
  out.precision(old);
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct EStep {
  Matrix resp;                 // N x K
  double log_likelihood = 0.0;
};

/// Shared E-step. `log_dens` holds ln q(x_n | k).
EStep expectation(const Matrix& log_dens, const std::vector<double>& pis, const Vector& w) {
  const Eigen::Index n = log_dens.rows();
  const Eigen::Index k_count = log_dens.cols();
  EStep out;
  out.resp = Matrix::Zero(n, k_count);
  std::vector<double> terms(static_cast<std::size_t>(k_count));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < k_count; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      terms[kk] = pis[kk] > 0.0 ? std::log(pis[kk]) + log_dens(i, k) : kNegInf;
    }
    const double ll = log_sum_exp(terms);
    if (!std::isfinite(ll)) {
      throw NumericalError("responsibilities: point " + std::to_string(i) +
                           " has zero density under every component");
    }
    if (w[i] == 0.0) continue;
    out.log_likelihood += w[i] * ll;
    for (Eigen::Index k = 0; k < k_count; ++k) {
      out.resp(i, k) = w[i] * std::exp(terms[static_cast<std::size_t>(k)] - ll);
    }
  }
  return out;
}

struct Moments {
  Vector mean;
  Matrix scatter;  // full symmetric, normalized by the mass
};

Moments weighted_moments(const Points& x, const Vector& r, double mass) {
  Moments m;
  m.mean = (x * r) / mass;
  const Matrix y = x.colwise() - m.mean;
  const Matrix ys = y * r.cwiseSqrt().asDiagonal();
  Matrix s = Matrix::Zero(x.rows(), x.rows());
  s.selfadjointView<Eigen::Lower>().rankUpdate(ys);
  s = s.selfadjointView<Eigen::Lower>();
  m.scatter = s / mass;
  return m;
}

struct MppcaFamily {
  using Model = MppcaModel;
  using Component = MppcaComponent;

  static Component from_moments(const Moments& m, const EmConfig& cfg) {
    const auto d = m.mean.size();
    const auto l = static_cast<Eigen::Index>(cfg.latent_dim);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m.scatter);
    if (eig.info() != Eigen::Success) throw NumericalError("fit_mppca: eigendecomposition failed");
    const Vector& lambda = eig.eigenvalues();  // ascending
    double sigma2 = lambda.head(d - l).sum() / static_cast<double>(d - l);
    sigma2 = std::max(sigma2, cfg.sigma2_floor);
    Matrix w = eig.eigenvectors().rightCols(l);
    for (Eigen::Index j = 0; j < l; ++j) {
      w.col(j) *= std::sqrt(std::max(lambda[d - l + j] - sigma2, 0.0));
    }
    return Component(m.mean, std::move(w), sigma2, cfg.sigma2_floor);
  }

  /// A rank-l factor plus noise variance needs more than l + 1 effective points;
  /// below that sigma2 runs into the floor and the component degenerates.
  static double min_component_ess(const EmConfig& cfg) { return static_cast<double>(cfg.latent_dim) + 2.0; }

  static Component respawn(const Vector& at, const Moments& total, const EmConfig& cfg) {
    const auto d = at.size();
    const double var = std::max(total.scatter.trace() / static_cast<double>(d), cfg.sigma2_floor);
    return Component(at, Matrix::Zero(d, static_cast<Eigen::Index>(cfg.latent_dim)), var, cfg.sigma2_floor);
  }

  static double variance_floor_of(const Component& c) { return c.sigma2(); }
};

struct GmmFamily {
  using Model = GmmModel;
  using Component = GmmComponent;

  static Component from_moments(const Moments& m, const EmConfig& cfg) {
    const auto d = m.mean.size();
    double ridge = cfg.ridge * m.scatter.trace() / static_cast<double>(d);
    if (!(ridge > 0.0)) ridge = cfg.sigma2_floor;
    Matrix cov = m.scatter;
    cov.diagonal().array() += ridge;
    return Component(m.mean, std::move(cov));
  }

  /// The ridge keeps full covariances nonsingular, so only the mass floor applies.
  static double min_component_ess(const EmConfig&) { return 0.0; }

  static Component respawn(const Vector& at, const Moments& total, const EmConfig& cfg) {
    return from_moments(Moments{at, total.scatter}, cfg);
  }

  static double variance_floor_of(const Component& c) { return c.cov().diagonal().minCoeff(); }
};

void normalize(std::vector<double>& pis) {
  const double s = std::accumulate(pis.begin(), pis.end(), 0.0);
  for (double& p : pis) p /= s;
}

template <class Family>
class EmRunner {
 public:
  using Component = typename Family::Component;
  using Model = typename Family::Model;

  EmRunner(const WeightedDataset& data, const EmConfig& cfg)
      : data_(data), cfg_(cfg), rng_(cfg.seed), total_mass_(data.weights.sum()) {
    total_ = weighted_moments(data_.points, data_.weights, total_mass_);
  }

  FitResult<Model> run(const Model* warm) {
    FitTrace trace;
    if (data_.effective_sample_size() < static_cast<double>(cfg_.components)) {
      trace.warnings.push_back("effective sample size " + std::to_string(data_.effective_sample_size()) +
                               " is below the component count");
    }
    bool restructured = false;
    if (warm != nullptr) {
      if (warm->dim() != data_.dim()) throw std::invalid_argument("EM warm start: dimension mismatch");
      comps_ = warm->components();
      pis_ = warm->weights();
      respawned_.assign(comps_.size(), false);
    } else {
      restructured = initialize(trace);
    }

    std::optional<double> prev;
    for (std::size_t iter = 0;; ++iter) {
      const EStep e = expectation(component_log_densities(), pis_, data_.weights);
      FitTraceRow row;
      row.iteration = iter;
      row.log_likelihood = e.log_likelihood;
      row.min_weight = *std::min_element(pis_.begin(), pis_.end());
      row.min_variance = kInf;
      for (const auto& c : comps_) row.min_variance = std::min(row.min_variance, Family::variance_floor_of(c));
      row.restructured = restructured;
      trace.rows.push_back(row);

      if (prev && !restructured) {
        const double gain = e.log_likelihood - *prev;
        if (gain < -1e-8 * std::max(1.0, std::abs(*prev))) {
          trace.warnings.push_back("log-likelihood decreased at iteration " + std::to_string(iter));
        }
        if (gain <= cfg_.rel_tol * std::abs(*prev)) {
          trace.converged = true;
          break;
        }
      }
      if (iter == cfg_.max_iters) break;
      prev = e.log_likelihood;
      restructured = maximize(e.resp, trace);
    }
    return {Model(pis_, comps_), std::move(trace)};
  }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  Matrix component_log_densities() const {
    Matrix out(data_.points.cols(), static_cast<Eigen::Index>(comps_.size()));
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      out.col(static_cast<Eigen::Index>(k)) = comps_[k].log_density(data_.points);
    }
    return out;
  }

  bool initialize(FitTrace& trace) {
    const auto n = data_.size();
    const std::size_t k_count = cfg_.components;
    Matrix resp = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k_count));
    if (cfg_.init == EmInit::kmeans) {
      const std::span<const double> w(data_.weights.data(), n);
      const KMeansResult km = kmeans(data_.points, w, k_count, cfg_.kmeans_iters, rng_);
      for (std::size_t i = 0; i < n; ++i) {
        resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(km.labels[i])) = data_.weights[static_cast<Eigen::Index>(i)];
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t k = 0; k < k_count; ++k) {
          const double u = rng_.uniform() + 1e-12;
          resp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = u;
          sum += u;
        }
        resp.row(static_cast<Eigen::Index>(i)) *= data_.weights[static_cast<Eigen::Index>(i)] / sum;
      }
    }
    comps_.clear();
    pis_.clear();
    respawned_.assign(k_count, false);
    // Placeholders so maximize() can index slots; all are overwritten.
    comps_.assign(k_count, Family::respawn(total_.mean, total_, cfg_));
    pis_.assign(k_count, 1.0 / static_cast<double>(k_count));
    return maximize(resp, trace);
  }

  /// M-step; returns true if a component was respawned or dropped.
  bool maximize(const Matrix& resp, FitTrace& trace) {
    bool restructured = false;
    std::vector<Component> next;
    std::vector<double> next_pis;
    std::vector<bool> next_respawned;
    for (std::size_t k = 0; k < comps_.size(); ++k) {
      const Vector r = resp.col(static_cast<Eigen::Index>(k));
      const double mass = r.sum();
      const double ess = mass * mass / r.squaredNorm();
      const bool starved = comps_.size() > 1 && ess < Family::min_component_ess(cfg_);
      if (mass < cfg_.weight_floor * total_mass_ || !(mass > 0.0) || starved) {
        restructured = true;
        if (respawned_[k]) {
          ++trace.drops;
          continue;
        }
        ++trace.respawns;
        next.push_back(Family::respawn(data_.points.col(static_cast<Eigen::Index>(high_weight_index())), total_, cfg_));
        next_pis.push_back(1.0 / static_cast<double>(comps_.size()));
        next_respawned.push_back(true);
        continue;
      }
      try {
        next.push_back(Family::from_moments(weighted_moments(data_.points, r, mass), cfg_));
      } catch (const std::exception& ex) {
        throw NumericalError("component " + std::to_string(k) + ": " + ex.what());
      }
      next_pis.push_back(mass / total_mass_);
      next_respawned.push_back(respawned_[k]);
    }
    if (next.empty()) {
      // The data support no more than one component: fall back to the K = 1 fit.
      trace.warnings.push_back("every component collapsed; refitting a single component");
      next.push_back(Family::from_moments(total_, cfg_));
      next_pis.assign(1, 1.0);
      next_respawned.assign(1, true);
    }
    normalize(next_pis);
    comps_ = std::move(next);
    pis_ = std::move(next_pis);
    respawned_ = std::move(next_respawned);
    return restructured;
  }

  std::size_t high_weight_index() {
    std::vector<std::size_t> order(data_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return data_.weights[static_cast<Eigen::Index>(a)] > data_.weights[static_cast<Eigen::Index>(b)];
    });
    const std::size_t top = std::max<std::size_t>(1, order.size() / 10);
    const auto pick = static_cast<std::size_t>(rng_.uniform() * static_cast<double>(top));
    return order[std::min(pick, top - 1)];
  }

  const WeightedDataset& data_;
  const EmConfig& cfg_;
  Rng rng_;
  double total_mass_;
  Moments total_;
  std::vector<Component> comps_;
  std::vector<double> pis_;
  std::vector<bool> respawned_;
};

void check_config(const WeightedDataset& data, const EmConfig& cfg, bool needs_latent) {
  data.validate();
  if (cfg.components < 1) throw std::invalid_argument("EmConfig: need K >= 1");
  if (needs_latent && (cfg.latent_dim < 1 || cfg.latent_dim >= data.dim())) {
    throw std::invalid_argument("EmConfig: latent dimension must satisfy 1 <= l < d");
  }
  if (data.size() < cfg.components) throw std::invalid_argument("EM: fewer points than components");
}

template <class Model>
Matrix responsibilities_impl(const Model& model, const WeightedDataset& data) {
  data.validate();
  if (model.dim() != data.dim()) throw std::invalid_argument("responsibilities: dimension mismatch");
  return expectation(model.component_log_densities(data.points), model.weights(), data.weights).resp;
}

}  // namespace

Matrix responsibilities(const MppcaModel& model, const WeightedDataset& data) {
  return responsibilities_impl(model, data);
}

Matrix responsibilities(const GmmModel& model, const WeightedDataset& data) {
  return responsibilities_impl(model, data);
}

double weighted_log_likelihood(const Proposal& model, const WeightedDataset& data) {
  const Vector ll = log_density(model, data.points);
  double total = 0.0;
  for (Eigen::Index i = 0; i < ll.size(); ++i) {
    if (data.weights[i] > 0.0) total += data.weights[i] * ll[i];
  }
  return total;
}

FitResult<MppcaModel> fit_mppca(const WeightedDataset& data, const EmConfig& cfg, const MppcaModel* warm) {
  check_config(data, cfg, true);
  if (warm != nullptr && warm->latent_dim() != cfg.latent_dim) {
    throw std::invalid_argument("fit_mppca: warm-start latent dimension differs from config");
  }
  return EmRunner<MppcaFamily>(data, cfg).run(warm);
}

FitResult<GmmModel> fit_gmm(const WeightedDataset& data, const EmConfig& cfg, const GmmModel* warm) {
  check_config(data, cfg, false);
  return EmRunner<GmmFamily>(data, cfg).run(warm);
}

}  // namespace rareis
