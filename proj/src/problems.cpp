#include "rareis/problems.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "rareis/parallel.hpp"
#include "rareis/stats.hpp"

namespace rareis {

std::vector<double> CountingProblem::evaluate(const Points& x) {
  auto out = inner_.evaluate(x);
  count_ += static_cast<std::size_t>(x.cols());
  return out;
}

FunctionProblem::FunctionProblem(std::string name, std::size_t d, Cost cost)
    : name_(std::move(name)), d_(d), cost_(std::move(cost)) {}

std::vector<double> FunctionProblem::evaluate(const Points& x) {
  if (static_cast<std::size_t>(x.rows()) != d_) throw std::invalid_argument(name_ + ": dimension mismatch");
  std::vector<double> out(static_cast<std::size_t>(x.cols()));
  parallel_for(out.size(), workers(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = cost_(x.col(static_cast<Eigen::Index>(i)));
  });
  return out;
}

// --- Branches ----------------------------------------------------------------

void BranchesParams::validate() const {
  if (d < 2 || d % 2 != 0) throw std::invalid_argument("branches: d must be even and >= 2");
  if (!std::isfinite(beta)) throw std::invalid_argument("branches: beta must be finite");
}

double branches_cost(const Eigen::Ref<const Vector>& x, const BranchesParams& p) {
  p.validate();
  if (static_cast<std::size_t>(x.size()) != p.d) throw std::invalid_argument("branches_cost: dimension mismatch");
  const auto half = static_cast<Eigen::Index>(p.d / 2);
  const double first = x.head(half).sum();
  const double second = x.tail(half).sum();
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.d));
  const double s = (first + second) * scale;
  const double t = (first - second) * scale;
  return std::min({p.beta + s, p.beta - s, p.beta + t, p.beta + (-first + second) * scale});
}

double branches_reference_pf(const BranchesParams& p) {
  if (!(p.beta > 0.0)) throw std::invalid_argument("branches_reference_pf: beta must be positive");
  return 4.0 * normal_cdf(-p.beta);
}

double branches_reference_pf_error(const BranchesParams& p) {
  const double tail = normal_cdf(-p.beta);
  return 4.0 * tail * tail;
}

BranchesProblem::BranchesProblem(BranchesParams params) : params_(params) { params_.validate(); }

std::string BranchesProblem::description() const {
  std::ostringstream out;
  out << "branches d=" << params_.d << " beta=" << params_.beta;
  return out.str();
}

std::vector<double> BranchesProblem::evaluate(const Points& x) {
  if (static_cast<std::size_t>(x.rows()) != params_.d) throw std::invalid_argument("branches: dimension mismatch");
  std::vector<double> out(static_cast<std::size_t>(x.cols()));
  parallel_for(out.size(), workers(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = branches_cost(x.col(static_cast<Eigen::Index>(i)), params_);
  });
  return out;
}

// --- Duffing -------------------------------------------------------------------

double DuffingParams::delta_omega() const { return 30.0 * std::numbers::pi / static_cast<double>(d); }

double DuffingParams::sigma() const { return std::sqrt(0.01 * delta_omega()); }

std::size_t DuffingParams::steps() const { return static_cast<std::size_t>(std::llround(t_max / dt)); }

void DuffingParams::validate() const {
  if (d < 2 || d % 2 != 0) throw std::invalid_argument("oscillator: d must be even and >= 2");
  if (!(dt > 0.0) || !(t_max > 0.0)) throw std::invalid_argument("oscillator: dt and t_max must be positive");
  const double ratio = t_max / dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
    throw std::invalid_argument("oscillator: dt must divide t_max evenly");
  }
  if (!(m > 0.0)) throw std::invalid_argument("oscillator: mass must be positive");
}

namespace {

/// Fixed-step RK4; forcing(j) is the forcing per unit mass at t = j dt / 2.
template <class Forcing>
double integrate_duffing(const DuffingParams& p, Forcing&& forcing) {
  const double damping = p.c / p.m;
  const double stiffness = p.k / p.m;
  const double h = p.dt;
  const auto accel = [&](double u, double v, double f) {
    return f - damping * v - stiffness * (u + p.gamma * u * u * u);
  };
  double u = p.u0;
  double v = p.v0;
  const std::size_t steps = p.steps();
  for (std::size_t j = 0; j < steps; ++j) {
    const double f0 = forcing(2 * j);
    const double fh = forcing(2 * j + 1);
    const double f1 = forcing(2 * j + 2);
    const double k1u = v;
    const double k1v = accel(u, v, f0);
    const double k2u = v + 0.5 * h * k1v;
    const double k2v = accel(u + 0.5 * h * k1u, v + 0.5 * h * k1v, fh);
    const double k3u = v + 0.5 * h * k2v;
    const double k3v = accel(u + 0.5 * h * k2u, v + 0.5 * h * k2v, fh);
    const double k4u = v + h * k3v;
    const double k4v = accel(u + h * k3u, v + h * k3v, f1);
    u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
    v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    if (!std::isfinite(u) || !std::isfinite(v)) {
      std::ostringstream msg;
      msg << "oscillator: non-finite state at t=" << static_cast<double>(j + 1) * h;
      throw NumericalError(msg.str());
    }
  }
  return u;
}

double half_step_time(const DuffingParams& p, std::size_t j) { return static_cast<double>(j) * (0.5 * p.dt); }

double cost_from_displacement(double u, const DuffingParams& p) { return std::min(p.u1 - u, u - p.u2); }

}  // namespace

double duffing_displacement(const Eigen::Ref<const Vector>& x, const DuffingParams& p) {
  p.validate();
  if (static_cast<std::size_t>(x.size()) != p.d) throw std::invalid_argument("duffing_cost: dimension mismatch");
  const std::size_t half = p.d / 2;
  const double sigma = p.sigma();
  return integrate_duffing(p, [&](std::size_t j) {
    const double t = half_step_time(p, j);
    double f = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
      const double wt = p.omega(i + 1) * t;
      f += x[static_cast<Eigen::Index>(i)] * std::cos(wt) + x[static_cast<Eigen::Index>(half + i)] * std::sin(wt);
    }
    return -sigma * f;
  });
}

double duffing_cost(const Eigen::Ref<const Vector>& x, const DuffingParams& p) {
  return cost_from_displacement(duffing_displacement(x, p), p);
}

DuffingProblem::DuffingProblem(DuffingParams params) : params_(params) {
  params_.validate();
  const std::size_t half = params_.d / 2;
  const std::size_t points = 2 * params_.steps() + 1;
  const double sigma = params_.sigma();
  basis_.resize(static_cast<Eigen::Index>(points), static_cast<Eigen::Index>(params_.d));
  for (std::size_t j = 0; j < points; ++j) {
    const double t = half_step_time(params_, j);
    for (std::size_t i = 0; i < half; ++i) {
      const double wt = params_.omega(i + 1) * t;
      basis_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = -sigma * std::cos(wt);
      basis_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(half + i)) = -sigma * std::sin(wt);
    }
  }
}

std::string DuffingProblem::description() const {
  std::ostringstream out;
  out << "duffing oscillator d=" << params_.d << " dt=" << params_.dt;
  return out.str();
}

std::vector<double> DuffingProblem::evaluate(const Points& x) {
  if (static_cast<std::size_t>(x.rows()) != params_.d) throw std::invalid_argument("oscillator: dimension mismatch");
  const auto n = static_cast<std::size_t>(x.cols());
  std::vector<double> out(n);
  constexpr std::size_t kChunk = 128;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  parallel_for(chunks, workers(), [&](std::size_t begin, std::size_t end) {
    Matrix forcing;
    for (std::size_t c = begin; c < end; ++c) {
      const std::size_t start = c * kChunk;
      const std::size_t len = std::min(kChunk, n - start);
      forcing.noalias() = basis_ * x.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len));
      for (std::size_t i = 0; i < len; ++i) {
        const auto col = forcing.col(static_cast<Eigen::Index>(i));
        const double u = integrate_duffing(params_, [&](std::size_t j) { return col[static_cast<Eigen::Index>(j)]; });
        out[start + i] = cost_from_displacement(u, params_);
      }
    }
  });
  return out;
}

}  // namespace rareis
