#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rareis/types.hpp"

namespace rareis {

/// A simulated system with a standard-normal prior over x in R^d. A sample
/// fails iff its cost is <= 0. Costs are deterministic functions of x.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::string description() const { return name(); }

  /// Cost of every column of x.
  virtual std::vector<double> evaluate(const Points& x) = 0;

  void set_workers(std::size_t workers) { workers_ = workers == 0 ? 1 : workers; }
  std::size_t workers() const { return workers_; }

 private:
  std::size_t workers_ = 1;
};

/// Forwards to another problem and counts every cost evaluation.
class CountingProblem final : public Problem {
 public:
  explicit CountingProblem(Problem& inner) : inner_(inner) {}

  std::string name() const override { return inner_.name(); }
  std::size_t dim() const override { return inner_.dim(); }
  std::string description() const override { return inner_.description(); }
  std::vector<double> evaluate(const Points& x) override;

  std::size_t count() const { return count_; }

 private:
  Problem& inner_;
  std::size_t count_ = 0;
};

/// In-process problem from a per-point cost function.
class FunctionProblem final : public Problem {
 public:
  using Cost = std::function<double(const Eigen::Ref<const Vector>&)>;

  FunctionProblem(std::string name, std::size_t d, Cost cost);

  std::string name() const override { return name_; }
  std::size_t dim() const override { return d_; }
  std::vector<double> evaluate(const Points& x) override;

 private:
  std::string name_;
  std::size_t d_;
  Cost cost_;
};

// --- Branches ----------------------------------------------------------------

struct BranchesParams {
  double beta = 3.5;
  std::size_t d = 40;  // even, >= 2

  void validate() const;
};

/// min{beta + s, beta - s, beta + t, beta - t} with s = sum(x) / sqrt(d) and
/// t = (sum of first half - sum of second half) / sqrt(d).
double branches_cost(const Eigen::Ref<const Vector>& x, const BranchesParams& p);

/// 4 Phi(-beta). s and t are independent N(0, 1), the antipodal events are
/// disjoint, and the omitted pairwise intersections total exactly
/// branches_reference_pf_error(p) = 4 Phi(-beta)^2.
double branches_reference_pf(const BranchesParams& p);
double branches_reference_pf_error(const BranchesParams& p);

class BranchesProblem final : public Problem {
 public:
  explicit BranchesProblem(BranchesParams params);

  std::string name() const override { return "branches"; }
  std::size_t dim() const override { return params_.d; }
  std::string description() const override;
  std::vector<double> evaluate(const Points& x) override;

  const BranchesParams& params() const { return params_; }

 private:
  BranchesParams params_;
};

// --- Duffing oscillator --------------------------------------------------------

/// m u'' + c u' + k (u + gamma u^3) = -m sigma sum_i (x_i cos(w_i t) + x_{d/2+i} sin(w_i t))
/// integrated by fixed-step classical RK4 from (u0, v0) to t_max.
struct DuffingParams {
  double m = 1000.0;                            // kg
  double c = 200.0 * 3.14159265358979323846;    // N s / m
  double k = 1000.0 * 4.0 * 3.14159265358979323846 * 3.14159265358979323846;  // N / m
  double gamma = 1.0;                           // 1 / m^2
  double u1 = 0.1;                              // m
  double u2 = -0.06;                            // m
  double t_max = 2.0;                           // s
  double u0 = 0.0;                              // m
  double v0 = 1.5;                              // m / s
  std::size_t d = 100;                          // even
  double dt = 1e-3;                             // s

  double delta_omega() const;  // 30 pi / d
  double omega(std::size_t i) const { return static_cast<double>(i) * delta_omega(); }  // i = 1..d/2
  double sigma() const;        // sqrt(0.01 delta_omega)
  std::size_t steps() const;   // t_max / dt
  void validate() const;
};

/// Displacement u(t_max). Evaluates the forcing term directly at each RK4
/// stage time.
double duffing_displacement(const Eigen::Ref<const Vector>& x, const DuffingParams& p);

/// min(u1 - u(t_max), u(t_max) - u2)
double duffing_cost(const Eigen::Ref<const Vector>& x, const DuffingParams& p);

/// Batch evaluator. Precomputes the forcing basis on the half-step time grid
/// once, so the forcing of a batch is a single matrix product.
class DuffingProblem final : public Problem {
 public:
  explicit DuffingProblem(DuffingParams params);

  std::string name() const override { return "oscillator"; }
  std::size_t dim() const override { return params_.d; }
  std::string description() const override;
  std::vector<double> evaluate(const Points& x) override;

  const DuffingParams& params() const { return params_; }

 private:
  DuffingParams params_;
  Matrix basis_;  // (2 steps + 1) x d, forcing per unit mass at t = j dt / 2
};

}  // namespace rareis
