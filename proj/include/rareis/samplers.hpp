#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rareis/density.hpp"
#include "rareis/em.hpp"
#include "rareis/problems.hpp"

namespace rareis {

/// Proposal family refit at each stage; `prior` keeps q = p (no EM).
enum class ModelFamily { mppca, gmm, prior };

ModelFamily parse_family(const std::string& name);
std::string to_string(ModelFamily family);

struct IsEstimate {
  double pf_hat = 0.0;
  /// Coefficient of variation of pf_hat (infinite when pf_hat = 0).
  double cov_hat = 0.0;
  std::size_t n_total = 0;
  std::size_t iterations = 0;
  std::optional<Proposal> final_model;
};

/// One adaptive stage. `level` is the CE threshold gamma_t or the SIS
/// smoothing width sigma_t; `count` is the CE elite count or the SIS
/// effective sample size of the incremental weights. `pf_partial` is the
/// stage batch's IS estimate (CE) or the running normalizing constant of the
/// tempered target (SIS).
struct StageRecord {
  std::size_t stage = 0;
  double level = 0.0;
  double count = 0.0;
  double pf_partial = 0.0;
  std::size_t em_iters = 0;
  double wall_time_s = 0.0;
};

struct SamplerRun {
  IsEstimate estimate;
  std::vector<StageRecord> trace;
  /// Final estimation batch, drawn from the proposal that produced pf_hat.
  Points eval_samples;
  std::vector<double> eval_costs;
  /// SIS telescoping-product estimate (NaN for CE).
  double sis_pf = 0.0;
  /// MH acceptance rate of the last SIS stage.
  double mh_acceptance = 0.0;

  /// CSV: stage,gamma_or_sigma,n_elite_or_ess,pf_partial,em_iters,wall_time_s.
  /// Wall times are written as 0 unless `with_time`, which keeps the file a
  /// pure function of (config, seed).
  void write_trace_csv(std::ostream& out, bool with_time) const;
};

struct CeConfig {
  double rho = 0.2;
  std::size_t n_per_iter = 10000;
  std::size_t max_iters = 20;
  /// Only consulted when require_ll_convergence is set: keep iterating after
  /// gamma reaches 0 until the elite weighted mean log-likelihood changes by
  /// less than this fraction between stages.
  double ll_rel_tol = 1e-3;
  bool require_ll_convergence = false;
  ModelFamily family = ModelFamily::mppca;
  EmConfig em;

  void validate() const;
};

struct SisConfig {
  std::size_t n_per_iter = 10000;
  double target_cov_incremental_weights = 1.5;
  std::size_t burn_in = 5;
  /// Initial conditional-sampling correlation; adapted towards target_acceptance.
  double mh_correlation = 0.8;
  double target_acceptance = 0.44;
  std::size_t max_stages = 30;
  double sigma_min = 1e-4;
  /// Fraction of n_per_iter resampled as chain seeds each stage.
  double seed_fraction = 0.1;
  ModelFamily family = ModelFamily::mppca;
  EmConfig em;

  void validate() const;
};

/// Seed of the sampling stream used by adaptive stage `stage`.
std::uint64_t stage_seed(std::uint64_t seed, std::size_t stage);

/// Plain Monte Carlo with x ~ p.
IsEstimate mc_estimate(Problem& problem, std::size_t n, std::uint64_t seed);

/// Importance sampling with x ~ q and weights p/q. With q = p it reproduces
/// mc_estimate for the same seed.
IsEstimate is_estimate(Problem& problem, const Proposal& proposal, std::size_t n, std::uint64_t seed);

/// max(0, ceil(rho n)-th smallest cost).
double quantile_threshold(std::span<const double> costs, double rho);

/// Cross-entropy IS. Each stage draws n_per_iter fresh points from the current
/// proposal; the first stage whose threshold reaches 0 is the estimation batch.
SamplerRun cross_entropy_is(Problem& problem, const CeConfig& cfg, std::uint64_t seed);

/// Sequential IS over tempered targets p(x) Phi(-f(x)/sigma_t), followed by a
/// proposal fit on the final particles and a fresh IS batch.
SamplerRun sequential_is(Problem& problem, const SisConfig& cfg, std::uint64_t seed);

/// log Phi(-f / sigma); sigma = +inf gives log(1/2).
double log_smoothed_indicator(double cost, double sigma);

struct MhChains {
  Points states;              // retained states, chain-major
  std::vector<double> costs;
  double acceptance = 0.0;
};

/// Conditional-sampling Metropolis-Hastings targeting p(x) Phi(-f(x)/sigma).
/// Candidates x' = rho x + sqrt(1 - rho^2) xi keep N(0, I) invariant, so the
/// acceptance ratio only involves the smoothed indicator. Each seed starts one
/// chain; the first `burn_in` moves are discarded and the next
/// `chain_length` states are kept.
MhChains conditional_sampling_mh(Problem& problem, const Points& seeds, std::span<const double> seed_costs,
                                 double sigma, double correlation, std::size_t burn_in,
                                 std::size_t chain_length, Rng& rng);

}  // namespace rareis
