#include "rareis/samplers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "rareis/stats.hpp"

namespace rareis {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kChunk = 50000;
constexpr std::uint64_t kFinalBatchStream = 1u << 20;
constexpr std::uint64_t kEmStream = 1u << 21;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Accumulator {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;

  void add(double term) {
    sum += term;
    sum_sq += term * term;
    ++n;
  }
  double mean() const { return n == 0 ? 0.0 : sum / static_cast<double>(n); }
  /// CoV of the mean, population variance of the terms.
  double cov_of_mean() const {
    const double m = mean();
    if (m <= 0.0) return kInf;
    const double var = std::max(0.0, sum_sq / static_cast<double>(n) - m * m);
    return std::sqrt(var / static_cast<double>(n)) / m;
  }
};

/// Adds 1{f <= 0} p/q terms of one batch, in index order.
void accumulate_batch(Accumulator& acc, const std::vector<double>& costs, const Vector& log_w, std::size_t offset) {
  for (std::size_t i = 0; i < costs.size(); ++i) {
    const double lw = log_w[static_cast<Eigen::Index>(i)];
    if (std::isnan(lw) || lw == kInf) {
      throw NumericalError("importance weight of sample " + std::to_string(offset + i) + " is not finite");
    }
    if (std::isnan(costs[i])) throw NumericalError("cost of sample " + std::to_string(offset + i) + " is NaN");
    acc.add(costs[i] <= 0.0 ? std::exp(lw) : 0.0);
  }
}

struct Batch {
  Points x;
  std::vector<double> costs;
  Vector log_w;
  Accumulator acc;
};

Batch draw_batch(Problem& problem, const Proposal& proposal, std::size_t n, Rng& rng) {
  const StandardNormalPrior prior(problem.dim());
  Batch b;
  b.x = sample(proposal, n, rng);
  b.costs = problem.evaluate(b.x);
  if (std::holds_alternative<StandardNormalPrior>(proposal)) {
    b.log_w = Vector::Zero(static_cast<Eigen::Index>(n));
  } else {
    b.log_w = prior.log_density(b.x) - log_density(proposal, b.x);
  }
  accumulate_batch(b.acc, b.costs, b.log_w, 0);
  return b;
}

struct Fitted {
  Proposal model;
  std::size_t em_iters = 0;
  double mean_log_likelihood = 0.0;
};

Fitted fit_family(ModelFamily family, const WeightedDataset& data, const EmConfig& em, const Proposal* warm) {
  const double mass = data.weights.sum();
  switch (family) {
    case ModelFamily::prior: {
      Proposal p = StandardNormalPrior(data.dim());
      return {p, 0, weighted_log_likelihood(p, data) / mass};
    }
    case ModelFamily::mppca: {
      const MppcaModel* start = nullptr;
      if (warm != nullptr && em.warm_start) start = std::get_if<MppcaModel>(warm);
      if (start != nullptr && start->latent_dim() != em.latent_dim) start = nullptr;
      auto fit = fit_mppca(data, em, start);
      spdlog::debug("MPPCA fit: {} components, {} respawns, {} drops, {} EM iterations", fit.model.size(),
                    fit.trace.respawns, fit.trace.drops, fit.trace.iterations());
      return {std::move(fit.model), fit.trace.iterations(), fit.trace.final_log_likelihood() / mass};
    }
    case ModelFamily::gmm: {
      const GmmModel* start = nullptr;
      if (warm != nullptr && em.warm_start) start = std::get_if<GmmModel>(warm);
      auto fit = fit_gmm(data, em, start);
      return {std::move(fit.model), fit.trace.iterations(), fit.trace.final_log_likelihood() / mass};
    }
  }
  throw std::logic_error("unknown model family");
}

/// Selected columns with weights exp(log_w - max) so EM sees O(1) weights.
WeightedDataset select_weighted(const Points& x, const Vector& log_w, const std::vector<std::size_t>& idx) {
  double top = -kInf;
  for (std::size_t i : idx) top = std::max(top, log_w[static_cast<Eigen::Index>(i)]);
  WeightedDataset data;
  data.points.resize(x.rows(), static_cast<Eigen::Index>(idx.size()));
  data.weights.resize(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    data.points.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(idx[j]));
    data.weights[static_cast<Eigen::Index>(j)] = std::exp(log_w[static_cast<Eigen::Index>(idx[j])] - top);
  }
  return data;
}

EmConfig em_for_stage(const EmConfig& base, std::uint64_t seed, std::size_t stage) {
  EmConfig em = base;
  em.seed = derive_seed(seed, kEmStream + stage);
  return em;
}

/// CoV of exp(log_w) without overflow.
double cov_of_log_weights(const std::vector<double>& log_w) {
  double top = -kInf;
  for (double l : log_w) top = std::max(top, l);
  if (!std::isfinite(top)) return kInf;
  std::vector<double> w(log_w.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_w[i] - top);
  return coefficient_of_variation(w);
}

}  // namespace

ModelFamily parse_family(const std::string& name) {
  if (name == "mppca") return ModelFamily::mppca;
  if (name == "gmm") return ModelFamily::gmm;
  if (name == "prior") return ModelFamily::prior;
  throw std::invalid_argument("unknown model family '" + name + "'");
}

std::string to_string(ModelFamily family) {
  switch (family) {
    case ModelFamily::mppca: return "mppca";
    case ModelFamily::gmm: return "gmm";
    case ModelFamily::prior: return "prior";
  }
  return "?";
}

void SamplerRun::write_trace_csv(std::ostream& out, bool with_time) const {
  out << "stage,gamma_or_sigma,n_elite_or_ess,pf_partial,em_iters,wall_time_s\n";
  const auto old = out.precision(17);
  for (const auto& r : trace) {
    out << r.stage << ',' << r.level << ',' << r.count << ',' << r.pf_partial << ',' << r.em_iters << ','
        << (with_time ? r.wall_time_s : 0.0) << '\n';
  }
  out.precision(old);
}

void CeConfig::validate() const {
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("CeConfig: rho must lie in (0, 1)");
  if (n_per_iter < 1 || max_iters < 1) throw std::invalid_argument("CeConfig: n_per_iter and max_iters must be >= 1");
}

void SisConfig::validate() const {
  if (!(mh_correlation > 0.0 && mh_correlation < 1.0)) throw std::invalid_argument("SisConfig: mh_correlation must lie in (0, 1)");
  if (n_per_iter < 1 || max_stages < 1) throw std::invalid_argument("SisConfig: n_per_iter and max_stages must be >= 1");
  if (!(target_cov_incremental_weights > 0.0)) throw std::invalid_argument("SisConfig: target CoV must be positive");
  if (!(seed_fraction > 0.0 && seed_fraction <= 1.0)) throw std::invalid_argument("SisConfig: seed_fraction must lie in (0, 1]");
  if (!(sigma_min > 0.0)) throw std::invalid_argument("SisConfig: sigma_min must be positive");
}

std::uint64_t stage_seed(std::uint64_t seed, std::size_t stage) { return derive_seed(seed, stage); }

IsEstimate mc_estimate(Problem& problem, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("mc_estimate: n must be >= 1");
  Rng rng(seed);
  std::size_t failures = 0;
  for (std::size_t done = 0; done < n;) {
    const std::size_t len = std::min(kChunk, n - done);
    const Points x = standard_normal(problem.dim(), len, rng);
    const std::vector<double> costs = problem.evaluate(x);
    for (std::size_t i = 0; i < costs.size(); ++i) {
      if (std::isnan(costs[i])) throw NumericalError("cost of sample " + std::to_string(done + i) + " is NaN");
      failures += costs[i] <= 0.0 ? 1 : 0;
    }
    done += len;
  }
  IsEstimate est;
  est.pf_hat = static_cast<double>(failures) / static_cast<double>(n);
  est.cov_hat = est.pf_hat > 0.0 ? std::sqrt((1.0 - est.pf_hat) / (static_cast<double>(n) * est.pf_hat)) : kInf;
  est.n_total = n;
  est.iterations = 1;
  est.final_model = StandardNormalPrior(problem.dim());
  return est;
}

IsEstimate is_estimate(Problem& problem, const Proposal& proposal, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("is_estimate: n must be >= 1");
  if (dim(proposal) != problem.dim()) throw std::invalid_argument("is_estimate: proposal dimension mismatch");
  Rng rng(seed);
  Accumulator acc;
  for (std::size_t done = 0; done < n;) {
    const std::size_t len = std::min(kChunk, n - done);
    Batch b = draw_batch(problem, proposal, len, rng);
    // Re-accumulate with global sample indices so errors name the right sample.
    accumulate_batch(acc, b.costs, b.log_w, done);
    done += len;
  }
  IsEstimate est;
  est.pf_hat = acc.mean();
  est.cov_hat = acc.cov_of_mean();
  est.n_total = n;
  est.iterations = 1;
  est.final_model = proposal;
  return est;
}

double quantile_threshold(std::span<const double> costs, double rho) {
  if (costs.empty()) throw std::invalid_argument("quantile_threshold: no costs");
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("quantile_threshold: rho must lie in (0, 1)");
  std::vector<double> sorted(costs.begin(), costs.end());
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(rho * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1), sorted.end());
  return std::max(0.0, sorted[rank - 1]);
}

SamplerRun cross_entropy_is(Problem& problem, const CeConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CountingProblem counted(problem);
  const std::size_t d = problem.dim();
  Proposal proposal = StandardNormalPrior(d);
  std::optional<double> prev_ll;
  SamplerRun run;
  run.sis_pf = std::numeric_limits<double>::quiet_NaN();

  for (std::size_t t = 0; t < cfg.max_iters; ++t) {
    const auto start = Clock::now();
    Rng rng(stage_seed(seed, t));
    Batch batch = draw_batch(counted, proposal, cfg.n_per_iter, rng);
    const double gamma = quantile_threshold(batch.costs, cfg.rho);

    std::vector<std::size_t> elite;
    for (std::size_t i = 0; i < batch.costs.size(); ++i) {
      if (batch.costs[i] <= gamma && batch.log_w[static_cast<Eigen::Index>(i)] > -kInf) elite.push_back(i);
    }
    if (elite.empty()) throw NumericalError("cross_entropy_is: empty elite set at stage " + std::to_string(t));

    const WeightedDataset data = select_weighted(batch.x, batch.log_w, elite);
    spdlog::debug("CE stage {}: gamma {:.6g}, {} elites, elite ESS {:.1f}", t, gamma, elite.size(), data.effective_sample_size());
    Fitted fitted = fit_family(cfg.family, data, em_for_stage(cfg.em, seed, t), &proposal);

    bool last = t + 1 == cfg.max_iters;
    if (gamma == 0.0) {
      if (!cfg.require_ll_convergence) {
        last = true;
      } else if (prev_ll && std::abs(fitted.mean_log_likelihood - *prev_ll) <= cfg.ll_rel_tol * std::abs(*prev_ll)) {
        last = true;
      }
    }
    run.trace.push_back({t, gamma, static_cast<double>(elite.size()), batch.acc.mean(), fitted.em_iters, seconds_since(start)});

    if (last) {
      run.estimate.pf_hat = batch.acc.mean();
      run.estimate.cov_hat = batch.acc.cov_of_mean();
      run.estimate.iterations = t + 1;
      run.estimate.final_model = std::move(fitted.model);
      run.eval_samples = std::move(batch.x);
      run.eval_costs = std::move(batch.costs);
      break;
    }
    proposal = std::move(fitted.model);
    prev_ll = fitted.mean_log_likelihood;
  }
  run.estimate.n_total = counted.count();
  return run;
}

double log_smoothed_indicator(double cost, double sigma) {
  if (std::isinf(sigma)) return -std::log(2.0);
  return log_normal_cdf(-cost / sigma);
}

MhChains conditional_sampling_mh(Problem& problem, const Points& seeds, std::span<const double> seed_costs,
                                 double sigma, double correlation, std::size_t burn_in,
                                 std::size_t chain_length, Rng& rng) {
  if (!(correlation > 0.0 && correlation < 1.0)) throw std::invalid_argument("conditional_sampling_mh: correlation must lie in (0, 1)");
  const Eigen::Index chains = seeds.cols();
  if (static_cast<std::size_t>(chains) != seed_costs.size()) throw std::invalid_argument("conditional_sampling_mh: seed cost count mismatch");
  const auto len = static_cast<Eigen::Index>(chain_length);
  const double spread = std::sqrt(1.0 - correlation * correlation);

  Points current = seeds;
  std::vector<double> cost(seed_costs.begin(), seed_costs.end());
  std::vector<double> log_target(cost.size());
  for (std::size_t c = 0; c < cost.size(); ++c) log_target[c] = log_smoothed_indicator(cost[c], sigma);

  MhChains out;
  out.states.resize(seeds.rows(), chains * len);
  out.costs.resize(static_cast<std::size_t>(chains * len));
  std::size_t accepted = 0;
  const std::size_t steps = burn_in + chain_length;
  for (std::size_t step = 0; step < steps; ++step) {
    const Points candidates = correlation * current + spread * standard_normal(static_cast<std::size_t>(seeds.rows()), static_cast<std::size_t>(chains), rng);
    const std::vector<double> cand_cost = problem.evaluate(candidates);
    for (Eigen::Index c = 0; c < chains; ++c) {
      const auto cc = static_cast<std::size_t>(c);
      const double cand_log = log_smoothed_indicator(cand_cost[cc], sigma);
      const double u = rng.uniform();
      if (std::log(u) < cand_log - log_target[cc]) {
        current.col(c) = candidates.col(c);
        cost[cc] = cand_cost[cc];
        log_target[cc] = cand_log;
        ++accepted;
      }
      if (step >= burn_in) {
        const Eigen::Index slot = c * len + static_cast<Eigen::Index>(step - burn_in);
        out.states.col(slot) = current.col(c);
        out.costs[static_cast<std::size_t>(slot)] = cost[cc];
      }
    }
  }
  out.acceptance = steps == 0 || chains == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(steps * static_cast<std::size_t>(chains));
  return out;
}

namespace {

/// Smallest sigma in [sigma_min, upper] whose incremental-weight CoV does not
/// exceed the target, by bisection in log sigma.
double next_sigma(const std::vector<double>& costs, double sigma_prev, const SisConfig& cfg) {
  std::vector<double> log_w(costs.size());
  const auto cov_at = [&](double sigma) {
    for (std::size_t i = 0; i < costs.size(); ++i) {
      log_w[i] = log_smoothed_indicator(costs[i], sigma) - log_smoothed_indicator(costs[i], sigma_prev);
    }
    return cov_of_log_weights(log_w);
  };
  double lo = cfg.sigma_min;
  double hi = sigma_prev;
  if (std::isinf(hi)) {
    double scale = 0.0;
    for (double f : costs) scale = std::max(scale, std::abs(f));
    hi = std::max(1.0, 1e3 * scale);
  }
  if (cov_at(lo) <= cfg.target_cov_incremental_weights) return lo;
  for (int it = 0; it < 100 && hi / lo > 1.0 + 1e-12; ++it) {
    const double mid = std::sqrt(lo * hi);
    if (cov_at(mid) > cfg.target_cov_incremental_weights) lo = mid;
    else hi = mid;
  }
  return hi;
}

std::vector<std::size_t> multinomial_resample(const std::vector<double>& log_w, std::size_t count, Rng& rng) {
  double top = -kInf;
  for (double l : log_w) top = std::max(top, l);
  std::vector<double> cumulative(log_w.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < log_w.size(); ++i) {
    acc += std::exp(log_w[i] - top);
    cumulative[i] = acc;
  }
  std::vector<std::size_t> out(count);
  for (auto& idx : out) {
    const double u = rng.uniform() * acc;
    idx = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    idx = std::min(idx, log_w.size() - 1);
  }
  return out;
}

}  // namespace

SamplerRun sequential_is(Problem& problem, const SisConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CountingProblem counted(problem);
  const std::size_t d = problem.dim();
  const std::size_t n = cfg.n_per_iter;
  const StandardNormalPrior prior(d);
  SamplerRun run;

  auto start = Clock::now();
  Rng rng0(stage_seed(seed, 0));
  Points x = prior.sample(n, rng0);
  std::vector<double> f = counted.evaluate(x);
  double sigma = kInf;
  // Normalizing constant of the current target p(x) Phi(-f(x)/sigma); the
  // untempered start p(x) Phi(0) has mass 1/2.
  double log_product = log_smoothed_indicator(0.0, sigma);
  double correlation = cfg.mh_correlation;
  run.trace.push_back({0, sigma, static_cast<double>(n), std::exp(log_product), 0, seconds_since(start)});

  const auto final_log_weights = [&](double s) {
    std::vector<double> lw(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) lw[i] = f[i] <= 0.0 ? -log_smoothed_indicator(f[i], s) : -kInf;
    return lw;
  };

  std::size_t stage = 1;
  for (; stage <= cfg.max_stages; ++stage) {
    if (sigma <= cfg.sigma_min) break;
    if (cov_of_log_weights(final_log_weights(sigma)) <= cfg.target_cov_incremental_weights) break;

    start = Clock::now();
    const double sigma_next = next_sigma(f, sigma, cfg);
    std::vector<double> log_inc(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
      log_inc[i] = log_smoothed_indicator(f[i], sigma_next) - log_smoothed_indicator(f[i], sigma);
    }
    const double log_ratio = log_sum_exp(log_inc) - std::log(static_cast<double>(f.size()));
    if (!std::isfinite(log_ratio)) throw NumericalError("sequential_is: tempering step too aggressive (all incremental weights are zero)");
    log_product += log_ratio;

    Rng rng(stage_seed(seed, stage));
    const auto chains = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.seed_fraction * static_cast<double>(n))));
    const std::size_t chain_length = (n + chains - 1) / chains;
    const auto picks = multinomial_resample(log_inc, chains, rng);
    Points seeds(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(chains));
    std::vector<double> seed_costs(chains);
    for (std::size_t c = 0; c < chains; ++c) {
      seeds.col(static_cast<Eigen::Index>(c)) = x.col(static_cast<Eigen::Index>(picks[c]));
      seed_costs[c] = f[picks[c]];
    }
    MhChains moved = conditional_sampling_mh(counted, seeds, seed_costs, sigma_next, correlation, cfg.burn_in, chain_length, rng);
    x = std::move(moved.states);
    f = std::move(moved.costs);
    run.mh_acceptance = moved.acceptance;
    correlation = moved.acceptance < cfg.target_acceptance ? correlation * 1.1 : correlation * 0.9;
    correlation = std::clamp(correlation, 0.1, 0.99);

    const double ess = [&] {
      const double cov = cov_of_log_weights(log_inc);
      return static_cast<double>(log_inc.size()) / (1.0 + cov * cov);
    }();
    sigma = sigma_next;
    run.trace.push_back({stage, sigma, ess, std::exp(log_product), 0, seconds_since(start)});
  }

  // Telescoping estimate with the exact indicator correction at the last level.
  const auto lw_final = final_log_weights(sigma);
  double correction = 0.0;
  for (double l : lw_final) correction += l > -kInf ? std::exp(l) : 0.0;
  correction /= static_cast<double>(f.size());
  run.sis_pf = std::exp(log_product) * correction;

  start = Clock::now();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] <= 0.0) keep.push_back(i);
  }
  WeightedDataset data;
  if (keep.size() >= std::max<std::size_t>(cfg.em.components, 1)) {
    Vector lw(static_cast<Eigen::Index>(f.size()));
    for (std::size_t i = 0; i < f.size(); ++i) lw[static_cast<Eigen::Index>(i)] = lw_final[i];
    data = select_weighted(x, lw, keep);
  } else {
    data = unweighted(x);
  }
  Fitted fitted = fit_family(cfg.family, data, em_for_stage(cfg.em, seed, stage), nullptr);

  Rng final_rng(stage_seed(seed, kFinalBatchStream));
  Batch batch = draw_batch(counted, fitted.model, n, final_rng);
  run.trace.push_back({stage, 0.0, static_cast<double>(keep.size()), batch.acc.mean(), fitted.em_iters, seconds_since(start)});

  run.estimate.pf_hat = batch.acc.mean();
  run.estimate.cov_hat = batch.acc.cov_of_mean();
  run.estimate.iterations = stage;
  run.estimate.final_model = std::move(fitted.model);
  run.estimate.n_total = counted.count();
  run.eval_samples = std::move(batch.x);
  run.eval_costs = std::move(batch.costs);
  return run;
}

}  // namespace rareis
