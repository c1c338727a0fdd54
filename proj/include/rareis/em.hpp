#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rareis/density.hpp"
#include "rareis/types.hpp"

namespace rareis {

/// Points with importance weights w_n = p(x_n) / q(x_n).
struct WeightedDataset {
  Points points;   // d x N
  Vector weights;  // N, finite, >= 0, at least one positive

  std::size_t size() const { return static_cast<std::size_t>(points.cols()); }
  std::size_t dim() const { return static_cast<std::size_t>(points.rows()); }
  void validate() const;
  /// (sum w)^2 / sum w^2
  double effective_sample_size() const;
};

/// Unit weights on every point.
WeightedDataset unweighted(Points points);

enum class EmInit { kmeans, random_responsibility };

struct EmConfig {
  std::size_t max_iters = 200;
  double rel_tol = 1e-5;
  std::size_t latent_dim = 8;
  std::size_t components = 8;
  double sigma2_floor = kDefaultSigma2Floor;
  /// A component whose responsibility mass falls below weight_floor * sum(w)
  /// has collapsed. MPPCA components also collapse when the effective sample
  /// size of their responsibilities drops below latent_dim + 2 while other
  /// components remain. If every component collapses the fit falls back to a
  /// single component on all points.
  double weight_floor = 1e-3;
  /// GMM covariance ridge, relative to trace(S) / d.
  double ridge = 1e-6;
  EmInit init = EmInit::kmeans;
  std::size_t kmeans_iters = 10;
  std::uint64_t seed = 0;
  /// Adaptive samplers start each refit from the previous proposal.
  bool warm_start = true;
};

struct FitTraceRow {
  std::size_t iteration = 0;
  double log_likelihood = 0.0;  // L_w = sum_n w_n ln q(x_n)
  double min_weight = 0.0;
  double min_variance = 0.0;    // min sigma2 (MPPCA) or min covariance diagonal (GMM)
  /// A component was respawned or dropped in the M-step preceding this row,
  /// so the monotonicity guarantee does not span this row and the previous.
  bool restructured = false;
};

struct FitTrace {
  std::vector<FitTraceRow> rows;
  std::size_t respawns = 0;
  std::size_t drops = 0;
  bool converged = false;
  std::vector<std::string> warnings;

  std::size_t iterations() const { return rows.empty() ? 0 : rows.size() - 1; }
  double final_log_likelihood() const { return rows.empty() ? 0.0 : rows.back().log_likelihood; }
  /// CSV with header: iteration,L_w,min_pi,min_sigma2
  void write_csv(std::ostream& out) const;
};

template <class Model>
struct FitResult {
  Model model;
  FitTrace trace;
};

/// Importance-weighted responsibilities r_nk = w_n pi_k q(x_n|k) / sum_j pi_j q(x_n|j),
/// as an N x K matrix. Rows with w_n = 0 are zero.
Matrix responsibilities(const MppcaModel& model, const WeightedDataset& data);
Matrix responsibilities(const GmmModel& model, const WeightedDataset& data);

/// sum_n w_n ln q(x_n)
double weighted_log_likelihood(const Proposal& model, const WeightedDataset& data);

/// Weighted EM for a mixture of PPCA components. The M-step solves each
/// component's (W, sigma2) exactly from the eigendecomposition of its
/// responsibility-weighted scatter. `warm` (optional) replaces initialization.
FitResult<MppcaModel> fit_mppca(const WeightedDataset& data, const EmConfig& cfg, const MppcaModel* warm = nullptr);

/// Weighted EM for a full-covariance GMM, with ridge-regularized scatter.
FitResult<GmmModel> fit_gmm(const WeightedDataset& data, const EmConfig& cfg, const GmmModel* warm = nullptr);

}  // namespace rareis
