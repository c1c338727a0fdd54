#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rareis/density.hpp"
#include "rareis/types.hpp"

namespace rareis {

/// Per-trial quality metrics of a learned proposal.
struct MetricReport {
  double rel_error = 0.0;
  double avg_nll = 0.0;
  double coverage = 0.0;
  double ndb_ratio = 0.0;
  std::size_t n_total = 0;
};

/// (pf_hat - pf_ref) / pf_ref; positive means overestimate.
double relative_error(double pf_hat, double pf_ref);

/// Mean of -ln p(x) over the columns of `samples`.
double avg_nll(const Points& samples, const StandardNormalPrior& prior);

/// Fraction of real points whose k-NN ball (radius = distance to the k-th
/// nearest other real point) contains at least one generated point.
double coverage(const Points& real, const Points& gen, std::size_t k = 5);

struct NdbResult {
  std::size_t count = 0;
  double ratio = 0.0;
  std::vector<double> z;  // per-bin two-proportion statistic
};

/// Number of statistically different bins. Bins are k-means cells of the real
/// set; each bin's real and generated proportions are compared with a pooled
/// two-proportion z-test at two-sided level alpha.
NdbResult ndb(const Points& real, const Points& gen, std::size_t bins = 50, double alpha = 0.05,
              std::uint64_t seed = 0);

/// Pooled two-proportion z statistic; 0 when both proportions are 0 or 1.
double two_proportion_z(std::size_t hits_a, std::size_t n_a, std::size_t hits_b, std::size_t n_b);

}  // namespace rareis
