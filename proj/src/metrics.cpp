#include "rareis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rareis/cluster.hpp"
#include "rareis/stats.hpp"

namespace rareis {

namespace {

constexpr Eigen::Index kBlock = 1024;

double exact_squared_distance(const Points& a, Eigen::Index i, const Points& b, Eigen::Index j) {
  return (a.col(i) - b.col(j)).squaredNorm();
}

/// Columns reordered lexicographically, so seeded clustering does not depend
/// on the input order.
Points canonical_order(const Points& x) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.cols()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      if (x(r, a) != x(r, b)) return x(r, a) < x(r, b);
    }
    return a < b;
  });
  Points out(x.rows(), x.cols());
  for (std::size_t i = 0; i < order.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = x.col(order[i]);
  return out;
}

}  // namespace

double relative_error(double pf_hat, double pf_ref) {
  if (!(pf_ref > 0.0)) throw std::invalid_argument("relative_error: reference probability must be positive");
  return (pf_hat - pf_ref) / pf_ref;
}

double avg_nll(const Points& samples, const StandardNormalPrior& prior) {
  if (samples.cols() == 0) throw std::invalid_argument("avg_nll: empty batch");
  return -prior.log_density(samples).mean();
}

double coverage(const Points& real, const Points& gen, std::size_t k) {
  const Eigen::Index m = real.cols();
  if (k < 1 || static_cast<std::size_t>(m) <= k) throw std::invalid_argument("coverage: need more than k real points");
  if (gen.cols() == 0) throw std::invalid_argument("coverage: empty generated set");
  if (gen.rows() != real.rows()) throw std::invalid_argument("coverage: dimension mismatch");

  // Gram-matrix distances locate candidates; the decisive distances are then
  // recomputed directly so that exact coincidences compare as equal.
  const auto kk = static_cast<std::ptrdiff_t>(k);
  std::size_t covered = 0;
  std::vector<std::pair<double, Eigen::Index>> row;
  for (Eigen::Index start = 0; start < m; start += kBlock) {
    const Eigen::Index len = std::min(kBlock, m - start);
    const Points block = real.middleCols(start, len);
    const Matrix to_real = squared_distances(block, real);
    const Matrix to_gen = squared_distances(block, gen);
    for (Eigen::Index r = 0; r < len; ++r) {
      const Eigen::Index i = start + r;
      row.clear();
      for (Eigen::Index j = 0; j < m; ++j) {
        if (j != i) row.emplace_back(to_real(r, j), j);
      }
      // A margin of extra candidates absorbs Gram rounding near the k-th rank.
      const std::ptrdiff_t keep = std::min<std::ptrdiff_t>(kk + 8, static_cast<std::ptrdiff_t>(row.size()));
      std::partial_sort(row.begin(), row.begin() + keep, row.end());
      std::vector<double> exact(static_cast<std::size_t>(keep));
      for (std::ptrdiff_t c = 0; c < keep; ++c) exact[static_cast<std::size_t>(c)] = exact_squared_distance(real, i, real, row[static_cast<std::size_t>(c)].second);
      std::nth_element(exact.begin(), exact.begin() + (kk - 1), exact.end());
      const double radius = exact[static_cast<std::size_t>(kk - 1)];

      Eigen::Index nearest = 0;
      to_gen.row(r).minCoeff(&nearest);
      double best = exact_squared_distance(real, i, gen, nearest);
      const double slack = to_gen(r, nearest) + 1e-9 * (1.0 + to_gen(r, nearest));
      for (Eigen::Index j = 0; j < gen.cols() && best > radius; ++j) {
        if (to_gen(r, j) <= slack) best = std::min(best, exact_squared_distance(real, i, gen, j));
      }
      covered += best <= radius ? 1 : 0;
    }
  }
  return static_cast<double>(covered) / static_cast<double>(m);
}

double two_proportion_z(std::size_t hits_a, std::size_t n_a, std::size_t hits_b, std::size_t n_b) {
  if (n_a == 0 || n_b == 0) throw std::invalid_argument("two_proportion_z: empty sample");
  const double na = static_cast<double>(n_a);
  const double nb = static_cast<double>(n_b);
  const double pa = static_cast<double>(hits_a) / na;
  const double pb = static_cast<double>(hits_b) / nb;
  const double pooled = static_cast<double>(hits_a + hits_b) / (na + nb);
  const double se = std::sqrt(pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb));
  if (se == 0.0) return 0.0;
  return (pa - pb) / se;
}

NdbResult ndb(const Points& real, const Points& gen, std::size_t bins, double alpha, std::uint64_t seed) {
  if (real.cols() == 0 || gen.cols() == 0) throw std::invalid_argument("ndb: both sets must be nonempty");
  if (bins < 2) throw std::invalid_argument("ndb: need at least 2 bins");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("ndb: alpha must lie in (0, 1)");
  if (gen.rows() != real.rows()) throw std::invalid_argument("ndb: dimension mismatch");

  Rng rng(seed);
  const std::size_t clusters = std::min<std::size_t>(bins, static_cast<std::size_t>(real.cols()));
  const KMeansResult km = kmeans(canonical_order(real), {}, clusters, 50, rng);
  const auto real_labels = nearest_center(real, km.centers);
  const auto gen_labels = nearest_center(gen, km.centers);
  std::vector<std::size_t> real_counts(clusters, 0), gen_counts(clusters, 0);
  for (auto l : real_labels) ++real_counts[l];
  for (auto l : gen_labels) ++gen_counts[l];

  const double critical = normal_quantile(1.0 - alpha / 2.0);
  NdbResult out;
  out.z.resize(clusters);
  for (std::size_t b = 0; b < clusters; ++b) {
    out.z[b] = two_proportion_z(real_counts[b], real_labels.size(), gen_counts[b], gen_labels.size());
    out.count += std::abs(out.z[b]) > critical ? 1 : 0;
  }
  out.ratio = static_cast<double>(out.count) / static_cast<double>(bins);
  return out;
}

}  // namespace rareis
