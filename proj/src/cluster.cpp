#include "rareis/cluster.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace rareis {

namespace {

std::size_t sample_index(const std::vector<double>& mass, Rng& rng) {
  double total = 0.0;
  for (double m : mass) total += m;
  if (!(total > 0.0)) throw std::invalid_argument("kmeans: no positive sampling mass");
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    acc += mass[i];
    if (u < acc) return i;
  }
  for (std::size_t i = mass.size(); i-- > 0;) {
    if (mass[i] > 0.0) return i;
  }
  return 0;
}

}  // namespace

Matrix squared_distances(const Points& a, const Points& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("squared_distances: dimension mismatch");
  const Vector an = a.colwise().squaredNorm().transpose();
  const Vector bn = b.colwise().squaredNorm().transpose();
  Matrix out = -2.0 * (a.transpose() * b);
  out.colwise() += an;
  out.rowwise() += bn.transpose();
  return out.cwiseMax(0.0);
}

std::vector<std::size_t> nearest_center(const Points& x, const Matrix& centers) {
  std::vector<std::size_t> labels(static_cast<std::size_t>(x.cols()));
  constexpr Eigen::Index kBlock = 4096;
  for (Eigen::Index start = 0; start < x.cols(); start += kBlock) {
    const Eigen::Index len = std::min(kBlock, x.cols() - start);
    const Matrix dist = squared_distances(x.middleCols(start, len), centers);
    for (Eigen::Index i = 0; i < len; ++i) {
      Eigen::Index best = 0;
      dist.row(i).minCoeff(&best);
      labels[static_cast<std::size_t>(start + i)] = static_cast<std::size_t>(best);
    }
  }
  return labels;
}

KMeansResult kmeans(const Points& x, std::span<const double> weights, std::size_t clusters,
                    std::size_t iterations, Rng& rng) {
  const auto n = static_cast<std::size_t>(x.cols());
  if (clusters == 0) throw std::invalid_argument("kmeans: need at least one cluster");
  if (n == 0) throw std::invalid_argument("kmeans: empty data");
  if (!weights.empty() && weights.size() != n) throw std::invalid_argument("kmeans: weight count mismatch");
  std::vector<double> w(n, 1.0);
  if (!weights.empty()) std::copy(weights.begin(), weights.end(), w.begin());

  KMeansResult result;
  result.centers.resize(x.rows(), static_cast<Eigen::Index>(clusters));

  // k-means++ seeding.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<double> mass(n);
  std::size_t chosen = sample_index(w, rng);
  for (std::size_t c = 0; c < clusters; ++c) {
    if (c > 0) {
      for (std::size_t i = 0; i < n; ++i) mass[i] = w[i] * d2[i];
      double total = 0.0;
      for (double m : mass) total += m;
      chosen = total > 0.0 ? sample_index(mass, rng) : sample_index(w, rng);
    }
    result.centers.col(static_cast<Eigen::Index>(c)) = x.col(static_cast<Eigen::Index>(chosen));
    const auto center = result.centers.col(static_cast<Eigen::Index>(c));
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (x.col(static_cast<Eigen::Index>(i)) - center).squaredNorm());
    }
  }

  result.labels = nearest_center(x, result.centers);
  for (std::size_t it = 0; it < iterations; ++it) {
    Matrix sums = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(clusters));
    std::vector<double> mass_per(clusters, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.col(static_cast<Eigen::Index>(result.labels[i])) += w[i] * x.col(static_cast<Eigen::Index>(i));
      mass_per[result.labels[i]] += w[i];
    }
    for (std::size_t c = 0; c < clusters; ++c) {
      if (mass_per[c] > 0.0) result.centers.col(static_cast<Eigen::Index>(c)) = sums.col(static_cast<Eigen::Index>(c)) / mass_per[c];
    }
    ++result.iterations;
    auto labels = nearest_center(x, result.centers);
    const bool stable = labels == result.labels;
    result.labels = std::move(labels);
    if (stable) break;
  }
  return result;
}

}  // namespace rareis
