#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rareis/random.hpp"
#include "rareis/types.hpp"

namespace rareis {

struct KMeansResult {
  Matrix centers;                   // d x C
  std::vector<std::size_t> labels;  // per point
  std::size_t iterations = 0;
};

/// Squared Euclidean distances between every column of `a` and every column
/// of `b` (a.cols() x b.cols()).
Matrix squared_distances(const Points& a, const Points& b);

/// Index of the nearest center for every point.
std::vector<std::size_t> nearest_center(const Points& x, const Matrix& centers);

/// Weighted k-means: k-means++ seeding with weights as sampling
/// probabilities, then Lloyd iterations with weighted centroids. An empty
/// `weights` span means unit weights. Clusters that lose all their points keep
/// their previous center.
KMeansResult kmeans(const Points& x, std::span<const double> weights, std::size_t clusters,
                    std::size_t iterations, Rng& rng);

}  // namespace rareis
