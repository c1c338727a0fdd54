#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rareis/types.hpp"

namespace rareis {

enum class Projection {
  coordinates,  // plot (x_i, x_j)
  half_sums,    // plot (u, v): normalized sums of the first and second halves
};

struct ScatterOptions {
  Projection projection = Projection::coordinates;
  std::size_t i = 0;
  std::size_t j = 1;
  /// Failure-to-non-failure marker ratio.
  double failure_ratio = 0.25;
  std::size_t max_points = 2500;
  /// Draws the four branch boundaries u + v = +-beta sqrt(2), u - v = +-beta sqrt(2)
  /// (half-sum projection only).
  std::optional<double> beta;
  std::string title;
};

/// Projected 2-D coordinates of each sample column.
Matrix project_samples(const Points& samples, const ScatterOptions& options);

/// SVG scatter with failures (cost <= 0) in red and non-failures in grey. The
/// first samples of each class are taken in index order, so the output is a
/// pure function of the inputs.
std::string scatter_svg(const Points& samples, const std::vector<double>& costs, const ScatterOptions& options);

void emit_scatter(const Points& samples, const std::vector<double>& costs, const ScatterOptions& options,
                  const std::filesystem::path& path);

}  // namespace rareis
