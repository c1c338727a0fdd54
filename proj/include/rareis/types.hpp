#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace rareis {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// A batch of points in sample space, one point per column (d x n).
/// Column-major storage makes the buffer identical to a row-major n x d array.
using Points = Eigen::MatrixXd;

/// Raised when a numerical computation cannot produce a finite result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rareis
