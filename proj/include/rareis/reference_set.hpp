#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "rareis/problems.hpp"
#include "rareis/types.hpp"

namespace rareis {

/// Failure samples from the prior conditioned on failure, collected by a long
/// Monte Carlo run, together with that run's probability estimate.
struct ReferenceSet {
  std::string problem;
  std::uint64_t seed = 0;
  std::size_t n_mc = 0;
  std::size_t failures = 0;  // failures seen in the whole run (>= stored samples)
  double pf_reference = 0.0;
  Points samples;            // d x M, every column has f <= 0

  std::size_t dim() const { return static_cast<std::size_t>(samples.rows()); }
  std::size_t size() const { return static_cast<std::size_t>(samples.cols()); }
};

/// Runs plain MC with n prior draws and keeps the first `max_samples` failures.
ReferenceSet build_reference_set(Problem& problem, std::size_t n, std::size_t max_samples, std::uint64_t seed);

/// Binary file: magic "RSET1", then d and M as little-endian uint64, then M rows
/// of d doubles. Metadata goes to a sidecar `<path>.json`.
void save_reference_set(const ReferenceSet& set, const std::filesystem::path& path);
ReferenceSet load_reference_set(const std::filesystem::path& path);

std::filesystem::path reference_sidecar(const std::filesystem::path& path);

}  // namespace rareis
