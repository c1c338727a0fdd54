#pragma once

#include <cstdint>
#include <random>

#include "rareis/types.hpp"

namespace rareis {

std::uint64_t splitmix64(std::uint64_t x);

/// Mixes a master seed with a stream index into an independent child seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Seeded random stream. Holds the engine together with the normal
/// distribution state so that splitting a batch into chunks does not change
/// the sequence of variates. Normal variates come from libstdc++'s
/// std::normal_distribution; reproducibility is bit-exact only within one
/// standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Fills a d x n matrix with independent N(0, 1) draws, column by column.
Points standard_normal(std::size_t d, std::size_t n, Rng& rng);

}  // namespace rareis
