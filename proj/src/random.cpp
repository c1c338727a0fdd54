#include "rareis/random.hpp"

namespace rareis {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ (stream * 0xD1B54A32D192ED03ULL + 1));
}

Points standard_normal(std::size_t d, std::size_t n, Rng& rng) {
  Points out(d, n);
  double* data = out.data();
  const std::size_t total = d * n;
  for (std::size_t i = 0; i < total; ++i) data[i] = rng.normal();
  return out;
}

}  // namespace rareis
