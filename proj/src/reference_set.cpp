#include "rareis/reference_set.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "rareis/random.hpp"

namespace rareis {

namespace {

constexpr std::array<char, 5> kMagic = {'R', 'S', 'E', 'T', '1'};
constexpr std::size_t kChunk = 50000;

static_assert(std::endian::native == std::endian::little, "reference files are written in native little-endian order");

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

std::filesystem::path reference_sidecar(const std::filesystem::path& path) {
  auto out = path;
  out += ".json";
  return out;
}

ReferenceSet build_reference_set(Problem& problem, std::size_t n, std::size_t max_samples, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("build_reference_set: n must be >= 1");
  const std::size_t d = problem.dim();
  Rng rng(seed);
  std::vector<double> kept;
  std::size_t failures = 0;
  for (std::size_t done = 0; done < n;) {
    const std::size_t len = std::min(kChunk, n - done);
    const Points x = standard_normal(d, len, rng);
    const auto f = problem.evaluate(x);
    for (std::size_t i = 0; i < len; ++i) {
      if (!(f[i] <= 0.0)) continue;
      ++failures;
      if (kept.size() / d < max_samples) {
        const auto col = x.col(static_cast<Eigen::Index>(i));
        kept.insert(kept.end(), col.data(), col.data() + d);
      }
    }
    done += len;
  }
  ReferenceSet set;
  set.problem = problem.description();
  set.seed = seed;
  set.n_mc = n;
  set.failures = failures;
  set.pf_reference = static_cast<double>(failures) / static_cast<double>(n);
  set.samples = Eigen::Map<const Points>(kept.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(kept.size() / d));
  return set;
}

void save_reference_set(const ReferenceSet& set, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kMagic.data(), kMagic.size());
    write_u64(out, set.dim());
    write_u64(out, set.size());
    // Column-major d x M is the same byte layout as row-major M x d.
    out.write(reinterpret_cast<const char*>(set.samples.data()),
              static_cast<std::streamsize>(set.samples.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed: " + path.string());
  }
  nlohmann::json meta = {{"problem", set.problem},  {"d", set.dim()},           {"samples", set.size()},
                         {"seed", set.seed},        {"n_mc", set.n_mc},         {"failures", set.failures},
                         {"pf_reference", set.pf_reference}};
  std::ofstream side(reference_sidecar(path));
  if (!side) throw std::runtime_error("cannot write " + reference_sidecar(path).string());
  side << meta.dump(2) << '\n';
}

ReferenceSet load_reference_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open reference set " + path.string());
  std::array<char, 5> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error(path.string() + ": not a reference set file");
  const std::uint64_t d = read_u64(in);
  const std::uint64_t m = read_u64(in);
  if (!in || d == 0 || d > (1u << 20)) throw std::runtime_error(path.string() + ": bad header");
  ReferenceSet set;
  set.samples.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(m));
  in.read(reinterpret_cast<char*>(set.samples.data()), static_cast<std::streamsize>(d * m * sizeof(double)));
  if (!in) throw std::runtime_error(path.string() + ": truncated sample data");

  std::ifstream side(reference_sidecar(path));
  if (!side) throw std::runtime_error("missing sidecar " + reference_sidecar(path).string());
  const auto meta = nlohmann::json::parse(side);
  set.problem = meta.at("problem").get<std::string>();
  set.seed = meta.at("seed").get<std::uint64_t>();
  set.n_mc = meta.at("n_mc").get<std::size_t>();
  set.failures = meta.at("failures").get<std::size_t>();
  set.pf_reference = meta.at("pf_reference").get<double>();
  if (meta.at("d").get<std::uint64_t>() != d || meta.at("samples").get<std::uint64_t>() != m) {
    throw std::runtime_error(reference_sidecar(path).string() + ": metadata does not match sample file");
  }
  return set;
}

}  // namespace rareis
