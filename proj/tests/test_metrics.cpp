#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include <doctest.h>

#include "rareis/metrics.hpp"
#include "rareis/problems.hpp"
#include "rareis/reference_set.hpp"
#include "rareis/stats.hpp"
#include "support.hpp"

using namespace rareis;
using rareis::testing::brute_coverage;
using rareis::testing::random_matrix;

namespace {

Points shuffled_columns(const Points& x, Rng& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  Points out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) out.col(i) = x.col(order[static_cast<std::size_t>(i)]);
  return out;
}

// Tight clusters at well-separated centers with the given counts.
Points clustered(const std::vector<std::size_t>& counts, Rng& rng) {
  const std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  Points x = random_matrix(2, n, rng, 0.01);
  Eigen::Index col = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i, ++col) x(0, col) += 10.0 * static_cast<double>(c);
  }
  return x;
}

}  // namespace

TEST_CASE("relative error") {
  CHECK(relative_error(1e-3, 1e-3) == 0.0);
  CHECK(relative_error(2e-3, 1e-3) == doctest::Approx(1.0));
  CHECK(relative_error(9.32e-4, 9.55e-4) == doctest::Approx(-0.024).epsilon(0.01));
  for (double pf : {1e-12, 3.3e-7, 0.5}) CHECK(relative_error(pf, pf) == 0.0);
  CHECK_THROWS(relative_error(1e-3, 0.0));
}

TEST_CASE("average negative log-likelihood") {
  const StandardNormalPrior p40(40);
  CHECK(avg_nll(Points::Zero(40, 5), p40) == doctest::Approx(36.7576).epsilon(1e-5));

  Rng rng(1);
  const StandardNormalPrior p2(2);
  const Points x = standard_normal(2, 10000, rng);
  const double entropy = 0.5 * 2.0 * (kLog2Pi + 1.0);
  // -ln p(x) = ln(2 pi) + |x|^2 / 2 has variance d / 2 for x ~ N(0, I_d).
  CHECK(std::abs(avg_nll(x, p2) - entropy) <= 3.0 * std::sqrt(1.0 / 10000.0));
  CHECK_THROWS(avg_nll(Points(2, 0), p2));
}

TEST_CASE("average NLL shifts by the closed-form translation term") {
  Rng rng(2);
  const StandardNormalPrior prior(7);
  for (int rep = 0; rep < 10; ++rep) {
    const Points x = random_matrix(7, 50, rng, 1.5);
    const Vector t = random_matrix(7, 1, rng).col(0);
    const Points moved = x.colwise() + t;
    const double expected = 0.5 * t.squaredNorm() + t.dot(x.rowwise().mean());
    CHECK(avg_nll(moved, prior) - avg_nll(x, prior) == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("coverage examples") {
  Rng rng(3);
  const Points real = random_matrix(3, 200, rng);
  CHECK(coverage(real, real, 5) == 1.0);
  CHECK(coverage(real, real.array() + 1e6, 5) == 0.0);
  CHECK_THROWS(coverage(real.leftCols(5), real, 5));
}

TEST_CASE("coverage matches exhaustive enumeration") {
  Rng rng(4);
  // The planar ten-point instance, then larger random ones.
  const Points real = random_matrix(2, 10, rng);
  const Points gen = random_matrix(2, 6, rng, 1.3);
  CHECK(coverage(real, gen, 2) == doctest::Approx(brute_coverage(real, gen, 2)));
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t d = 1 + static_cast<std::size_t>(rep % 5);
    const Points r = random_matrix(d, 1500 + 37 * static_cast<std::size_t>(rep), rng);
    Points g = random_matrix(d, 400, rng, 0.8);
    g.row(0).array() += 0.7;
    CHECK(coverage(r, g, 5) == doctest::Approx(brute_coverage(r, g, 5)));
  }
}

TEST_CASE("coverage and NDB ignore row order") {
  Rng rng(5);
  const Points real = random_matrix(4, 600, rng);
  const Points gen = random_matrix(4, 500, rng, 1.2);
  const double cov = coverage(real, gen, 5);
  const NdbResult base = ndb(real, gen, 10, 0.05, 3);
  const Points real_p = shuffled_columns(real, rng), gen_p = shuffled_columns(gen, rng);
  CHECK(coverage(real_p, gen_p, 5) == cov);
  const NdbResult permuted = ndb(real_p, gen_p, 10, 0.05, 3);
  CHECK(permuted.count == base.count);
}

TEST_CASE("identical sets: NDB 0 and full coverage on 20 random sets") {
  Rng rng(6);
  for (std::uint64_t rep = 0; rep < 20; ++rep) {
    const std::size_t d = 2 + rep % 9;
    const Points s = random_matrix(d, 300 + 50 * rep, rng, 1.0 + 0.1 * static_cast<double>(rep));
    CHECK(ndb(s, s, 20, 0.05, rep).count == 0);
    CHECK(coverage(s, s, 5) == 1.0);
  }
}

TEST_CASE("NDB flags disjoint clusters") {
  Rng rng(7);
  const Points real = clustered({100}, rng);
  Points gen = clustered({100}, rng);
  gen.row(0).array() += 1000.0;
  const NdbResult r = ndb(real, gen, 2, 0.05, 1);
  CHECK(r.ratio == 1.0);
}

TEST_CASE("NDB on a controlled three-bin instance") {
  Rng rng(8);
  const Points real = clustered({500, 300, 200}, rng);
  const Points gen = clustered({500, 200, 300}, rng);
  const NdbResult r = ndb(real, gen, 3, 0.05, 11);

  // Hand-computed pooled two-proportion tests for the three bins.
  const double crit = 1.959963984540054;
  const auto z = [](double a, double b) {
    const double pooled = (a + b) / 2.0;
    const double se = std::sqrt(pooled * (1.0 - pooled) * (2.0 / 1000.0));
    return se == 0.0 ? 0.0 : (a - b) / se;
  };
  std::size_t expected = 0;
  for (auto [a, b] : {std::pair{0.5, 0.5}, std::pair{0.3, 0.2}, std::pair{0.2, 0.3}}) expected += std::abs(z(a, b)) > crit ? 1 : 0;
  CHECK(expected == 2);
  CHECK(r.count == expected);
  CHECK(r.ratio == doctest::Approx(2.0 / 3.0));
  CHECK(two_proportion_z(300, 1000, 200, 1000) == doctest::Approx(z(0.3, 0.2)));
  CHECK(two_proportion_z(0, 10, 0, 20) == 0.0);
}

TEST_CASE("reference set build and cache round trip") {
  BranchesProblem problem({1.5, 4});
  const ReferenceSet set = build_reference_set(problem, 20000, 500, 9);
  CHECK(set.size() == 500);
  CHECK(set.failures >= 500);
  CHECK(set.pf_reference == doctest::Approx(static_cast<double>(set.failures) / 20000.0));
  for (double f : problem.evaluate(set.samples)) CHECK(f <= 0.0);

  const std::filesystem::path dir = std::filesystem::path(RAREIS_TEST_TMP) / "metrics";
  std::filesystem::create_directories(dir);
  const auto path = dir / "ref.rset";
  save_reference_set(set, path);
  CHECK(std::filesystem::exists(reference_sidecar(path)));
  const ReferenceSet back = load_reference_set(path);
  CHECK(back.samples == set.samples);
  CHECK(back.pf_reference == set.pf_reference);
  CHECK(back.problem == set.problem);
  CHECK(back.n_mc == 20000);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXXX", 5);
  }
  CHECK_THROWS(load_reference_set(path));
}
