#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "rareis/experiment.hpp"
#include "rareis/plot.hpp"
#include "support.hpp"

using namespace rareis;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
  const fs::path dir = fs::path(RAREIS_TEST_TMP) / "experiment" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// A small but complete experiment: every stage, metric and output file runs.
std::string small_config(const fs::path& out, const fs::path& refs) {
  return "name = \"small\"\ntrials = 3\nseed = 17\nout = \"" + out.string() +
         "\"\n"
         "[problem]\nkind = \"branches\"\nd = 6\nbeta = 2.5\n"
         "[sampler]\nn_per_iter = 2000\n"
         "[em]\ncomponents = 2\nlatent_dim = 2\n"
         "[reference]\ndir = \"" + refs.string() + "\"\nn_mc = 200000\nmax_samples = 800\n"
         "[metrics]\neval_samples = 1500\nndb_bins = 10\n";
}

std::vector<std::map<std::string, std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::map<std::string, std::string> row;
    std::string cell;
    for (std::size_t i = 0; i + 1 < header.size() && std::getline(ss, cell, ','); ++i) row[header[i]] = cell;
    rows.push_back(row);
  }
  return rows;
}

std::size_t count_markers(const std::string& svg, const std::string& group_fill) {
  const auto start = svg.find("fill=\"" + group_fill + "\"");
  if (start == std::string::npos) return 0;
  const auto end = svg.find("</g>", start);
  std::size_t n = 0;
  for (auto pos = svg.find("<circle", start); pos != std::string::npos && pos < end; pos = svg.find("<circle", pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("defaults follow the published hyperparameters") {
  const auto cfgs = parse_configs("[problem]\nkind = \"branches\"\n");
  REQUIRE(cfgs.size() == 1);
  const auto& c = cfgs[0];
  CHECK(c.ce.em.components == 8);
  CHECK(c.ce.em.latent_dim == 8);
  CHECK(c.ce.n_per_iter == 10000);
  CHECK(c.ce.rho == 0.2);
  CHECK(c.trials == 50);
  CHECK(c.problem.beta == 3.5);
  CHECK(c.name == "branches_d40_ce_mppca");
}

TEST_CASE("configuration parsing") {
  const auto cfgs = parse_configs(
      "name = \"x\"\nmethod = \"sis\"\nfamily = \"gmm\"\ntrials = 4\n"
      "[problem]\nkind = \"oscillator\"\nd = 20\ndt = 0.0005\n"
      "[sampler]\nn_per_iter = 500\nmax_stages = 7\n"
      "[em]\ncomponents = 3\nlatent_dim = 2\ninit = \"random\"\nwarm_start = false\n"
      "[reference]\npf = 1.5e-4\n");
  REQUIRE(cfgs.size() == 1);
  const auto& c = cfgs[0];
  CHECK(c.method == Method::sis);
  CHECK(c.family == ModelFamily::gmm);
  CHECK(c.problem.dt == 0.0005);
  CHECK(c.sis.n_per_iter == 500);
  CHECK(c.sis.max_stages == 7);
  CHECK(c.sis.em.components == 3);
  CHECK(c.sis.em.init == EmInit::random_responsibility);
  CHECK_FALSE(c.sis.em.warm_start);
  CHECK(c.reference.pf == "0.00015");

  CHECK_THROWS(parse_configs("[problem]\nkind = \"branches\"\nbogus = 1\n"));
  CHECK_THROWS(parse_configs("typo = 1\n"));
  CHECK_THROWS(parse_configs("method = \"mcmc\"\n"));
  CHECK_THROWS(parse_configs("[problem]\nkind = \"branches\"\nd = 7\n"));
  CHECK_THROWS(parse_configs("[problem]\nkind = \"external\"\nd = 4\n"));
}

TEST_CASE("sampler families follow the experiment family") {
  ExperimentConfig cfg = parse_configs("[problem]\nkind = \"branches\"\nd = 20\n")[0];
  cfg.family = ModelFamily::gmm;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("family"), std::invalid_argument);
  set_family(cfg, ModelFamily::gmm);
  CHECK(cfg.ce.family == ModelFamily::gmm);
  CHECK(cfg.sis.family == ModelFamily::gmm);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("grid expansion") {
  const auto all = parse_configs("out = \"res\"\n[grid]\n");
  // Five rows minus the external one (no command), two methods, two families.
  CHECK(all.size() == 16);
  CHECK(all.front().name == "branches_d40_ce_mppca");
  CHECK(all.front().out == fs::path("res") / "branches_d40_ce_mppca");

  const auto some = parse_configs(
      "[problem]\ncommand = \"sim\"\n[grid]\nrows = [\"oscillator-200\", \"external-202\"]\nmethods = [\"ce\"]\nfamilies = [\"mppca\"]\n");
  REQUIRE(some.size() == 2);
  CHECK(some[0].problem.kind == "oscillator");
  CHECK(some[0].problem.d == 200);
  CHECK(some[1].problem.kind == "external");
  CHECK(some[1].problem.d == 202);
}

TEST_CASE("shipped configurations parse") {
  const fs::path dir = RAREIS_CONFIG_DIR;
  CHECK(load_configs(dir / "grid.toml").size() == 16);
  const auto osc = load_configs(dir / "oscillator_d100_ce_mppca.toml");
  REQUIRE(osc.size() == 1);
  CHECK(osc[0].reference.n_mc == 10'000'000);
  const auto stub = load_configs(dir / "external_stub_ce_mppca.toml");
  REQUIRE(stub.size() == 1);
  CHECK(stub[0].problem.kind == "external");
  CHECK(std::stod(stub[0].reference.pf) == doctest::Approx(8.56641210775301e-4).epsilon(1e-12));
  CHECK(load_configs(dir / "branches_d40_ce_mppca.toml").size() == 1);
}

TEST_CASE("trial seeds are SplitMix64 of seed plus index") {
  CHECK(trial_seed(0, 0) == 0xE220A8397B1DCDAFULL);
  CHECK(trial_seed(10, 5) == splitmix64(15));
}

TEST_CASE("experiments are reproducible byte for byte and across worker counts") {
  const fs::path root = tmp_dir("repro");
  auto cfg = parse_configs(small_config(root / "a", root / "refs")).at(0);
  cfg.plot = true;
  const ExperimentResult a = run_experiment(cfg);
  REQUIRE(a.succeeded() == 3);

  cfg.out = root / "b";
  run_experiment(cfg);
  cfg.out = root / "c";
  cfg.workers = 3;
  run_experiment(cfg);

  const std::string csv = slurp(root / "a" / "results.csv");
  CHECK(csv == slurp(root / "b" / "results.csv"));
  CHECK(csv == slurp(root / "c" / "results.csv"));
  CHECK(slurp(root / "a" / "summary.json") == slurp(root / "c" / "summary.json"));
  for (const char* file : {"trace_trial000.csv", "model_trial002.json", "scatter_trial001.svg"}) {
    CHECK(fs::exists(root / "a" / file));
    CHECK(slurp(root / "a" / file) == slurp(root / "c" / file));
  }
}

TEST_CASE("summary statistics agree with the per-trial table") {
  const fs::path root = tmp_dir("summary");
  const auto cfg = parse_configs(small_config(root / "out", root / "refs")).at(0);
  run_experiment(cfg);
  const auto rows = read_csv(root / "out" / "results.csv");
  REQUIRE(rows.size() == 3);
  std::ifstream in(root / "out" / "summary.json");
  const auto summary = nlohmann::json::parse(in);
  CHECK(summary["succeeded"] == 3);
  for (const char* column : {"pf_estimate", "rel_error", "avg_nll", "coverage", "ndb_ratio", "n_total", "iterations"}) {
    double mean = 0.0;
    for (const auto& r : rows) mean += std::stod(r.at(column));
    mean /= 3.0;
    double ss = 0.0;
    for (const auto& r : rows) ss += (std::stod(r.at(column)) - mean) * (std::stod(r.at(column)) - mean);
    const double sd = std::sqrt(ss / 2.0);
    const auto& entry = summary["columns"][column];
    CHECK(std::abs(entry["mean"].get<double>() - mean) <= 1e-12 * std::max(1.0, std::abs(mean)));
    CHECK(std::abs(entry["std"].get<double>() - sd) <= 1e-12 * std::max(1.0, std::abs(sd)));
  }
  for (const auto& r : rows) {
    const double cov = std::stod(r.at("coverage")), ndb_ratio = std::stod(r.at("ndb_ratio"));
    CHECK((cov >= 0.0 && cov <= 1.0));
    CHECK((ndb_ratio >= 0.0 && ndb_ratio <= 1.0));
  }
}

TEST_CASE("command-line exit status") {
  const fs::path root = tmp_dir("cli");
  const fs::path good = root / "good.toml";
  {
    std::ofstream f(good);
    f << small_config(root / "out", root / "refs");
  }
  const std::string cli = RAREIS_CLI_PATH;
  CHECK(std::system((cli + " run --config " + good.string() + " --trials 1 > /dev/null 2>&1").c_str()) == 0);
  CHECK(fs::exists(root / "out" / "results.csv"));

  // Every trial fails: the simulator exits after 1500 responses, enough for the
  // 1000-sample reference run but not for a 2000-sample stage.
  const fs::path bad = root / "bad.toml";
  {
    std::ofstream f(bad);
    f << "name = \"bad\"\ntrials = 2\nout = \"" << (root / "bad").string() << "\"\n"
      << "[problem]\nkind = \"external\"\nd = 4\ncommand = \"" << cli << " protocol-stub --d 4 --exit-after 1500\"\n"
      << "[sampler]\nn_per_iter = 2000\n[em]\ncomponents = 1\nlatent_dim = 1\n"
      << "[reference]\nfile = \"" << (root / "stub.rset").string() << "\"\nn_mc = 1000\nmax_samples = 100\n";
  }
  CHECK(std::system((cli + " run --config " + bad.string() + " > /dev/null 2>&1").c_str()) != 0);
  const auto rows = read_csv(root / "bad" / "results.csv");
  REQUIRE(rows.size() == 2);
  const std::string csv = slurp(root / "bad" / "results.csv");
  CHECK(csv.find("exited with status 4") != std::string::npos);
}

TEST_CASE("scatter plots") {
  Rng rng(3);
  const Points x = testing::random_matrix(8, 4000, rng, 1.6);
  BranchesProblem problem({2.0, 8});
  const auto costs = problem.evaluate(x);
  ScatterOptions opt;
  opt.projection = Projection::half_sums;
  opt.beta = 2.0;
  const std::string svg = scatter_svg(x, costs, opt);
  CHECK(svg == scatter_svg(x, costs, opt));
  const std::size_t red = count_markers(svg, "#d02020"), grey = count_markers(svg, "#909090");
  CHECK(red > 0);
  CHECK(static_cast<double>(red) == doctest::Approx(0.25 * static_cast<double>(grey)).epsilon(0.01));

  // In the half-sum plane, failures lie beyond one of the lines |u +- v| = beta sqrt(2).
  const Matrix uv = project_samples(x, opt);
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    const double s = (uv(0, i) + uv(1, i)) / std::sqrt(2.0), t = (uv(0, i) - uv(1, i)) / std::sqrt(2.0);
    const bool beyond = std::max(std::abs(s), std::abs(t)) >= 2.0 - 1e-12;
    CHECK(beyond == (costs[static_cast<std::size_t>(i)] <= 0.0));
  }

  const std::vector<double> safe(static_cast<std::size_t>(x.cols()), 1.0);
  const std::string none = scatter_svg(x, safe, opt);
  CHECK(count_markers(none, "#d02020") == 0);
  CHECK(count_markers(none, "#909090") > 0);
  CHECK_THROWS(scatter_svg(Points(8, 0), {}, opt));
}
