#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rareis/metrics.hpp"
#include "rareis/problems.hpp"
#include "rareis/reference_set.hpp"
#include "rareis/samplers.hpp"

namespace rareis {

enum class Method { ce, sis };

Method parse_method(const std::string& name);
std::string to_string(Method method);

struct ProblemSpec {
  std::string kind = "branches";  // branches | oscillator | external
  std::size_t d = 40;
  double beta = 3.5;              // branches
  double dt = 1e-3;               // oscillator
  std::string command;            // external
  std::size_t timeout_ms = 60000; // external
  std::size_t workers = 1;        // cost-evaluation threads per trial

  void validate() const;
  std::unique_ptr<Problem> make() const;
  /// e.g. "branches_d40"
  std::string label() const;
};

struct ReferenceSpec {
  /// Cache file; built by MC when missing. Empty means <dir>/<label>.rset.
  std::filesystem::path file;
  std::filesystem::path dir = "refs";
  std::size_t n_mc = 1'000'000;
  std::size_t max_samples = 10'000;
  std::uint64_t seed = 20240101;
  /// "auto" (closed form for branches, the cached MC estimate otherwise),
  /// "analytic", "mc", or a number.
  std::string pf = "auto";

  std::filesystem::path path_for(const ProblemSpec& problem) const;
};

struct MetricsSpec {
  std::size_t coverage_k = 5;
  std::size_t ndb_bins = 50;
  double ndb_alpha = 0.05;
  std::size_t eval_samples = 10'000;
};

struct ExperimentConfig {
  std::string name;
  ProblemSpec problem;
  Method method = Method::ce;
  ModelFamily family = ModelFamily::mppca;
  CeConfig ce;
  SisConfig sis;
  std::size_t trials = 50;
  std::uint64_t seed = 0;
  std::filesystem::path out = "results";
  /// Trials run concurrently.
  std::size_t workers = 1;
  bool record_wall_time = false;
  bool plot = false;
  ReferenceSpec reference;
  MetricsSpec metrics;

  void validate() const;
};

/// Sets the experiment family and the family each sampler refits with.
void set_family(ExperimentConfig& cfg, ModelFamily family);

/// Reads one TOML experiment file. A file with a [grid] table expands into one
/// config per (problem row, method, family), each writing to out/<name>.
std::vector<ExperimentConfig> load_configs(const std::filesystem::path& path);
std::vector<ExperimentConfig> parse_configs(const std::string& toml_text);

/// Trial seed: SplitMix64 of (master seed + trial index).
std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial);

struct TrialRow {
  std::size_t trial = 0;
  std::string problem;
  std::size_t d = 0;
  std::string method;
  std::string family;
  double pf_estimate = 0.0;
  MetricReport metrics;
  std::size_t iterations = 0;
  double wall_time_s = 0.0;
  std::string error;  // empty on success

  bool ok() const { return error.empty(); }
};

struct ExperimentResult {
  ExperimentConfig config;
  double pf_reference = 0.0;
  std::vector<TrialRow> rows;

  std::size_t succeeded() const;
};

/// Loads or builds the reference set for a problem.
ReferenceSet obtain_reference(const ProblemSpec& problem, const ReferenceSpec& spec);

double resolve_reference_pf(const ProblemSpec& problem, const ReferenceSpec& spec, const ReferenceSet& set);

/// Metrics of a finished sampler run against a reference set.
MetricReport evaluate_run(const SamplerRun& run, const ReferenceSet& reference, double pf_reference,
                          const MetricsSpec& spec, std::uint64_t seed);

/// Runs every trial and writes results.csv, summary.json, per-trial trace and
/// model files (and SVG scatters with plot = true) under cfg.out.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

void write_results_csv(const ExperimentResult& result, std::ostream& out);
void write_summary_json(const ExperimentResult& result, std::ostream& out);

}  // namespace rareis
