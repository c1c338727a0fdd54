#include "rareis/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>
#include <spdlog/spdlog.h>
#include <toml.hpp>

#include "rareis/external.hpp"
#include "rareis/model_io.hpp"
#include "rareis/parallel.hpp"
#include "rareis/plot.hpp"
#include "rareis/random.hpp"

namespace rareis {

namespace {

constexpr std::uint64_t kEvalStream = 0x6576616c;  // "eval"
constexpr std::uint64_t kNdbStream = 0x6e6462;     // "ndb"
const char* const kDefaultGridRows[] = {"branches-40", "branches-60", "oscillator-100", "oscillator-200", "external-202"};

/// Shortest decimal that round-trips.
std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// --- TOML helpers --------------------------------------------------------------

void check_keys(const toml::table& table, std::initializer_list<std::string_view> allowed, const std::string& where) {
  for (auto&& [key, node] : table) {
    (void)node;
    if (std::find(allowed.begin(), allowed.end(), key.str()) == allowed.end()) {
      throw std::invalid_argument("config: unknown key '" + std::string(key.str()) + "' in " + where);
    }
  }
}

const toml::table* subtable(const toml::table& root, std::string_view key) {
  const toml::node* node = root.get(key);
  if (node == nullptr) return nullptr;
  if (!node->is_table()) throw std::invalid_argument("config: '" + std::string(key) + "' must be a table");
  return node->as_table();
}

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seeds are read through the size_t overload");

void read(const toml::table& t, std::string_view key, std::size_t& dst) {
  const toml::node* node = t.get(key);
  if (node == nullptr) return;
  const auto v = node->value<std::int64_t>();
  if (!v || *v < 0 || !node->is_integer()) throw std::invalid_argument("config: '" + std::string(key) + "' must be a non-negative integer");
  dst = static_cast<std::size_t>(*v);
}

void read(const toml::table& t, std::string_view key, double& dst) {
  const toml::node* node = t.get(key);
  if (node == nullptr) return;
  if (!node->is_number()) throw std::invalid_argument("config: '" + std::string(key) + "' must be a number");
  dst = *node->value<double>();
}

void read(const toml::table& t, std::string_view key, bool& dst) {
  const toml::node* node = t.get(key);
  if (node == nullptr) return;
  if (!node->is_boolean()) throw std::invalid_argument("config: '" + std::string(key) + "' must be a boolean");
  dst = *node->value<bool>();
}

void read(const toml::table& t, std::string_view key, std::string& dst) {
  const toml::node* node = t.get(key);
  if (node == nullptr) return;
  if (!node->is_string()) throw std::invalid_argument("config: '" + std::string(key) + "' must be a string");
  dst = *node->value<std::string>();
}

std::vector<std::string> read_strings(const toml::table& t, std::string_view key, std::vector<std::string> fallback) {
  const toml::node* node = t.get(key);
  if (node == nullptr) return fallback;
  const toml::array* arr = node->as_array();
  if (arr == nullptr) throw std::invalid_argument("config: '" + std::string(key) + "' must be an array of strings");
  std::vector<std::string> out;
  for (const auto& item : *arr) {
    const auto v = item.value<std::string>();
    if (!v || !item.is_string()) throw std::invalid_argument("config: '" + std::string(key) + "' must be an array of strings");
    out.push_back(*v);
  }
  return out;
}

EmInit parse_init(const std::string& name) {
  if (name == "kmeans") return EmInit::kmeans;
  if (name == "random") return EmInit::random_responsibility;
  throw std::invalid_argument("config: unknown em init '" + name + "'");
}

ExperimentConfig parse_base(const toml::table& root) {
  check_keys(root,
             {"name", "trials", "seed", "workers", "out", "record_wall_time", "plot", "method", "family", "problem",
              "sampler", "em", "reference", "metrics", "grid"},
             "top level");
  ExperimentConfig cfg;
  read(root, "name", cfg.name);
  read(root, "trials", cfg.trials);
  read(root, "seed", cfg.seed);
  read(root, "workers", cfg.workers);
  std::string out = cfg.out.string();
  read(root, "out", out);
  cfg.out = out;
  read(root, "record_wall_time", cfg.record_wall_time);
  read(root, "plot", cfg.plot);
  std::string method = to_string(cfg.method), family = to_string(cfg.family);
  read(root, "method", method);
  read(root, "family", family);
  cfg.method = parse_method(method);
  cfg.family = parse_family(family);

  if (const auto* t = subtable(root, "problem")) {
    check_keys(*t, {"kind", "d", "beta", "dt", "command", "timeout_ms", "workers"}, "[problem]");
    read(*t, "kind", cfg.problem.kind);
    read(*t, "d", cfg.problem.d);
    read(*t, "beta", cfg.problem.beta);
    read(*t, "dt", cfg.problem.dt);
    read(*t, "command", cfg.problem.command);
    read(*t, "timeout_ms", cfg.problem.timeout_ms);
    read(*t, "workers", cfg.problem.workers);
  }
  if (const auto* t = subtable(root, "sampler")) {
    check_keys(*t,
               {"n_per_iter", "rho", "max_iters", "ll_rel_tol", "require_ll_convergence", "target_cov", "burn_in",
                "mh_correlation", "target_acceptance", "max_stages", "sigma_min", "seed_fraction"},
               "[sampler]");
    std::size_t n = cfg.ce.n_per_iter;
    read(*t, "n_per_iter", n);
    cfg.ce.n_per_iter = cfg.sis.n_per_iter = n;
    read(*t, "rho", cfg.ce.rho);
    read(*t, "max_iters", cfg.ce.max_iters);
    read(*t, "ll_rel_tol", cfg.ce.ll_rel_tol);
    read(*t, "require_ll_convergence", cfg.ce.require_ll_convergence);
    read(*t, "target_cov", cfg.sis.target_cov_incremental_weights);
    read(*t, "burn_in", cfg.sis.burn_in);
    read(*t, "mh_correlation", cfg.sis.mh_correlation);
    read(*t, "target_acceptance", cfg.sis.target_acceptance);
    read(*t, "max_stages", cfg.sis.max_stages);
    read(*t, "sigma_min", cfg.sis.sigma_min);
    read(*t, "seed_fraction", cfg.sis.seed_fraction);
  }
  EmConfig em;
  if (const auto* t = subtable(root, "em")) {
    check_keys(*t,
               {"components", "latent_dim", "max_iters", "rel_tol", "sigma2_floor", "weight_floor", "ridge", "init",
                "kmeans_iters", "warm_start"},
               "[em]");
    read(*t, "components", em.components);
    read(*t, "latent_dim", em.latent_dim);
    read(*t, "max_iters", em.max_iters);
    read(*t, "rel_tol", em.rel_tol);
    read(*t, "sigma2_floor", em.sigma2_floor);
    read(*t, "weight_floor", em.weight_floor);
    read(*t, "ridge", em.ridge);
    std::string init = "kmeans";
    read(*t, "init", init);
    em.init = parse_init(init);
    read(*t, "kmeans_iters", em.kmeans_iters);
    read(*t, "warm_start", em.warm_start);
  }
  cfg.ce.em = cfg.sis.em = em;
  if (const auto* t = subtable(root, "reference")) {
    check_keys(*t, {"file", "dir", "n_mc", "max_samples", "seed", "pf"}, "[reference]");
    std::string file, dir = cfg.reference.dir.string();
    read(*t, "file", file);
    read(*t, "dir", dir);
    cfg.reference.file = file;
    cfg.reference.dir = dir;
    read(*t, "n_mc", cfg.reference.n_mc);
    read(*t, "max_samples", cfg.reference.max_samples);
    read(*t, "seed", cfg.reference.seed);
    if (const toml::node* pf = t->get("pf"); pf != nullptr) {
      if (pf->is_number()) cfg.reference.pf = format_double(*pf->value<double>());
      else read(*t, "pf", cfg.reference.pf);
    }
  }
  if (const auto* t = subtable(root, "metrics")) {
    check_keys(*t, {"coverage_k", "ndb_bins", "ndb_alpha", "eval_samples"}, "[metrics]");
    read(*t, "coverage_k", cfg.metrics.coverage_k);
    read(*t, "ndb_bins", cfg.metrics.ndb_bins);
    read(*t, "ndb_alpha", cfg.metrics.ndb_alpha);
    read(*t, "eval_samples", cfg.metrics.eval_samples);
  }
  return cfg;
}

std::string default_name(const ExperimentConfig& cfg) {
  return cfg.problem.label() + "_" + to_string(cfg.method) + "_" + to_string(cfg.family);
}

// --- summary statistics ----------------------------------------------------------

struct Column {
  const char* name;
  double (*get)(const TrialRow&);
};

const Column kColumns[] = {
    {"pf_estimate", [](const TrialRow& r) { return r.pf_estimate; }},
    {"rel_error", [](const TrialRow& r) { return r.metrics.rel_error; }},
    {"avg_nll", [](const TrialRow& r) { return r.metrics.avg_nll; }},
    {"coverage", [](const TrialRow& r) { return r.metrics.coverage; }},
    {"ndb_ratio", [](const TrialRow& r) { return r.metrics.ndb_ratio; }},
    {"n_total", [](const TrialRow& r) { return static_cast<double>(r.metrics.n_total); }},
    {"iterations", [](const TrialRow& r) { return static_cast<double>(r.iterations); }},
    {"wall_time_s", [](const TrialRow& r) { return r.wall_time_s; }},
};

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else if (c == '\n' || c == '\r') out += ' ';
    else out += c;
  }
  return out + "\"";
}

std::string trial_file(const char* stem, std::size_t trial, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_trial%03zu.%s", stem, trial, ext);
  return buf;
}

}  // namespace

void set_family(ExperimentConfig& cfg, ModelFamily family) {
  cfg.family = family;
  cfg.ce.family = family;
  cfg.sis.family = family;
}

Method parse_method(const std::string& name) {
  if (name == "ce") return Method::ce;
  if (name == "sis") return Method::sis;
  throw std::invalid_argument("unknown method '" + name + "'");
}

std::string to_string(Method method) { return method == Method::ce ? "ce" : "sis"; }

void ProblemSpec::validate() const {
  if (kind == "branches") {
    BranchesParams{beta, d}.validate();
  } else if (kind == "oscillator") {
    DuffingParams p;
    p.d = d;
    p.dt = dt;
    p.validate();
  } else if (kind == "external") {
    if (command.empty()) throw std::invalid_argument("external problem needs a command");
    if (d < 1) throw std::invalid_argument("external problem needs d >= 1");
  } else {
    throw std::invalid_argument("unknown problem kind '" + kind + "'");
  }
}

std::unique_ptr<Problem> ProblemSpec::make() const {
  validate();
  std::unique_ptr<Problem> problem;
  if (kind == "branches") {
    problem = std::make_unique<BranchesProblem>(BranchesParams{beta, d});
  } else if (kind == "oscillator") {
    DuffingParams p;
    p.d = d;
    p.dt = dt;
    problem = std::make_unique<DuffingProblem>(p);
  } else {
    problem = external_problem(command, d, ExternalOptions{std::chrono::milliseconds(timeout_ms)});
  }
  problem->set_workers(workers);
  return problem;
}

std::string ProblemSpec::label() const { return kind + "_d" + std::to_string(d); }

std::filesystem::path ReferenceSpec::path_for(const ProblemSpec& problem) const {
  return file.empty() ? dir / (problem.label() + ".rset") : file;
}

void ExperimentConfig::validate() const {
  problem.validate();
  if (trials < 1) throw std::invalid_argument("config: trials must be >= 1");
  if (workers < 1) throw std::invalid_argument("config: workers must be >= 1");
  if (ce.family != family || sis.family != family) {
    throw std::invalid_argument("config: sampler family differs from the experiment family (use set_family)");
  }
  if (method == Method::ce) ce.validate();
  else sis.validate();
  if (family == ModelFamily::mppca && (ce.em.latent_dim < 1 || ce.em.latent_dim >= problem.d)) {
    throw std::invalid_argument("config: latent_dim must satisfy 1 <= latent_dim < d");
  }
  if (ce.em.components < 1) throw std::invalid_argument("config: components must be >= 1");
  if (metrics.eval_samples < 1) throw std::invalid_argument("config: eval_samples must be >= 1");
  if (reference.n_mc < 1 || reference.max_samples <= metrics.coverage_k) {
    throw std::invalid_argument("config: reference needs n_mc >= 1 and max_samples > coverage_k");
  }
}

std::vector<ExperimentConfig> parse_configs(const std::string& toml_text) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config: " << e.description() << " at line " << e.source().begin.line;
    throw std::invalid_argument(msg.str());
  }
  ExperimentConfig base = parse_base(root);
  set_family(base, base.family);

  const toml::table* grid = subtable(root, "grid");
  if (grid == nullptr) {
    if (base.name.empty()) base.name = default_name(base);
    base.validate();
    return {base};
  }

  check_keys(*grid, {"rows", "methods", "families"}, "[grid]");
  const auto rows = read_strings(*grid, "rows", {std::begin(kDefaultGridRows), std::end(kDefaultGridRows)});
  const auto methods = read_strings(*grid, "methods", {"ce", "sis"});
  const auto families = read_strings(*grid, "families", {"mppca", "gmm"});
  std::vector<ExperimentConfig> out;
  for (const auto& row : rows) {
    const auto dash = row.rfind('-');
    if (dash == std::string::npos) throw std::invalid_argument("config: grid row '" + row + "' is not <problem>-<d>");
    ProblemSpec problem = base.problem;
    problem.kind = row.substr(0, dash);
    problem.d = static_cast<std::size_t>(std::stoul(row.substr(dash + 1)));
    if (problem.kind == "external" && problem.command.empty()) {
      spdlog::warn("grid row {} skipped: no [problem] command for the external simulator", row);
      continue;
    }
    for (const auto& m : methods) {
      for (const auto& f : families) {
        ExperimentConfig cfg = base;
        cfg.problem = problem;
        cfg.method = parse_method(m);
        set_family(cfg, parse_family(f));
        cfg.name = default_name(cfg);
        cfg.out = base.out / cfg.name;
        cfg.reference.file.clear();
        cfg.validate();
        out.push_back(std::move(cfg));
      }
    }
  }
  return out;
}

std::vector<ExperimentConfig> load_configs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_configs(text.str());
}

std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial) { return splitmix64(seed + trial); }

std::size_t ExperimentResult::succeeded() const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const TrialRow& r) { return r.ok(); }));
}

ReferenceSet obtain_reference(const ProblemSpec& problem, const ReferenceSpec& spec) {
  const auto path = spec.path_for(problem);
  const auto instance = problem.make();
  if (std::filesystem::exists(path)) {
    ReferenceSet set = load_reference_set(path);
    if (set.problem == instance->description() && set.seed == spec.seed && set.n_mc == spec.n_mc &&
        set.size() >= std::min(spec.max_samples, set.failures)) {
      if (set.size() > spec.max_samples) set.samples.conservativeResize(Eigen::NoChange, static_cast<Eigen::Index>(spec.max_samples));
      return set;
    }
    spdlog::warn("reference set {} was built with different settings; rebuilding", path.string());
  }
  spdlog::info("building reference set {} ({} MC samples)", path.string(), spec.n_mc);
  ReferenceSet set = build_reference_set(*instance, spec.n_mc, spec.max_samples, spec.seed);
  save_reference_set(set, path);
  spdlog::info("reference set: {} failures, pf = {}", set.failures, set.pf_reference);
  return set;
}

double resolve_reference_pf(const ProblemSpec& problem, const ReferenceSpec& spec, const ReferenceSet& set) {
  const bool analytic = spec.pf == "analytic" || (spec.pf == "auto" && problem.kind == "branches");
  if (analytic) {
    if (problem.kind != "branches") throw std::invalid_argument("closed-form reference pf exists only for branches");
    return branches_reference_pf(BranchesParams{problem.beta, problem.d});
  }
  if (spec.pf == "auto" || spec.pf == "mc") return set.pf_reference;
  std::size_t used = 0;
  const double value = std::stod(spec.pf, &used);
  if (used != spec.pf.size() || !(value > 0.0)) throw std::invalid_argument("reference pf '" + spec.pf + "' is not a positive number");
  return value;
}

MetricReport evaluate_run(const SamplerRun& run, const ReferenceSet& reference, double pf_reference,
                          const MetricsSpec& spec, std::uint64_t seed) {
  if (!run.estimate.final_model) throw std::runtime_error("sampler run has no final model");
  const Proposal& model = *run.estimate.final_model;
  MetricReport report;
  report.rel_error = relative_error(run.estimate.pf_hat, pf_reference);
  report.n_total = run.estimate.n_total;

  Rng rng(derive_seed(seed, kEvalStream));
  const Points gen = sample(model, spec.eval_samples, rng);
  report.avg_nll = avg_nll(gen, StandardNormalPrior(dim(model)));
  report.coverage = coverage(reference.samples, gen, spec.coverage_k);
  report.ndb_ratio = ndb(reference.samples, gen, spec.ndb_bins, spec.ndb_alpha, derive_seed(seed, kNdbStream)).ratio;
  return report;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  result.config = cfg;
  const ReferenceSet reference = obtain_reference(cfg.problem, cfg.reference);
  result.pf_reference = resolve_reference_pf(cfg.problem, cfg.reference, reference);
  std::filesystem::create_directories(cfg.out);
  spdlog::info("{}: {} trials, reference pf {}", cfg.name, cfg.trials, result.pf_reference);

  result.rows.resize(cfg.trials);
  parallel_for(cfg.trials, cfg.workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t trial = begin; trial < end; ++trial) {
      TrialRow& row = result.rows[trial];
      row.trial = trial;
      row.problem = cfg.problem.kind;
      row.d = cfg.problem.d;
      row.method = to_string(cfg.method);
      row.family = to_string(cfg.family);
      const std::uint64_t seed = trial_seed(cfg.seed, trial);
      const auto start = std::chrono::steady_clock::now();
      try {
        auto problem = cfg.problem.make();
        const SamplerRun run = cfg.method == Method::ce ? cross_entropy_is(*problem, cfg.ce, seed)
                                                        : sequential_is(*problem, cfg.sis, seed);
        row.pf_estimate = run.estimate.pf_hat;
        row.iterations = run.estimate.iterations;
        row.metrics = evaluate_run(run, reference, result.pf_reference, cfg.metrics, seed);

        std::ofstream trace(cfg.out / trial_file("trace", trial, "csv"));
        run.write_trace_csv(trace, cfg.record_wall_time);
        std::ofstream model(cfg.out / trial_file("model", trial, "json"));
        model << dump_model(*run.estimate.final_model) << '\n';
        if (cfg.plot) {
          ScatterOptions opts;
          if (cfg.problem.kind == "branches") {
            opts.projection = Projection::half_sums;
            opts.beta = cfg.problem.beta;
          }
          opts.title = cfg.name + " trial " + std::to_string(trial);
          emit_scatter(run.eval_samples, run.eval_costs, opts, cfg.out / trial_file("scatter", trial, "svg"));
        }
      } catch (const std::exception& e) {
        row.error = e.what();
        const double nan = std::numeric_limits<double>::quiet_NaN();
        row.pf_estimate = nan;
        row.metrics = {nan, nan, nan, nan, 0};
        spdlog::error("{} trial {} failed: {}", cfg.name, trial, e.what());
      }
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      row.wall_time_s = cfg.record_wall_time ? elapsed : 0.0;
      if (row.ok()) {
        spdlog::info("{} trial {}: pf {:.4e} rel_error {:+.3f} nll {:.2f} coverage {:.3f} ndb {:.3f} n_total {} ({:.1f} s)",
                     cfg.name, trial, row.pf_estimate, row.metrics.rel_error, row.metrics.avg_nll,
                     row.metrics.coverage, row.metrics.ndb_ratio, row.metrics.n_total, elapsed);
      }
    }
  });

  std::ofstream csv(cfg.out / "results.csv");
  write_results_csv(result, csv);
  std::ofstream summary(cfg.out / "summary.json");
  write_summary_json(result, summary);
  return result;
}

void write_results_csv(const ExperimentResult& result, std::ostream& out) {
  out << "trial,problem,d,method,family,pf_estimate,rel_error,avg_nll,coverage,ndb_ratio,n_total,iterations,wall_time_s,error\n";
  for (const auto& r : result.rows) {
    out << r.trial << ',' << r.problem << ',' << r.d << ',' << r.method << ',' << r.family << ','
        << format_double(r.pf_estimate) << ',' << format_double(r.metrics.rel_error) << ','
        << format_double(r.metrics.avg_nll) << ',' << format_double(r.metrics.coverage) << ','
        << format_double(r.metrics.ndb_ratio) << ',' << r.metrics.n_total << ',' << r.iterations << ','
        << format_double(r.wall_time_s) << ',' << csv_escape(r.error) << '\n';
  }
}

void write_summary_json(const ExperimentResult& result, std::ostream& out) {
  const auto& cfg = result.config;
  nlohmann::ordered_json doc;
  doc["name"] = cfg.name;
  doc["problem"] = cfg.problem.kind;
  doc["d"] = cfg.problem.d;
  doc["method"] = to_string(cfg.method);
  doc["family"] = to_string(cfg.family);
  doc["seed"] = cfg.seed;
  doc["trials"] = result.rows.size();
  doc["succeeded"] = result.succeeded();
  doc["pf_reference"] = result.pf_reference;
  nlohmann::ordered_json columns = nlohmann::ordered_json::object();
  for (const auto& col : kColumns) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : result.rows) {
      if (!r.ok()) continue;
      sum += col.get(r);
      ++n;
    }
    nlohmann::ordered_json entry;
    if (n == 0) {
      entry["mean"] = nullptr;
      entry["std"] = nullptr;
    } else {
      const double mean = sum / static_cast<double>(n);
      double ss = 0.0;
      for (const auto& r : result.rows) {
        if (r.ok()) ss += (col.get(r) - mean) * (col.get(r) - mean);
      }
      entry["mean"] = mean;
      entry["std"] = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    }
    columns[col.name] = entry;
  }
  doc["columns"] = columns;
  out << doc.dump(2) << '\n';
}

}  // namespace rareis
