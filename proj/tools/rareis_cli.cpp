// Command-line front end: experiment runs, reference-set builds, and a
// protocol stub simulator for exercising the external-problem transport.

#include <poll.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "rareis/experiment.hpp"
#include "rareis/reference_set.hpp"

namespace {

using nlohmann::json;

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("rareis");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  if (const char* level = std::getenv("RAREIS_LOG_LEVEL")) {
    spdlog::set_level(spdlog::level::from_str(level));
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

struct RunArgs {
  std::string config;
  std::optional<std::size_t> trials;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  bool plot = false;
};

int run_command(const RunArgs& args) {
  auto configs = rareis::load_configs(args.config);
  const bool grid = configs.size() > 1;
  int status = 0;
  for (auto& cfg : configs) {
    if (args.trials) cfg.trials = *args.trials;
    if (args.seed) cfg.seed = *args.seed;
    if (args.workers) cfg.workers = *args.workers;
    if (args.out) cfg.out = grid ? std::filesystem::path(*args.out) / cfg.name : std::filesystem::path(*args.out);
    if (args.plot) cfg.plot = true;
    const auto result = rareis::run_experiment(cfg);
    std::cout << cfg.name << ": " << result.succeeded() << "/" << result.rows.size() << " trials succeeded, results in "
              << cfg.out.string() << '\n';
    if (result.succeeded() == 0) status = 1;
  }
  return status;
}

struct ReferenceArgs {
  std::string problem = "branches";
  std::size_t d = 40;
  double beta = 3.5;
  double dt = 1e-3;
  std::string command;
  std::size_t n = 20'000'000;
  std::size_t max_samples = 10'000;
  std::uint64_t seed = 20240101;
  std::string out;
};

int reference_command(const ReferenceArgs& args) {
  rareis::ProblemSpec spec;
  spec.kind = args.problem;
  spec.d = args.d;
  spec.beta = args.beta;
  spec.dt = args.dt;
  spec.command = args.command;
  auto problem = spec.make();
  const auto set = rareis::build_reference_set(*problem, args.n, args.max_samples, args.seed);
  rareis::save_reference_set(set, args.out);
  std::cout << "pf = " << set.pf_reference << " (" << set.failures << " failures in " << set.n_mc << " samples), "
            << set.size() << " stored in " << args.out << '\n';
  return 0;
}

// --- protocol stub ---------------------------------------------------------------

struct StubArgs {
  std::size_t d = 4;
  double level = 1.0;
  std::optional<std::size_t> handshake_d;
  std::optional<std::uint64_t> drop_id;
  std::optional<std::uint64_t> malformed_id;
  std::optional<std::size_t> exit_after;
  /// Answer buffered requests in reverse order once this many are pending or
  /// the input runs dry.
  std::size_t reverse_burst = 0;
};

void write_all(const std::string& s) {
  std::size_t off = 0;
  while (off < s.size()) {
    const ssize_t n = ::write(STDOUT_FILENO, s.data() + off, s.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      std::exit(3);
    }
    off += static_cast<std::size_t>(n);
  }
}

bool input_pending() {
  pollfd pfd{STDIN_FILENO, POLLIN, 0};
  return ::poll(&pfd, 1, 0) > 0;
}

int stub_command(const StubArgs& args) {
  write_all(json{{"protocol", 1}, {"d", args.handshake_d.value_or(args.d)}}.dump() + "\n");
  std::string buffer;
  std::vector<std::string> pending;
  std::size_t answered = 0;

  const auto flush = [&] {
    for (auto it = pending.rbegin(); it != pending.rend(); ++it) write_all(*it);
    pending.clear();
  };
  const auto respond = [&](const json& request) {
    const auto id = request.at("id").get<std::uint64_t>();
    const auto x = request.at("x").get<std::vector<double>>();
    if (x.size() != args.d) {
      std::cerr << "stub: request " << id << " has " << x.size() << " coordinates, expected " << args.d << '\n';
      std::exit(2);
    }
    if (args.drop_id && *args.drop_id == id) return;
    std::string line;
    if (args.malformed_id && *args.malformed_id == id) {
      line = "{\"id\":" + std::to_string(id) + ",\"f\":\n";
    } else {
      double norm2 = 0.0;
      for (double v : x) norm2 += v * v;
      line = json{{"id", id}, {"f", args.level - norm2 / static_cast<double>(args.d)}}.dump() + "\n";
    }
    if (args.reverse_burst > 0) {
      pending.push_back(std::move(line));
      if (pending.size() >= args.reverse_burst) flush();
    } else {
      write_all(line);
    }
    if (args.exit_after && ++answered >= *args.exit_after) {
      flush();
      std::cerr << "stub: exiting after " << answered << " responses\n";
      std::exit(4);
    }
  };

  char chunk[65536];
  for (;;) {
    const ssize_t n = ::read(STDIN_FILENO, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t nl;
    while ((nl = buffer.find('\n')) != std::string::npos) {
      const json msg = json::parse(buffer.substr(0, nl));
      buffer.erase(0, nl + 1);
      if (msg.contains("close")) {
        flush();
        return 0;
      }
      respond(msg);
    }
    if (!input_pending()) flush();
  }
  flush();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rare-event importance sampling with low-rank mixture proposals"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment (or a grid of experiments) from a TOML config");
  run_cmd->add_option("--config", run.config, "Experiment TOML file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--trials", run.trials, "Override the number of trials");
  run_cmd->add_option("--seed", run.seed, "Override the master seed");
  run_cmd->add_option("--out", run.out, "Override the output directory");
  run_cmd->add_option("--workers", run.workers, "Trials run concurrently")->check(CLI::PositiveNumber);
  run_cmd->add_flag("--plot", run.plot, "Write SVG scatters of each trial's evaluation batch");

  ReferenceArgs ref;
  auto* ref_cmd = app.add_subcommand("reference", "Build a reference failure-sample cache by plain Monte Carlo");
  ref_cmd->add_option("--problem", ref.problem, "branches | oscillator | external")->required();
  ref_cmd->add_option("--n", ref.n, "Number of prior samples")->required();
  ref_cmd->add_option("--out", ref.out, "Output .rset file (metadata goes to <out>.json)")->required();
  ref_cmd->add_option("--d", ref.d, "Dimension");
  ref_cmd->add_option("--beta", ref.beta, "Branches reliability index");
  ref_cmd->add_option("--dt", ref.dt, "Oscillator integration step");
  ref_cmd->add_option("--command", ref.command, "External simulator command");
  ref_cmd->add_option("--max-samples", ref.max_samples, "Failure samples kept");
  ref_cmd->add_option("--seed", ref.seed, "Sampling seed");

  StubArgs stub;
  auto* stub_cmd = app.add_subcommand("protocol-stub", "Test simulator returning f = level - |x|^2 / d over the wire protocol");
  stub_cmd->add_option("--d", stub.d, "Dimension of accepted requests");
  stub_cmd->add_option("--level", stub.level, "Cost is f = level - |x|^2 / d");
  stub_cmd->add_option("--handshake-d", stub.handshake_d, "Dimension announced in the handshake (default: --d)");
  stub_cmd->add_option("--drop-id", stub.drop_id, "Never answer this request id");
  stub_cmd->add_option("--malformed-id", stub.malformed_id, "Answer this request id with a malformed line");
  stub_cmd->add_option("--exit-after", stub.exit_after, "Exit with status 4 after this many responses");
  stub_cmd->add_option("--reverse-burst", stub.reverse_burst, "Answer in reverse order in bursts of this size");

  CLI11_PARSE(app, argc, argv);
  configure_logging();
  try {
    if (*run_cmd) return run_command(run);
    if (*ref_cmd) return reference_command(ref);
    if (*stub_cmd) return stub_command(stub);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
