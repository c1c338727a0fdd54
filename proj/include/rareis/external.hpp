#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <sys/types.h>

#include "rareis/problems.hpp"

namespace rareis {

struct ExternalOptions {
  /// Maximum time without any progress (handshake, response) before failing.
  std::chrono::milliseconds timeout{60000};
};

/// Cost function served by a subprocess over newline-delimited JSON on its
/// standard input/output:
///   simulator -> tool, first line: {"protocol":1,"d":<int>}
///   tool -> simulator:             {"id":<uint64>,"x":[<d doubles>]}
///   simulator -> tool:             {"id":<uint64>,"f":<double>}
///   tool -> simulator, at exit:    {"close":true}
/// Requests are pipelined; responses may arrive in any order and are matched
/// by id. Ids increase strictly over the session.
class ExternalProblem final : public Problem {
 public:
  ExternalProblem(std::string command, std::size_t d, ExternalOptions options = {});
  ~ExternalProblem() override;

  ExternalProblem(const ExternalProblem&) = delete;
  ExternalProblem& operator=(const ExternalProblem&) = delete;

  std::string name() const override { return "external"; }
  std::size_t dim() const override { return d_; }
  std::string description() const override { return "external simulator: " + command_; }
  std::vector<double> evaluate(const Points& x) override;

 private:
  [[noreturn]] void fail(const std::string& what);
  void drain_stderr();
  /// Reads available stdout bytes; returns false on EOF.
  bool read_stdout();
  bool next_line(std::string& line);
  void shutdown();

  std::string command_;
  std::size_t d_;
  ExternalOptions options_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  int err_child_ = -1;
  std::uint64_t next_id_ = 0;
  std::string out_buffer_;
  std::string err_buffer_;
};

std::unique_ptr<Problem> external_problem(const std::string& command, std::size_t d, ExternalOptions options = {});

}  // namespace rareis
