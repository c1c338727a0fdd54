#include "rareis/external.hpp"

#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <stdexcept>
#include <thread>
#include <vector>

#include <json.hpp>

extern char** environ;

namespace rareis {

namespace {

constexpr std::size_t kStderrKeep = 8192;

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK); }

std::string request_line(std::uint64_t id, const Eigen::Ref<const Vector>& x) {
  nlohmann::json doc;
  doc["id"] = id;
  auto& arr = doc["x"] = nlohmann::json::array();
  for (Eigen::Index i = 0; i < x.size(); ++i) arr.push_back(x[i]);
  return doc.dump() + "\n";
}

}  // namespace

ExternalProblem::ExternalProblem(std::string command, std::size_t d, ExternalOptions options)
    : command_(std::move(command)), d_(d), options_(options) {
  int in_pair[2];
  int out_pipe[2];
  int err_pipe[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, in_pair) != 0) throw std::runtime_error("external: socketpair failed");
  if (::pipe2(out_pipe, O_CLOEXEC) != 0 || ::pipe2(err_pipe, O_CLOEXEC) != 0) throw std::runtime_error("external: pipe failed");

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pair[1], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&actions, err_pipe[1], STDERR_FILENO);
  std::string shell = "/bin/sh";
  std::string flag = "-c";
  char* argv[] = {shell.data(), flag.data(), command_.data(), nullptr};
  const int rc = ::posix_spawn(&pid_, "/bin/sh", &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(in_pair[1]);
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);
  to_child_ = in_pair[0];
  from_child_ = out_pipe[0];
  err_child_ = err_pipe[0];
  if (rc != 0) {
    pid_ = -1;
    shutdown();
    throw std::runtime_error("external: cannot launch '" + command_ + "': " + std::strerror(rc));
  }
  set_nonblocking(to_child_);
  set_nonblocking(from_child_);
  set_nonblocking(err_child_);

  std::string line;
  const auto deadline = std::chrono::steady_clock::now() + options_.timeout;
  while (!next_line(line)) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) fail("timed out waiting for handshake");
    pollfd fds[2] = {{from_child_, POLLIN, 0}, {err_child_, POLLIN, 0}};
    ::poll(fds, 2, static_cast<int>(left.count()));
    drain_stderr();
    if ((fds[0].revents & (POLLIN | POLLHUP)) != 0 && !read_stdout() && !next_line(line)) {
      fail("simulator exited before handshake");
    }
  }
  nlohmann::json hello;
  try {
    hello = nlohmann::json::parse(line);
  } catch (const std::exception&) {
    fail("malformed handshake line: " + line);
  }
  if (!hello.is_object() || hello.value("protocol", -1) != 1 || !hello.contains("d") || !hello["d"].is_number_integer()) {
    fail("bad handshake: " + line);
  }
  if (hello["d"].get<std::size_t>() != d_) {
    fail("handshake dimension " + hello["d"].dump() + " does not match configured d=" + std::to_string(d_));
  }
}

ExternalProblem::~ExternalProblem() { shutdown(); }

void ExternalProblem::shutdown() {
  if (to_child_ >= 0) {
    static const char kClose[] = "{\"close\":true}\n";
    (void)::send(to_child_, kClose, sizeof(kClose) - 1, MSG_NOSIGNAL);
    ::close(to_child_);
    to_child_ = -1;
  }
  if (pid_ > 0) {
    int status = 0;
    bool exited = false;
    for (int i = 0; i < 100 && !exited; ++i) {
      exited = ::waitpid(pid_, &status, WNOHANG) == pid_;
      if (!exited) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    if (!exited) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, &status, 0);
    }
    pid_ = -1;
  }
  if (from_child_ >= 0) ::close(from_child_);
  if (err_child_ >= 0) ::close(err_child_);
  from_child_ = err_child_ = -1;
}

void ExternalProblem::fail(const std::string& what) {
  drain_stderr();
  std::string message = "external simulator '" + command_ + "': " + what;
  if (pid_ > 0) {
    // A broken pipe usually means the process died; give it a moment to be reaped.
    int status = 0;
    for (int i = 0; i < 20; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        if (WIFEXITED(status)) message += " (exited with status " + std::to_string(WEXITSTATUS(status)) + ")";
        else if (WIFSIGNALED(status)) message += " (killed by signal " + std::to_string(WTERMSIG(status)) + ")";
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
  }
  if (!err_buffer_.empty()) message += "\n--- simulator stderr ---\n" + err_buffer_;
  shutdown();
  throw std::runtime_error(message);
}

void ExternalProblem::drain_stderr() {
  if (err_child_ < 0) return;
  char buf[4096];
  for (;;) {
    const ssize_t got = ::read(err_child_, buf, sizeof(buf));
    if (got == 0) {
      ::close(err_child_);
      err_child_ = -1;
      break;
    }
    if (got < 0) break;
    err_buffer_.append(buf, static_cast<std::size_t>(got));
  }
  if (err_buffer_.size() > kStderrKeep) err_buffer_.erase(0, err_buffer_.size() - kStderrKeep);
}

bool ExternalProblem::read_stdout() {
  char buf[65536];
  for (;;) {
    const ssize_t got = ::read(from_child_, buf, sizeof(buf));
    if (got > 0) {
      out_buffer_.append(buf, static_cast<std::size_t>(got));
      continue;
    }
    if (got == 0) return false;
    if (errno == EINTR) continue;
    return true;  // EAGAIN
  }
}

bool ExternalProblem::next_line(std::string& line) {
  const auto pos = out_buffer_.find('\n');
  if (pos == std::string::npos) return false;
  line.assign(out_buffer_, 0, pos);
  out_buffer_.erase(0, pos + 1);
  return true;
}

std::vector<double> ExternalProblem::evaluate(const Points& x) {
  if (pid_ < 0) throw std::runtime_error("external simulator is not running");
  if (static_cast<std::size_t>(x.rows()) != d_) throw std::invalid_argument("external: dimension mismatch");
  const auto n = static_cast<std::size_t>(x.cols());
  std::vector<double> out(n);
  std::vector<bool> done(n, false);
  const std::uint64_t base = next_id_;
  next_id_ += n;

  std::size_t sent = 0;
  std::size_t received = 0;
  std::string pending;
  std::size_t pending_pos = 0;
  std::string line;
  while (received < n) {
    // Refill the outgoing buffer.
    while (pending_pos == pending.size() && sent < n) {
      pending = request_line(base + sent, x.col(static_cast<Eigen::Index>(sent)));
      pending_pos = 0;
      ++sent;
    }
    const bool want_write = pending_pos < pending.size();
    pollfd fds[3] = {{from_child_, POLLIN, 0}, {err_child_, POLLIN, 0}, {to_child_, want_write ? short(POLLOUT) : short(0), 0}};
    const int ready = ::poll(fds, 3, static_cast<int>(options_.timeout.count()));
    if (ready < 0 && errno != EINTR) fail(std::string("poll failed: ") + std::strerror(errno));
    if (ready == 0) {
      fail("timed out after " + std::to_string(options_.timeout.count()) + " ms with " +
           std::to_string(n - received) + " responses outstanding");
    }
    drain_stderr();
    if (want_write && (fds[2].revents & POLLOUT) != 0) {
      const ssize_t put = ::send(to_child_, pending.data() + pending_pos, pending.size() - pending_pos, MSG_NOSIGNAL);
      if (put > 0) pending_pos += static_cast<std::size_t>(put);
      else if (put < 0 && errno != EAGAIN && errno != EINTR) fail("simulator closed its input");
    }
    if ((fds[2].revents & (POLLERR | POLLHUP)) != 0 && want_write) fail("simulator closed its input");
    if ((fds[0].revents & (POLLIN | POLLHUP)) != 0) {
      const bool open = read_stdout();
      while (next_line(line)) {
        if (line.empty()) continue;
        nlohmann::json resp;
        try {
          resp = nlohmann::json::parse(line);
        } catch (const std::exception&) {
          fail("malformed response line: " + line);
        }
        if (!resp.is_object() || !resp.contains("id") || !resp["id"].is_number_unsigned() || !resp.contains("f") ||
            !resp["f"].is_number()) {
          fail("malformed response line: " + line);
        }
        const auto id = resp["id"].get<std::uint64_t>();
        if (id < base || id >= base + n || done[id - base]) fail("unexpected response id " + std::to_string(id));
        out[id - base] = resp["f"].get<double>();
        done[id - base] = true;
        ++received;
      }
      if (!open && received < n) {
        int status = 0;
        if (::waitpid(pid_, &status, WNOHANG) == pid_) {
          pid_ = -1;
          fail("simulator exited with status " + std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));
        }
        fail("simulator closed its output");
      }
    }
  }
  return out;
}

std::unique_ptr<Problem> external_problem(const std::string& command, std::size_t d, ExternalOptions options) {
  return std::make_unique<ExternalProblem>(command, d, options);
}

}  // namespace rareis
