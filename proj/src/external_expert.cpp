#include "exp3ss/external_expert.hpp"

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "exp3ss/errors.hpp"

extern char** environ;

namespace exp3ss {

using Clock = std::chrono::steady_clock;

ExternalExpert::ExternalExpert(ExternalExpertOptions options) : options_(std::move(options)) {
  if (options_.command.empty()) throw ConfigError("external expert needs a command");
  name_ = options_.name.empty() ? options_.command.front() : options_.name;
  std::lock_guard lock(mutex_);
  spawn();
}

ExternalExpert::~ExternalExpert() {
  std::lock_guard lock(mutex_);
  if (fd_ >= 0) {
    // End of input asks the child to shut down; give it a moment first.
    ::shutdown(fd_, SHUT_WR);
    const auto deadline = Clock::now() + std::chrono::seconds(2);
    while (Clock::now() < deadline) {
      int status = 0;
      if (::waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
  }
  terminate();
}

std::string ExternalExpert::fingerprint() const {
  std::string joined = "external:";
  for (const auto& arg : options_.command) joined += arg + ' ';
  return joined;
}

std::size_t ExternalExpert::restarts() const {
  std::lock_guard lock(mutex_);
  return spawns_ > 0 ? spawns_ - 1 : 0;
}

void ExternalExpert::spawn() const {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
    throw ExpertError(name_ + ": socketpair failed: " + std::strerror(errno));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);

  std::vector<char*> argv;
  for (const auto& arg : options_.command) argv.push_back(const_cast<char*>(arg.c_str()));
  argv.push_back(nullptr);
  pid_t pid = -1;
  const int rc = ::posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(fds[1]);
  if (rc != 0) {
    ::close(fds[0]);
    throw ExpertError(name_ + ": cannot start '" + options_.command.front() + "': " + std::strerror(rc));
  }
  fd_ = fds[0];
  pid_ = pid;
  buffer_.clear();
  ++spawns_;

  std::string line;
  try {
    line = read_line(options_.startup_timeout);
  } catch (const ExpertError&) {
    terminate();
    throw;
  }
  nlohmann::json ready = nlohmann::json::parse(line, nullptr, false);
  if (!ready.is_object() || ready.value("ready", false) != true) {
    terminate();
    throw ExpertError(name_ + ": expected a readiness line, got '" + line + "'");
  }
  spdlog::debug("external expert '{}' ready (pid {})", name_, pid_);
}

void ExternalExpert::terminate() const {
  if (pid_ > 0) {
    ::kill(pid_, SIGKILL);
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
  pid_ = -1;
  buffer_.clear();
}

std::string ExternalExpert::read_line(std::chrono::milliseconds timeout) const {
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) throw ExpertError(name_ + ": timed out waiting for a reply");
    pollfd pfd{fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw ExpertError(name_ + ": poll failed: " + std::strerror(errno));
    }
    if (ready == 0) continue;
    char chunk[4096];
    const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ExpertError(name_ + ": read failed: " + std::strerror(errno));
    }
    if (n == 0) throw ExpertError(name_ + ": process closed its output");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void ExternalExpert::write_line(const std::string& line) const {
  std::string data = line + '\n';
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ExpertError(name_ + ": write failed: " + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::vector<ExpertRecommendation> ExternalExpert::generate(const QueryContext& context,
                                                           const SelectionRule& rule) const {
  std::lock_guard lock(mutex_);
  if (fd_ < 0) spawn();

  nlohmann::json request;
  request["request_id"] = name_ + "-" + std::to_string(next_request_++);
  request["context"] = context.executed();
  if (const auto* top = std::get_if<TopK>(&rule)) {
    request["top_k"] = top->k;
    request["threshold"] = 0.0;
  } else {
    request["top_k"] = options_.threshold_generation;
    request["threshold"] = std::get<ScoreThreshold>(rule).epsilon;
  }

  std::string line;
  try {
    write_line(request.dump());
    line = read_line(options_.request_timeout);
  } catch (const ExpertError&) {
    terminate();
    throw;
  }

  auto malformed = [&](const std::string& why) {
    terminate();
    return ExpertError(name_ + ": malformed response (" + why + "): " + line.substr(0, 200));
  };
  const nlohmann::json response = nlohmann::json::parse(line, nullptr, false);
  if (!response.is_object()) throw malformed("not a JSON object");
  if (!response.contains("request_id") || response["request_id"] != request["request_id"]) {
    throw malformed("request_id mismatch");
  }
  if (response.contains("error") && !response["error"].is_null()) {
    const auto& err = response["error"];
    const std::string code = err.is_object() ? err.value("code", "unknown") : "unknown";
    const std::string message = err.is_object() ? err.value("message", "") : err.dump();
    throw ExpertError(name_ + ": " + code + ": " + message);
  }
  if (!response.contains("candidates") || !response["candidates"].is_array()) {
    throw malformed("missing candidates");
  }
  std::vector<ExpertRecommendation> out;
  double previous = 1.0;
  for (const auto& c : response["candidates"]) {
    if (!c.is_object() || !c.contains("query") || !c["query"].is_string() || !c.contains("score") ||
        !c["score"].is_number()) {
      throw malformed("candidate needs a string query and a numeric score");
    }
    const double score = c["score"].get<double>();
    if (!(score >= 0.0 && score <= 1.0)) throw malformed("score outside [0, 1]");
    if (score > previous) throw malformed("scores are not descending");
    previous = score;
    out.push_back({c["query"].get<std::string>(), score});
  }
  return out;
}

}  // namespace exp3ss
