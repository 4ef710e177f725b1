#pragma once

// Client for experts served by a child process speaking line-delimited JSON
// on its standard streams.
//
//   child  -> {"ready": true}                                  (once, at start)
//   parent -> {"request_id": "...", "context": [...], "top_k": k, "threshold": eps}
//   child  -> {"request_id": "...", "candidates": [{"query": "...", "score": s}, ...]}
//          |  {"request_id": "...", "error": {"code": "...", "message": "..."}}
//
// Timeouts and malformed replies raise ExpertError; the child is then killed
// and respawned on the next request. One request is in flight at a time.

#include <chrono>
#include <cstddef>
#include <mutex>
#include <string>
#include <vector>

#include "exp3ss/experts.hpp"

namespace exp3ss {

struct ExternalExpertOptions {
  std::vector<std::string> command;  // argv; command[0] is looked up in PATH
  std::string name;                  // defaults to command[0]
  std::chrono::milliseconds request_timeout{30000};
  std::chrono::milliseconds startup_timeout{30000};
  // top_k sent when the selection rule is a score threshold.
  std::size_t threshold_generation = 10;
};

class ExternalExpert final : public Expert {
 public:
  // Spawns the child and waits for readiness. Throws ExpertError.
  explicit ExternalExpert(ExternalExpertOptions options);
  ~ExternalExpert() override;

  ExternalExpert(const ExternalExpert&) = delete;
  ExternalExpert& operator=(const ExternalExpert&) = delete;

  std::string kind() const override { return "external"; }
  std::string name() const override { return name_; }
  std::string fingerprint() const override;

  std::size_t restarts() const;

 protected:
  std::vector<ExpertRecommendation> generate(const QueryContext& context,
                                             const SelectionRule& rule) const override;

 private:
  void spawn() const;
  void terminate() const;
  std::string read_line(std::chrono::milliseconds timeout) const;
  void write_line(const std::string& line) const;

  ExternalExpertOptions options_;
  std::string name_;
  mutable std::mutex mutex_;
  mutable int fd_ = -1;
  mutable int pid_ = -1;
  mutable std::string buffer_;
  mutable std::size_t next_request_ = 0;
  mutable std::size_t spawns_ = 0;
};

}  // namespace exp3ss
