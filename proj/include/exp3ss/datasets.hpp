#pragma once

// Query logs: loading, preprocessing, splitting, and a synthetic generator.
//
// JSONL format, one session per line:
//   {"session_id": "<string>", "queries": ["<q1>", "<q2>", ...]}
// TSV format, header row required, positions dense from 0 within a session:
//   session_id<TAB>position<TAB>query

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace exp3ss {

struct Session {
  std::string session_id;
  std::vector<std::string> queries;

  friend bool operator==(const Session&, const Session&) = default;
};

struct QueryLog {
  std::vector<Session> sessions;

  std::size_t query_count() const;
  friend bool operator==(const QueryLog&, const QueryLog&) = default;
};

enum class LogFormat { kAuto, kJsonl, kTsv };

LogFormat parse_log_format(std::string_view name);

struct PreprocessOptions {
  bool normalize = true;
  bool drop_empty = true;
  bool collapse_duplicates = true;
  std::size_t min_session_length = 2;
};

struct PreprocessStats {
  std::size_t sessions_read = 0;
  std::size_t sessions_kept = 0;
  std::size_t sessions_dropped = 0;
  std::size_t queries_read = 0;
  std::size_t queries_kept = 0;
  std::size_t empty_queries_dropped = 0;
  std::size_t duplicates_collapsed = 0;

  nlohmann::json to_json() const;
};

struct LoadedLog {
  QueryLog log;
  PreprocessStats stats;
};

// Raw parsers; throw DataError with the offending line number.
QueryLog parse_jsonl(std::istream& in, const std::string& source = "<jsonl>");
QueryLog parse_tsv(std::istream& in, const std::string& source = "<tsv>");

LoadedLog preprocess(QueryLog raw, const PreprocessOptions& options = {});

// Parses and preprocesses. kAuto picks TSV for .tsv files and JSONL
// otherwise. Throws DataError when no usable session remains.
LoadedLog load_log(const std::filesystem::path& path, LogFormat format = LogFormat::kAuto,
                   const PreprocessOptions& options = {});

void write_jsonl(const QueryLog& log, std::ostream& out);
void write_jsonl(const QueryLog& log, const std::filesystem::path& path);

struct SyntheticConfig {
  std::size_t n_topics = 40;
  std::size_t keywords_per_topic = 16;
  std::size_t n_sessions = 1000;
  std::size_t min_session_length = 3;
  std::size_t max_session_length = 8;
  double drift_probability = 0.1;
  std::uint64_t seed = 7;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticConfig from_json(const nlohmann::json& j);
};

// Topic-anchored sessions: every query carries the session's current anchor
// keywords plus extra keywords from the same topic pool, so consecutive
// queries overlap. Deterministic for a seed.
QueryLog generate_synthetic_log(const SyntheticConfig& config);

// Keywords of one topic, in pool order. Exposed for tests.
std::vector<std::string> synthetic_topic_keywords(const SyntheticConfig& config, std::size_t topic);

// Session-level split. Throws DataError if either side would be empty.
std::pair<QueryLog, QueryLog> split_log(const QueryLog& log, double eval_fraction,
                                        std::uint64_t seed);

}  // namespace exp3ss
