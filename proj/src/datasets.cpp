#include "exp3ss/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "exp3ss/errors.hpp"
#include "exp3ss/rng.hpp"
#include "exp3ss/text.hpp"

namespace exp3ss {

std::size_t QueryLog::query_count() const {
  std::size_t n = 0;
  for (const auto& s : sessions) n += s.queries.size();
  return n;
}

LogFormat parse_log_format(std::string_view name) {
  if (name == "auto") return LogFormat::kAuto;
  if (name == "jsonl") return LogFormat::kJsonl;
  if (name == "tsv") return LogFormat::kTsv;
  throw ConfigError("unknown log format '" + std::string(name) + "'");
}

nlohmann::json PreprocessStats::to_json() const {
  return {{"sessions_read", sessions_read},
          {"sessions_kept", sessions_kept},
          {"sessions_dropped", sessions_dropped},
          {"queries_read", queries_read},
          {"queries_kept", queries_kept},
          {"empty_queries_dropped", empty_queries_dropped},
          {"duplicates_collapsed", duplicates_collapsed}};
}

QueryLog parse_jsonl(std::istream& in, const std::string& source) {
  QueryLog log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(source, line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("session_id") || !j.contains("queries") ||
        !j["queries"].is_array()) {
      throw DataError(source, line_no, "expected {\"session_id\": ..., \"queries\": [...]}");
    }
    Session session;
    const auto& id = j["session_id"];
    if (id.is_string()) {
      session.session_id = id.get<std::string>();
    } else if (id.is_number_integer()) {
      session.session_id = std::to_string(id.get<long long>());
    } else {
      throw DataError(source, line_no, "session_id must be a string");
    }
    for (const auto& q : j["queries"]) {
      if (!q.is_string()) throw DataError(source, line_no, "queries must be strings");
      session.queries.push_back(q.get<std::string>());
    }
    log.sessions.push_back(std::move(session));
  }
  return log;
}

QueryLog parse_tsv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source, 1, "missing TSV header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "session_id\tposition\tquery") {
    throw DataError(source, 1, "TSV header must be 'session_id<TAB>position<TAB>query'");
  }

  struct Pending {
    std::map<std::size_t, std::pair<std::string, std::size_t>> by_position;  // -> (query, line)
  };
  std::vector<std::string> order;
  std::map<std::string, Pending> pending;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos) throw DataError(source, line_no, "expected three tab-separated fields");
    const std::string id = line.substr(0, tab1);
    const std::string pos_text = line.substr(tab1 + 1, tab2 - tab1 - 1);
    std::string query = line.substr(tab2 + 1);
    if (query.find('\t') != std::string::npos) throw DataError(source, line_no, "too many fields");
    std::size_t position = 0;
    auto [end, ec] = std::from_chars(pos_text.data(), pos_text.data() + pos_text.size(), position);
    if (ec != std::errc() || end != pos_text.data() + pos_text.size()) {
      throw DataError(source, line_no, "position must be a nonnegative integer");
    }
    auto [it, inserted] = pending.try_emplace(id);
    if (inserted) order.push_back(id);
    if (!it->second.by_position.emplace(position, std::make_pair(std::move(query), line_no)).second) {
      throw DataError(source, line_no, "duplicate position for session '" + id + "'");
    }
  }

  QueryLog log;
  for (const auto& id : order) {
    Session session{id, {}};
    std::size_t expected = 0;
    for (auto& [position, entry] : pending[id].by_position) {
      if (position != expected) {
        throw DataError(source, entry.second,
                        "positions for session '" + id + "' are not dense from 0");
      }
      session.queries.push_back(std::move(entry.first));
      ++expected;
    }
    log.sessions.push_back(std::move(session));
  }
  return log;
}

LoadedLog preprocess(QueryLog raw, const PreprocessOptions& options) {
  LoadedLog out;
  auto& stats = out.stats;
  for (auto& session : raw.sessions) {
    ++stats.sessions_read;
    stats.queries_read += session.queries.size();
    Session cleaned{std::move(session.session_id), {}};
    for (auto& q : session.queries) {
      std::string text = options.normalize ? normalize_query(q) : std::move(q);
      if (options.drop_empty && tokenize(text).empty()) {
        ++stats.empty_queries_dropped;
        continue;
      }
      if (options.collapse_duplicates && !cleaned.queries.empty() &&
          normalize_query(cleaned.queries.back()) == normalize_query(text)) {
        ++stats.duplicates_collapsed;
        continue;
      }
      cleaned.queries.push_back(std::move(text));
    }
    if (cleaned.queries.size() < options.min_session_length) {
      ++stats.sessions_dropped;
      continue;
    }
    stats.queries_kept += cleaned.queries.size();
    out.log.sessions.push_back(std::move(cleaned));
  }
  stats.sessions_kept = out.log.sessions.size();
  return out;
}

LoadedLog load_log(const std::filesystem::path& path, LogFormat format,
                   const PreprocessOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open log file " + path.string());
  if (format == LogFormat::kAuto) {
    format = path.extension() == ".tsv" ? LogFormat::kTsv : LogFormat::kJsonl;
  }
  QueryLog raw = format == LogFormat::kTsv ? parse_tsv(in, path.string())
                                           : parse_jsonl(in, path.string());
  LoadedLog loaded = preprocess(std::move(raw), options);
  if (loaded.log.sessions.empty()) throw DataError(path.string() + ": no usable sessions");
  return loaded;
}

void write_jsonl(const QueryLog& log, std::ostream& out) {
  for (const auto& session : log.sessions) {
    nlohmann::json j;
    j["session_id"] = session.session_id;
    j["queries"] = session.queries;
    out << j.dump() << '\n';
  }
}

void write_jsonl(const QueryLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_jsonl(log, out);
}

// ---------------------------------------------------------------------------
// Synthetic logs

void SyntheticConfig::validate() const {
  if (n_topics < 1 || keywords_per_topic < 1 || n_sessions < 1 || min_session_length < 1) {
    throw ConfigError("synthetic log counts must be at least 1");
  }
  if (min_session_length > max_session_length) {
    throw ConfigError("synthetic session length range is empty");
  }
  if (!(drift_probability >= 0.0 && drift_probability <= 1.0)) {
    throw ConfigError("drift probability must lie in [0, 1]");
  }
}

nlohmann::json SyntheticConfig::to_json() const {
  return {{"n_topics", n_topics},
          {"keywords_per_topic", keywords_per_topic},
          {"n_sessions", n_sessions},
          {"session_length_range", {min_session_length, max_session_length}},
          {"drift_probability", drift_probability},
          {"seed", seed}};
}

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  try {
    c.n_topics = j.value("n_topics", c.n_topics);
    c.keywords_per_topic = j.value("keywords_per_topic", c.keywords_per_topic);
    c.n_sessions = j.value("n_sessions", c.n_sessions);
    if (j.contains("session_length_range")) {
      c.min_session_length = j["session_length_range"].at(0).get<std::size_t>();
      c.max_session_length = j["session_length_range"].at(1).get<std::size_t>();
    }
    c.drift_probability = j.value("drift_probability", c.drift_probability);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid synthetic config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

constexpr const char* kSyllables[] = {"ka", "lo", "mi", "ne", "ru", "ta", "so", "vi", "de", "po",
                                      "an", "el", "or", "is", "um", "ex", "gra", "tri", "fen", "bol"};
constexpr std::size_t kSyllableCount = sizeof(kSyllables) / sizeof(kSyllables[0]);

std::vector<std::vector<std::string>> build_vocabulary(std::size_t n_topics, std::size_t per_topic) {
  std::set<std::string> used;
  std::vector<std::vector<std::string>> pools(n_topics);
  for (std::size_t topic = 0; topic < n_topics; ++topic) {
    for (std::size_t k = 0; k < per_topic; ++k) {
      std::uint64_t h = splitmix64((static_cast<std::uint64_t>(topic) << 32) | k);
      std::string word;
      for (int s = 0; s < 3; ++s) {
        word += kSyllables[h % kSyllableCount];
        h /= kSyllableCount;
      }
      while (!used.insert(word).second) {
        h = splitmix64(h + 1);
        word += kSyllables[h % kSyllableCount];
      }
      pools[topic].push_back(std::move(word));
    }
  }
  return pools;
}

// k distinct indices from [0, n) excluding `taken`.
std::vector<std::size_t> draw_distinct(Engine& engine, std::size_t n, std::size_t k,
                                       const std::vector<std::size_t>& taken) {
  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::find(taken.begin(), taken.end(), i) == taken.end()) free.push_back(i);
  }
  k = std::min(k, free.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(engine, free.size() - i);
    std::swap(free[i], free[j]);
  }
  free.resize(k);
  return free;
}

}  // namespace

std::vector<std::string> synthetic_topic_keywords(const SyntheticConfig& config, std::size_t topic) {
  return build_vocabulary(config.n_topics, config.keywords_per_topic).at(topic);
}

QueryLog generate_synthetic_log(const SyntheticConfig& config) {
  config.validate();
  const auto pools = build_vocabulary(config.n_topics, config.keywords_per_topic);
  const std::size_t pool_size = config.keywords_per_topic;
  constexpr std::size_t kAnchors = 2;
  constexpr std::size_t kMinWords = 3;
  constexpr std::size_t kMaxWords = 7;
  constexpr double kAnchorSwap = 0.35;

  Engine engine(derive_seed(config.seed, 0));
  QueryLog log;
  log.sessions.reserve(config.n_sessions);
  const std::size_t id_width = std::to_string(config.n_sessions).size();
  for (std::size_t s = 0; s < config.n_sessions; ++s) {
    std::string id = std::to_string(s);
    Session session{"syn-" + std::string(id_width - id.size(), '0') + id, {}};

    const std::size_t length =
        config.min_session_length +
        uniform_index(engine, config.max_session_length - config.min_session_length + 1);
    std::size_t topic = uniform_index(engine, config.n_topics);
    std::vector<std::size_t> anchors = draw_distinct(engine, pool_size, kAnchors, {});

    for (std::size_t i = 0; i < length; ++i) {
      if (i > 0) {
        if (uniform01(engine) < config.drift_probability) {
          topic = (topic + 1) % config.n_topics;
          anchors = draw_distinct(engine, pool_size, kAnchors, {});
        } else if (anchors.size() == kAnchors && uniform01(engine) < kAnchorSwap) {
          const auto replacement = draw_distinct(engine, pool_size, 1, anchors);
          if (!replacement.empty()) anchors[uniform_index(engine, anchors.size())] = replacement[0];
        }
      }
      std::string query;
      for (int attempt = 0; attempt < 16; ++attempt) {
        const std::size_t words = kMinWords + uniform_index(engine, kMaxWords - kMinWords + 1);
        std::vector<std::size_t> chosen = anchors;
        const std::size_t extra = words > chosen.size() ? words - chosen.size() : 0;
        for (std::size_t k : draw_distinct(engine, pool_size, extra, anchors)) chosen.push_back(k);
        std::sort(chosen.begin(), chosen.end());
        query.clear();
        for (std::size_t k : chosen) {
          if (!query.empty()) query.push_back(' ');
          query += pools[topic][k];
        }
        if (session.queries.empty() || session.queries.back() != query) break;
      }
      if (!session.queries.empty() && session.queries.back() == query) continue;
      session.queries.push_back(std::move(query));
    }
    log.sessions.push_back(std::move(session));
  }
  return log;
}

std::pair<QueryLog, QueryLog> split_log(const QueryLog& log, double eval_fraction,
                                        std::uint64_t seed) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw ConfigError("eval fraction must lie in (0, 1)");
  }
  const std::size_t n = log.sessions.size();
  const auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(n)));
  if (n_eval == 0 || n_eval >= n) {
    throw DataError("split of " + std::to_string(n) + " sessions leaves one side empty");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Engine engine(derive_seed(seed, 0));
  for (std::size_t i = 0; i + 1 < n; ++i) {
    std::swap(order[i], order[i + uniform_index(engine, n - i)]);
  }
  std::vector<bool> is_eval(n, false);
  for (std::size_t i = 0; i < n_eval; ++i) is_eval[order[i]] = true;

  std::pair<QueryLog, QueryLog> out;
  for (std::size_t i = 0; i < n; ++i) {
    (is_eval[i] ? out.second : out.first).sessions.push_back(log.sessions[i]);
  }
  return out;
}

}  // namespace exp3ss
