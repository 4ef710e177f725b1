#include "exp3ss/experts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "exp3ss/errors.hpp"
#include "exp3ss/text.hpp"
#include "exp3ss/text_metrics.hpp"

namespace exp3ss {

QueryContext::QueryContext(std::vector<std::string> executed) {
  for (auto& q : executed) push(std::move(q));
  if (executed_.empty()) throw UsageError("query context must not be empty");
}

void QueryContext::push(std::string query) { executed_.push_back(normalize_query(query)); }

std::vector<ExpertRecommendation> Expert::recommend(const QueryContext& context,
                                                    const SelectionRule& rule) const {
  validate(rule);
  std::vector<ExpertRecommendation> out;
  std::unordered_map<std::string, std::size_t> seen;
  for (auto& rec : generate(context, rule)) {
    std::string query = normalize_query(rec.query);
    if (query.empty()) continue;
    const double score = std::isnan(rec.score) ? 0.0 : std::clamp(rec.score, 0.0, 1.0);
    auto [it, inserted] = seen.emplace(query, out.size());
    if (inserted) {
      out.push_back({std::move(query), score});
    } else {
      out[it->second].score = std::max(out[it->second].score, score);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });
  if (const auto* top = std::get_if<TopK>(&rule)) {
    if (out.size() > top->k) out.resize(top->k);
  } else {
    const double eps = std::get<ScoreThreshold>(rule).epsilon;
    std::erase_if(out, [eps](const auto& r) { return r.score < eps; });
  }
  return out;
}

std::string hex64(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

namespace {

std::string fingerprint_of(const nlohmann::json& model) { return hex64(fnv1a64(model.dump())); }

std::vector<std::string> sorted_unique_tokens(std::string_view text) {
  auto set = tokenize(text);
  return {set.begin(), set.end()};
}

}  // namespace

// ---------------------------------------------------------------------------

ScriptedExpert::ScriptedExpert(std::string name, std::vector<ExpertRecommendation> fixed)
    : name_(std::move(name)),
      script_([fixed = std::move(fixed)](const QueryContext&) { return fixed; }) {}

ScriptedExpert::ScriptedExpert(std::string name, Script script)
    : name_(std::move(name)), script_(std::move(script)) {}

std::string ScriptedExpert::fingerprint() const { return "scripted:" + name_; }

std::vector<ExpertRecommendation> ScriptedExpert::generate(const QueryContext& context,
                                                           const SelectionRule&) const {
  return script_(context);
}

// ---------------------------------------------------------------------------

nlohmann::json AdjacencyParams::to_json() const { return {{"alpha", alpha}, {"n_sim", n_sim}}; }

AdjacencyExpert AdjacencyExpert::train(const QueryLog& log, const AdjacencyParams& params) {
  if (!(params.alpha >= 0.0) || params.n_sim < 1) {
    throw ConfigError("adjacency expert needs alpha >= 0 and n_sim >= 1");
  }
  std::map<std::string, std::map<std::string, std::uint64_t>> transitions;
  for (const auto& session : log.sessions) {
    for (std::size_t i = 1; i < session.queries.size(); ++i) {
      auto from = normalize_query(session.queries[i - 1]);
      auto to = normalize_query(session.queries[i]);
      if (from.empty() || to.empty() || from == to) continue;
      ++transitions[std::move(from)][std::move(to)];
    }
  }
  if (transitions.empty()) throw DataError("adjacency expert: log has no consecutive query pairs");

  AdjacencyExpert expert;
  expert.params_ = params;
  for (auto& [from, successors] : transitions) {
    Source source{from, sorted_unique_tokens(from), {}};
    for (auto& [to, count] : successors) source.successors.emplace_back(to, count);
    expert.sources_.push_back(std::move(source));
  }
  expert.build_index();
  return expert;
}

void AdjacencyExpert::build_index() {
  postings_.clear();
  for (std::size_t i = 0; i < sources_.size(); ++i) {
    for (const auto& token : sources_[i].tokens) postings_[token].push_back(i);
  }
}

std::vector<ExpertRecommendation> AdjacencyExpert::generate(const QueryContext& context,
                                                            const SelectionRule&) const {
  if (!trained()) throw UsageError("adjacency expert used before training");
  const auto query_tokens = sorted_unique_tokens(context.current());
  if (query_tokens.empty()) return {};

  std::map<std::size_t, std::size_t> shared;  // source -> |intersection|
  for (const auto& token : query_tokens) {
    if (auto it = postings_.find(token); it != postings_.end()) {
      for (std::size_t s : it->second) ++shared[s];
    }
  }
  struct Match {
    std::size_t source;
    double jaccard;
  };
  std::vector<Match> matches;
  for (auto [s, inter] : shared) {
    const std::size_t uni = query_tokens.size() + sources_[s].tokens.size() - inter;
    matches.push_back({s, static_cast<double>(inter) / static_cast<double>(uni)});
  }
  // Sources are sorted by text, so index order breaks ties by text.
  std::stable_sort(matches.begin(), matches.end(),
                   [](const Match& a, const Match& b) { return a.jaccard > b.jaccard; });
  if (matches.size() > params_.n_sim) matches.resize(params_.n_sim);

  std::map<std::string, double> best;
  for (const auto& m : matches) {
    const auto& successors = sources_[m.source].successors;
    double total = 0.0;
    for (const auto& [to, count] : successors) total += static_cast<double>(count) + params_.alpha;
    for (const auto& [to, count] : successors) {
      const double score = m.jaccard * (static_cast<double>(count) + params_.alpha) / total;
      auto [it, inserted] = best.emplace(to, score);
      if (!inserted) it->second = std::max(it->second, score);
    }
  }
  double top = 0.0;
  for (const auto& [q, s] : best) top = std::max(top, s);
  std::vector<ExpertRecommendation> out;
  if (top <= 0.0) return out;
  for (const auto& [q, s] : best) out.push_back({q, s / top});
  return out;
}

nlohmann::json AdjacencyExpert::to_json() const {
  auto transitions = nlohmann::json::array();
  for (const auto& source : sources_) {
    auto successors = nlohmann::json::array();
    for (const auto& [to, count] : source.successors) successors.push_back({to, count});
    transitions.push_back({source.query, std::move(successors)});
  }
  return {{"params", params_.to_json()}, {"transitions", std::move(transitions)}};
}

AdjacencyExpert AdjacencyExpert::from_json(const nlohmann::json& j) {
  AdjacencyExpert expert;
  try {
    expert.params_.alpha = j.at("params").at("alpha").get<double>();
    expert.params_.n_sim = j.at("params").at("n_sim").get<std::size_t>();
    for (const auto& entry : j.at("transitions")) {
      Source source;
      source.query = entry.at(0).get<std::string>();
      source.tokens = sorted_unique_tokens(source.query);
      for (const auto& s : entry.at(1)) {
        source.successors.emplace_back(s.at(0).get<std::string>(), s.at(1).get<std::uint64_t>());
      }
      expert.sources_.push_back(std::move(source));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed adjacency expert: ") + e.what());
  }
  if (expert.sources_.empty()) throw DataError("adjacency expert artifact has no transitions");
  std::sort(expert.sources_.begin(), expert.sources_.end(),
            [](const Source& a, const Source& b) { return a.query < b.query; });
  expert.build_index();
  return expert;
}

std::string AdjacencyExpert::fingerprint() const { return fingerprint_of(to_json()); }

// ---------------------------------------------------------------------------

void NgramParams::validate() const {
  if (order < 2 || order > 3) throw ConfigError("n-gram order must be 2 or 3");
  if (beam_width < 1 || max_len < 1) throw ConfigError("beam width and max length must be >= 1");
}

nlohmann::json NgramParams::to_json() const {
  return {{"order", order}, {"beam_width", beam_width}, {"max_len", max_len}};
}

void NgramExpert::build_lookup() {
  ids_.clear();
  for (TokenId i = 0; i < vocabulary_.size(); ++i) ids_.emplace(vocabulary_[i], i);
}

NgramExpert::TokenId NgramExpert::lookup(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() || it->second < kFirstWord ? kUnk : it->second;
}

NgramExpert NgramExpert::train(const QueryLog& log, const NgramParams& params) {
  params.validate();
  NgramExpert model;
  model.params_ = params;
  model.vocabulary_ = {"<s>", "</q>", "</s>", "<unk>"};
  model.build_lookup();
  model.histories_.resize(params.order - 1);

  std::size_t queries = 0;
  for (const auto& session : log.sessions) {
    std::vector<TokenId> seq(params.order - 1, kBos);
    for (const auto& q : session.queries) {
      const auto tokens = tokenize_list(q);
      if (tokens.empty()) continue;
      ++queries;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        auto [it, inserted] =
            model.ids_.emplace(tokens[i], static_cast<TokenId>(model.vocabulary_.size()));
        if (inserted) model.vocabulary_.push_back(tokens[i]);
        if (i == 0) ++model.query_starts_[it->second];
        ++model.unigrams_[it->second];
        seq.push_back(it->second);
      }
      seq.push_back(kEoq);
      ++model.unigrams_[kEoq];
    }
    seq.push_back(kEos);
    for (std::size_t pos = params.order - 1; pos < seq.size(); ++pos) {
      for (std::size_t k = 1; k < params.order; ++k) {
        std::vector<TokenId> history(seq.begin() + static_cast<std::ptrdiff_t>(pos - k),
                                     seq.begin() + static_cast<std::ptrdiff_t>(pos));
        ++model.histories_[k - 1][history][seq[pos]];
      }
    }
  }
  if (queries == 0) throw DataError("n-gram expert: log has no queries");
  return model;
}

std::vector<std::pair<NgramExpert::TokenId, double>> NgramExpert::next_distribution(
    const std::vector<TokenId>& history, bool query_start) const {
  auto usable = [query_start](TokenId t) {
    return t != kBos && t != kEos && t != kUnk && !(query_start && t == kEoq);
  };
  auto normalized = [&](const Counts& counts) {
    std::vector<std::pair<TokenId, double>> out;
    double total = 0.0;
    for (const auto& [t, c] : counts) {
      if (usable(t)) total += static_cast<double>(c);
    }
    if (total <= 0.0) return out;
    for (const auto& [t, c] : counts) {
      if (usable(t)) out.emplace_back(t, static_cast<double>(c) / total);
    }
    return out;
  };

  // At a query start the length-1 history is just </q>, which says nothing
  // about the context; use the query-start distribution instead.
  const std::size_t shortest = query_start ? 2 : 1;
  for (std::size_t k = std::min(history.size(), params_.order - 1); k >= shortest && k >= 1; --k) {
    const std::vector<TokenId> suffix(history.end() - static_cast<std::ptrdiff_t>(k), history.end());
    const auto& table = histories_[k - 1];
    if (auto it = table.find(suffix); it != table.end()) {
      auto dist = normalized(it->second);
      if (!dist.empty()) return dist;
    }
  }
  return normalized(query_start ? query_starts_ : unigrams_);
}

std::vector<ExpertRecommendation> NgramExpert::generate(const QueryContext& context,
                                                        const SelectionRule&) const {
  if (!trained()) throw UsageError("n-gram expert used before training");
  const std::size_t n = params_.order;
  const std::size_t width = params_.beam_width;

  // Trailing n-1 tokens of the serialized context.
  std::vector<TokenId> tail;
  for (auto q = context.executed().rbegin(); q != context.executed().rend() && tail.size() < n - 1;
       ++q) {
    const auto tokens = tokenize_list(*q);
    tail.insert(tail.begin(), kEoq);
    for (auto t = tokens.rbegin(); t != tokens.rend() && tail.size() < n - 1; ++t) {
      tail.insert(tail.begin(), lookup(*t));
    }
  }
  while (tail.size() < n - 1) tail.insert(tail.begin(), kBos);
  if (tail.size() > n - 1) tail.erase(tail.begin(), tail.end() - static_cast<std::ptrdiff_t>(n - 1));

  struct Hypothesis {
    std::vector<TokenId> tokens;
    double log_prob = 0.0;
    std::size_t scored = 0;
    bool done = false;
  };
  auto better = [](const Hypothesis& a, const Hypothesis& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
  };

  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;
  while (!live.empty() && finished.size() < width) {
    std::vector<Hypothesis> pool;
    for (const auto& hyp : live) {
      std::vector<TokenId> history = tail;
      history.insert(history.end(), hyp.tokens.begin(), hyp.tokens.end());
      auto dist = next_distribution(history, hyp.tokens.empty());
      std::stable_sort(dist.begin(), dist.end(),
                       [](const auto& a, const auto& b) { return a.second > b.second; });
      if (dist.size() > width) dist.resize(width);
      for (const auto& [token, p] : dist) {
        Hypothesis next = hyp;
        next.log_prob += std::log(p);
        ++next.scored;
        if (token == kEoq) {
          next.done = true;
        } else {
          next.tokens.push_back(token);
          next.done = next.tokens.size() >= params_.max_len;
        }
        pool.push_back(std::move(next));
      }
    }
    std::sort(pool.begin(), pool.end(), better);
    live.clear();
    for (std::size_t i = 0; i < pool.size() && i < width; ++i) {
      (pool[i].done ? finished : live).push_back(std::move(pool[i]));
    }
  }

  std::vector<ExpertRecommendation> out;
  for (const auto& hyp : finished) {
    std::string text;
    for (TokenId t : hyp.tokens) {
      if (!text.empty()) text.push_back(' ');
      text += vocabulary_[t];
    }
    out.push_back({std::move(text), std::exp(hyp.log_prob / static_cast<double>(hyp.scored))});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.query < b.query;
  });
  if (out.size() > width) out.resize(width);
  return out;
}

namespace {

nlohmann::json counts_to_json(const std::map<std::uint32_t, std::uint64_t>& counts) {
  auto out = nlohmann::json::array();
  for (const auto& [t, c] : counts) out.push_back({t, c});
  return out;
}

std::map<std::uint32_t, std::uint64_t> counts_from_json(const nlohmann::json& j) {
  std::map<std::uint32_t, std::uint64_t> out;
  for (const auto& e : j) out[e.at(0).get<std::uint32_t>()] = e.at(1).get<std::uint64_t>();
  return out;
}

}  // namespace

nlohmann::json NgramExpert::to_json() const {
  auto histories = nlohmann::json::array();
  for (const auto& table : histories_) {
    auto entries = nlohmann::json::array();
    for (const auto& [history, counts] : table) entries.push_back({history, counts_to_json(counts)});
    histories.push_back(std::move(entries));
  }
  return {{"params", params_.to_json()},
          {"vocabulary", vocabulary_},
          {"histories", std::move(histories)},
          {"query_starts", counts_to_json(query_starts_)},
          {"unigrams", counts_to_json(unigrams_)}};
}

NgramExpert NgramExpert::from_json(const nlohmann::json& j) {
  NgramExpert model;
  try {
    model.params_.order = j.at("params").at("order").get<std::size_t>();
    model.params_.beam_width = j.at("params").at("beam_width").get<std::size_t>();
    model.params_.max_len = j.at("params").at("max_len").get<std::size_t>();
    model.params_.validate();
    model.vocabulary_ = j.at("vocabulary").get<std::vector<std::string>>();
    if (model.vocabulary_.size() < kFirstWord) throw DataError("n-gram vocabulary is truncated");
    for (const auto& table : j.at("histories")) {
      auto& out = model.histories_.emplace_back();
      for (const auto& e : table) {
        out[e.at(0).get<std::vector<TokenId>>()] = counts_from_json(e.at(1));
      }
    }
    if (model.histories_.size() != model.params_.order - 1) {
      throw DataError("n-gram history tables do not match the order");
    }
    model.query_starts_ = counts_from_json(j.at("query_starts"));
    model.unigrams_ = counts_from_json(j.at("unigrams"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed n-gram expert: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed n-gram expert: ") + e.what());
  }
  model.build_lookup();
  return model;
}

std::string NgramExpert::fingerprint() const { return fingerprint_of(to_json()); }

// ---------------------------------------------------------------------------

UnionResult union_candidates(const ExpertSet& experts, const QueryContext& context,
                             const SelectionRule& rule) {
  if (experts.empty()) throw UsageError("union_candidates needs at least one expert");
  UnionResult result;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& expert : experts) {
    std::vector<ExpertRecommendation> recs;
    try {
      recs = expert->recommend(context, rule);
    } catch (const ExpertError& e) {
      spdlog::warn("expert '{}' failed, contributing no candidates: {}", expert->name(), e.what());
      result.errors.push_back(expert->name() + ": " + e.what());
      continue;
    }
    for (auto& rec : recs) {
      auto [it, inserted] = seen.emplace(rec.query, result.candidates.size());
      if (inserted) {
        result.candidates.push_back(std::move(rec));
      } else {
        auto& kept = result.candidates[it->second];
        kept.score = std::max(kept.score, rec.score);
      }
    }
  }
  std::stable_sort(result.candidates.begin(), result.candidates.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });
  return result;
}

void save_expert(const Expert& expert, const std::filesystem::path& path) {
  nlohmann::json model;
  if (const auto* adjacency = dynamic_cast<const AdjacencyExpert*>(&expert)) {
    model = adjacency->to_json();
  } else if (const auto* ngram = dynamic_cast<const NgramExpert*>(&expert)) {
    model = ngram->to_json();
  } else {
    throw UsageError("expert kind '" + expert.kind() + "' cannot be saved");
  }
  nlohmann::json artifact{{"format", "exp3ss-expert"},
                          {"version", 1},
                          {"kind", expert.kind()},
                          {"fingerprint", fingerprint_of(model)},
                          {"model", std::move(model)}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << artifact.dump() << '\n';
}

ExpertPtr load_expert(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open expert artifact " + path.string());
  nlohmann::json artifact;
  try {
    artifact = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
  if (artifact.value("format", "") != "exp3ss-expert" || artifact.value("version", 0) != 1) {
    throw DataError(path.string() + ": not an expert artifact");
  }
  const std::string kind = artifact.value("kind", "");
  const auto& model = artifact["model"];
  if (fingerprint_of(model) != artifact.value("fingerprint", "")) {
    throw DataError(path.string() + ": fingerprint mismatch");
  }
  if (kind == "adjacency") return std::make_shared<AdjacencyExpert>(AdjacencyExpert::from_json(model));
  if (kind == "ngram") return std::make_shared<NgramExpert>(NgramExpert::from_json(model));
  throw DataError(path.string() + ": unknown expert kind '" + kind + "'");
}

}  // namespace exp3ss
