#pragma once

// Experts map a query context to scored next-query candidates.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "exp3ss/bandit.hpp"
#include "exp3ss/datasets.hpp"

namespace exp3ss {

struct ExpertRecommendation {
  std::string query;  // normalized
  double score = 0.0; // in [0, 1]

  friend bool operator==(const ExpertRecommendation&, const ExpertRecommendation&) = default;
};

// All queries executed so far in a session; current() is q_t.
class QueryContext {
 public:
  explicit QueryContext(std::vector<std::string> executed);

  const std::vector<std::string>& executed() const noexcept { return executed_; }
  const std::string& current() const noexcept { return executed_.back(); }
  std::size_t size() const noexcept { return executed_.size(); }
  void push(std::string query);

 private:
  std::vector<std::string> executed_;
};

class Expert {
 public:
  virtual ~Expert() = default;

  virtual std::string kind() const = 0;
  virtual std::string name() const { return kind(); }
  // Stable content hash of the trained model.
  virtual std::string fingerprint() const = 0;

  // Sorted by descending score, deduplicated, then truncated to the top k or
  // filtered to score >= epsilon.
  std::vector<ExpertRecommendation> recommend(const QueryContext& context,
                                              const SelectionRule& rule) const;

 protected:
  // Raw scored candidates; the rule is passed so generators can size their
  // search, but recommend() applies it.
  virtual std::vector<ExpertRecommendation> generate(const QueryContext& context,
                                                     const SelectionRule& rule) const = 0;
};

using ExpertPtr = std::shared_ptr<const Expert>;
using ExpertSet = std::vector<ExpertPtr>;

// ---------------------------------------------------------------------------

// Test and fixture expert: a fixed list, or any pure function of the context.
class ScriptedExpert final : public Expert {
 public:
  using Script = std::function<std::vector<ExpertRecommendation>(const QueryContext&)>;

  ScriptedExpert(std::string name, std::vector<ExpertRecommendation> fixed);
  ScriptedExpert(std::string name, Script script);

  std::string kind() const override { return "scripted"; }
  std::string name() const override { return name_; }
  std::string fingerprint() const override;

 protected:
  std::vector<ExpertRecommendation> generate(const QueryContext& context,
                                             const SelectionRule& rule) const override;

 private:
  std::string name_;
  Script script_;
};

// ---------------------------------------------------------------------------

struct AdjacencyParams {
  double alpha = 0.1;       // additive smoothing of successor counts
  std::size_t n_sim = 5;    // training queries matched against q_t

  nlohmann::json to_json() const;
};

// Successor table over consecutive query pairs. At query time the n_sim
// training queries with the highest token Jaccard to q_t vote for their
// successors: score(q') = max_q J(q_t, q) (c(q->q') + α) / Σ_q'' (c(q->q'') + α),
// rescaled so the best candidate scores 1.
class AdjacencyExpert final : public Expert {
 public:
  AdjacencyExpert() = default;  // untrained; recommend() throws UsageError

  // Throws DataError if the log has no consecutive query pair.
  static AdjacencyExpert train(const QueryLog& log, const AdjacencyParams& params = {});

  std::string kind() const override { return "adjacency"; }
  std::string fingerprint() const override;
  bool trained() const noexcept { return !sources_.empty(); }
  const AdjacencyParams& params() const noexcept { return params_; }

  nlohmann::json to_json() const;
  static AdjacencyExpert from_json(const nlohmann::json& j);

 protected:
  std::vector<ExpertRecommendation> generate(const QueryContext& context,
                                             const SelectionRule& rule) const override;

 private:
  struct Source {
    std::string query;
    std::vector<std::string> tokens;  // sorted, unique
    std::vector<std::pair<std::string, std::uint64_t>> successors;  // sorted by text
  };

  void build_index();

  AdjacencyParams params_;
  std::vector<Source> sources_;  // sorted by query text
  std::map<std::string, std::vector<std::size_t>> postings_;
};

// ---------------------------------------------------------------------------

struct NgramParams {
  std::size_t order = 3;       // n in {2, 3}
  std::size_t beam_width = 5;
  std::size_t max_len = 8;     // tokens per generated query

  void validate() const;
  nlohmann::json to_json() const;
};

// Token n-gram model over sessions serialized as
//   <s>^(n-1) q1 </q> q2 </q> ... qm </q> </s>
// Maximum-likelihood estimates with backoff to shorter histories. With no
// usable history at a query start the model falls back to the corpus-wide
// distribution of query-initial tokens, and mid-query to unigrams. Generation
// is a beam search from the context's trailing n-1 tokens until </q> or
// max_len tokens; score = exp(mean token log-probability).
class NgramExpert final : public Expert {
 public:
  NgramExpert() = default;

  // Throws DataError on an empty log, ConfigError on bad params.
  static NgramExpert train(const QueryLog& log, const NgramParams& params = {});

  std::string kind() const override { return "ngram"; }
  std::string fingerprint() const override;
  bool trained() const noexcept { return !vocabulary_.empty(); }
  const NgramParams& params() const noexcept { return params_; }

  nlohmann::json to_json() const;
  static NgramExpert from_json(const nlohmann::json& j);

 protected:
  std::vector<ExpertRecommendation> generate(const QueryContext& context,
                                             const SelectionRule& rule) const override;

 private:
  using TokenId = std::uint32_t;
  using Counts = std::map<TokenId, std::uint64_t>;

  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEoq = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kFirstWord = 4;

  TokenId lookup(const std::string& token) const;
  void build_lookup();
  // Next-token distribution (normalized, specials other than </q> removed).
  std::vector<std::pair<TokenId, double>> next_distribution(const std::vector<TokenId>& history,
                                                            bool query_start) const;

  NgramParams params_;
  std::vector<std::string> vocabulary_;  // index = TokenId
  std::map<std::string, TokenId> ids_;
  // histories_[k] maps a history of length k + 1 to successor counts.
  std::vector<std::map<std::vector<TokenId>, Counts>> histories_;
  Counts query_starts_;
  Counts unigrams_;
};

// ---------------------------------------------------------------------------

struct UnionResult {
  std::vector<ExpertRecommendation> candidates;
  std::vector<std::string> errors;  // one entry per expert that failed
};

// C^t: union of every expert's recommendations, deduplicated by query text
// keeping the highest score, ordered by descending score then first
// appearance. ExpertError from one expert is logged and that expert
// contributes nothing.
UnionResult union_candidates(const ExpertSet& experts, const QueryContext& context,
                             const SelectionRule& rule);

// Versioned JSON artifact with an embedded fingerprint. Only trainable kinds
// (adjacency, ngram) can be saved.
void save_expert(const Expert& expert, const std::filesystem::path& path);
ExpertPtr load_expert(const std::filesystem::path& path);

std::string hex64(std::uint64_t value);

}  // namespace exp3ss
