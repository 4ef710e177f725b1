#pragma once

// Reward and query-similarity metrics used by the simulator.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "exp3ss/text.hpp"

namespace exp3ss {

// ---------------------------------------------------------------------------
// Binary overlap reward
// ---------------------------------------------------------------------------

enum class OverlapCoefficient {
  kDice,       // 2|P∩O| / (|P|+|O|)
  kPrecision,  // |P∩O| / |P|
  kRecall,     // |P∩O| / |O|
};

struct OverlapRewardOptions {
  OverlapCoefficient coefficient = OverlapCoefficient::kDice;
  bool strict = true;     // overlap > threshold (false: >=)
  bool multiset = false;  // count repeated words
  double threshold = 0.5;
};

// Overlap coefficient between the word sets of two queries; 0 if either side
// has no tokens.
double overlap_coefficient(std::string_view predicted, std::string_view observed,
                           const OverlapRewardOptions& options = {});

// 1 when the predicted query shares more than half of its words with the
// observed one (under the configured coefficient), 0 otherwise.
int overlap_reward(std::string_view predicted, std::string_view observed,
                   const OverlapRewardOptions& options = {});

std::string to_string(OverlapCoefficient coefficient);
OverlapCoefficient parse_overlap_coefficient(std::string_view name);

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

class QueryEmbedding {
 public:
  QueryEmbedding() = default;
  explicit QueryEmbedding(std::vector<double> values);

  std::size_t dimension() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double norm() const noexcept { return norm_; }

  QueryEmbedding& operator+=(const QueryEmbedding& other);

 private:
  std::vector<double> values_;
  double norm_ = 0.0;
};

// Stable 64-bit FNV-1a, exposed because embedding buckets depend on it.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

// Word vectors are feature-hashed character n-grams (n in [3, 6]) of the
// word wrapped in '<' and '>'. Each n-gram adds +1 or -1 to one of D buckets.
// A query vector is the sum of its word vectors. Optionally a plain-text
// pretrained vector table replaces the hashed vectors; out-of-vocabulary
// words then contribute zero.
class Embedder {
 public:
  static constexpr std::size_t kDefaultDimension = 128;
  static constexpr std::uint64_t kDefaultSeed = 42;
  static constexpr std::size_t kMinNgram = 3;
  static constexpr std::size_t kMaxNgram = 6;

  explicit Embedder(std::size_t dimension = kDefaultDimension, std::uint64_t seed = kDefaultSeed);

  // Format: optional "COUNT DIM" header, then "word v1 ... vD" per line.
  static Embedder from_vector_file(const std::filesystem::path& path);

  std::size_t dimension() const noexcept { return dimension_; }
  bool pretrained() const noexcept { return pretrained_ != nullptr; }

  QueryEmbedding embed_word(std::string_view word) const;
  QueryEmbedding embed(std::string_view query) const;

 private:
  using Table = std::unordered_map<std::string, std::vector<double>>;

  std::size_t dimension_;
  std::uint64_t seed_;
  std::shared_ptr<const Table> pretrained_;
};

// a·b / (|a||b|), 0 if either vector is zero. Throws UsageError on dimension
// mismatch (as does euclidean_distance).
double cosine_similarity(const QueryEmbedding& a, const QueryEmbedding& b);
double euclidean_distance(const QueryEmbedding& a, const QueryEmbedding& b);

struct ContextSimilarity {
  double mean_cosine = 0.0;
  double mean_distance = 0.0;
};

// Mean cosine and mean distance between the predicted query and each query
// already executed in the session.
ContextSimilarity context_similarity(const QueryEmbedding& predicted,
                                     std::span<const QueryEmbedding> context);
ContextSimilarity context_similarity(std::string_view predicted,
                                     std::span<const std::string> context,
                                     const Embedder& embedder);

}  // namespace exp3ss
