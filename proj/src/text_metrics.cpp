#include "exp3ss/text_metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "exp3ss/errors.hpp"
#include "exp3ss/rng.hpp"

namespace exp3ss {

namespace {

std::map<std::string, std::size_t> count_tokens(std::string_view text) {
  std::map<std::string, std::size_t> counts;
  for (auto& token : tokenize_list(text)) ++counts[std::move(token)];
  return counts;
}

}  // namespace

double overlap_coefficient(std::string_view predicted, std::string_view observed,
                           const OverlapRewardOptions& options) {
  std::size_t predicted_size = 0;
  std::size_t observed_size = 0;
  std::size_t shared = 0;
  if (options.multiset) {
    const auto p = count_tokens(predicted);
    const auto o = count_tokens(observed);
    for (const auto& [token, n] : p) {
      predicted_size += n;
      if (auto it = o.find(token); it != o.end()) shared += std::min(n, it->second);
    }
    for (const auto& [token, n] : o) observed_size += n;
  } else {
    const auto p = tokenize(predicted);
    const auto o = tokenize(observed);
    predicted_size = p.size();
    observed_size = o.size();
    for (const auto& token : p) shared += o.count(token);
  }
  if (predicted_size == 0 || observed_size == 0) return 0.0;

  switch (options.coefficient) {
    case OverlapCoefficient::kDice:
      return 2.0 * static_cast<double>(shared) /
             static_cast<double>(predicted_size + observed_size);
    case OverlapCoefficient::kPrecision:
      return static_cast<double>(shared) / static_cast<double>(predicted_size);
    case OverlapCoefficient::kRecall:
      return static_cast<double>(shared) / static_cast<double>(observed_size);
  }
  return 0.0;
}

int overlap_reward(std::string_view predicted, std::string_view observed,
                   const OverlapRewardOptions& options) {
  const double overlap = overlap_coefficient(predicted, observed, options);
  if (overlap == 0.0) return 0;
  return (options.strict ? overlap > options.threshold : overlap >= options.threshold) ? 1 : 0;
}

std::string to_string(OverlapCoefficient coefficient) {
  switch (coefficient) {
    case OverlapCoefficient::kDice:
      return "dice";
    case OverlapCoefficient::kPrecision:
      return "precision";
    case OverlapCoefficient::kRecall:
      return "recall";
  }
  return "dice";
}

OverlapCoefficient parse_overlap_coefficient(std::string_view name) {
  if (name == "dice") return OverlapCoefficient::kDice;
  if (name == "precision") return OverlapCoefficient::kPrecision;
  if (name == "recall") return OverlapCoefficient::kRecall;
  throw ConfigError("unknown overlap coefficient '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

QueryEmbedding::QueryEmbedding(std::vector<double> values) : values_(std::move(values)) {
  double sq = 0.0;
  for (double v : values_) sq += v * v;
  norm_ = std::sqrt(sq);
}

QueryEmbedding& QueryEmbedding::operator+=(const QueryEmbedding& other) {
  if (values_.empty()) {
    *this = other;
    return *this;
  }
  if (other.dimension() != dimension()) throw UsageError("embedding dimension mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    values_[i] += other.values_[i];
    sq += values_[i] * values_[i];
  }
  norm_ = std::sqrt(sq);
  return *this;
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

Embedder::Embedder(std::size_t dimension, std::uint64_t seed) : dimension_(dimension), seed_(seed) {
  if (dimension_ < 8) throw ConfigError("embedding dimension must be at least 8");
}

Embedder Embedder::from_vector_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vector file " + path.string());
  const std::string source = path.string();

  auto table = std::make_shared<Table>();
  std::size_t dimension = 0;
  std::size_t declared_count = 0;
  bool has_header = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream fields(line);
    std::vector<std::string> parts;
    for (std::string part; fields >> part;) parts.push_back(std::move(part));

    if (line_no == 1 && parts.size() == 2) {
      std::size_t count = 0;
      std::size_t dim = 0;
      auto parse = [](const std::string& s, std::size_t& out) {
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        return ec == std::errc() && p == s.data() + s.size();
      };
      if (parse(parts[0], count) && parse(parts[1], dim)) {
        if (dim < 8) throw DataError(source, line_no, "header dimension must be at least 8");
        has_header = true;
        declared_count = count;
        dimension = dim;
        continue;
      }
    }

    if (parts.size() < 2) throw DataError(source, line_no, "expected a word followed by values");
    const std::size_t dim = parts.size() - 1;
    if (dimension == 0) dimension = dim;
    if (dim != dimension) {
      throw DataError(source, line_no,
                      "expected " + std::to_string(dimension) + " values, found " +
                          std::to_string(dim));
    }
    std::vector<double> values(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      const std::string& s = parts[i + 1];
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), values[i]);
      if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(values[i])) {
        throw DataError(source, line_no, "malformed value '" + s + "'");
      }
    }
    auto word = normalize_query(parts[0]);
    if (word.empty()) continue;
    (*table)[std::move(word)] = std::move(values);
  }
  if (table->empty()) throw DataError(source, line_no, "no vectors found");
  if (has_header && declared_count != table->size()) {
    throw DataError(source, 1,
                    "header declares " + std::to_string(declared_count) + " vectors, found " +
                        std::to_string(table->size()));
  }
  if (dimension < 8) throw DataError(source, 1, "vector dimension must be at least 8");

  Embedder embedder(dimension, kDefaultSeed);
  embedder.pretrained_ = std::move(table);
  return embedder;
}

QueryEmbedding Embedder::embed_word(std::string_view word) const {
  std::vector<double> values(dimension_, 0.0);
  if (pretrained_) {
    if (auto it = pretrained_->find(std::string(word)); it != pretrained_->end()) {
      values = it->second;
    }
    return QueryEmbedding(std::move(values));
  }
  const std::string wrapped = "<" + std::string(word) + ">";
  for (std::size_t n = kMinNgram; n <= kMaxNgram && n <= wrapped.size(); ++n) {
    for (std::size_t start = 0; start + n <= wrapped.size(); ++start) {
      const std::uint64_t h = splitmix64(fnv1a64(std::string_view(wrapped).substr(start, n)) ^ seed_);
      values[h % dimension_] += (h >> 63) ? -1.0 : 1.0;
    }
  }
  return QueryEmbedding(std::move(values));
}

QueryEmbedding Embedder::embed(std::string_view query) const {
  QueryEmbedding sum(std::vector<double>(dimension_, 0.0));
  for (const auto& word : tokenize_list(query)) sum += embed_word(word);
  return sum;
}

double cosine_similarity(const QueryEmbedding& a, const QueryEmbedding& b) {
  if (a.dimension() != b.dimension()) throw UsageError("embedding dimension mismatch");
  if (a.norm() == 0.0 || b.norm() == 0.0) return 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < a.dimension(); ++i) dot += a.values()[i] * b.values()[i];
  return std::clamp(dot / (a.norm() * b.norm()), -1.0, 1.0);
}

double euclidean_distance(const QueryEmbedding& a, const QueryEmbedding& b) {
  if (a.dimension() != b.dimension()) throw UsageError("embedding dimension mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.dimension(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

ContextSimilarity context_similarity(const QueryEmbedding& predicted,
                                     std::span<const QueryEmbedding> context) {
  if (context.empty()) return {};
  ContextSimilarity out;
  for (const auto& q : context) {
    out.mean_cosine += cosine_similarity(predicted, q);
    out.mean_distance += euclidean_distance(predicted, q);
  }
  out.mean_cosine /= static_cast<double>(context.size());
  out.mean_distance /= static_cast<double>(context.size());
  return out;
}

ContextSimilarity context_similarity(std::string_view predicted,
                                     std::span<const std::string> context,
                                     const Embedder& embedder) {
  std::vector<QueryEmbedding> embedded;
  embedded.reserve(context.size());
  for (const auto& q : context) embedded.push_back(embedder.embed(q));
  return context_similarity(embedder.embed(predicted), embedded);
}

}  // namespace exp3ss
