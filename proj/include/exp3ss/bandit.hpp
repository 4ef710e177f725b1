#pragma once

// EXP3-SS: exponential-weights bandit whose arm set grows every round from
// the union of the experts' proposals, plus vanilla EXP3 over a fixed arm set.
//
// Per round the caller must run, in order:
//   ingest_candidates -> compute_probabilities -> select_arm -> update
//
// Weights are kept as natural logarithms. p_{i,t} and the new-arm rule only
// depend on weight ratios, so the per-round renormalization (log-sum-exp
// shifted to zero) never changes what is sampled, and a single update with
// exponent up to |C_t| cannot overflow.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "exp3ss/rng.hpp"

namespace exp3ss {

struct ArmId {
  std::uint32_t value = 0;
  friend auto operator<=>(const ArmId&, const ArmId&) = default;
};

struct ArmIdHash {
  std::size_t operator()(ArmId id) const noexcept { return std::hash<std::uint32_t>{}(id.value); }
};

// Bijection between normalized query text and ArmId for one session run.
class ArmRegistry {
 public:
  ArmId intern(std::string_view normalized_text);
  std::optional<ArmId> find(std::string_view normalized_text) const;
  const std::string& text(ArmId id) const;
  std::size_t size() const noexcept { return texts_.size(); }

 private:
  std::vector<std::string> texts_;
  std::unordered_map<std::string, ArmId> ids_;
};

struct TopK {
  std::size_t k = 3;
};

struct ScoreThreshold {
  double epsilon = 0.5;
};

using SelectionRule = std::variant<TopK, ScoreThreshold>;

void validate(const SelectionRule& rule);
std::string to_string(const SelectionRule& rule);

struct BanditConfig {
  double eta = 0.1;
  SelectionRule selection_rule = TopK{3};
  std::uint64_t rng_seed = 0;
  // Rescale weights to sum to one after every update.
  bool renormalize = true;

  // Throws ConfigError.
  void validate() const;
};

struct StepOutcome {
  ArmId chosen;
  double probability = 1.0;
  double reward = 0.0;
  double pseudo_reward = 0.0;
};

// Largest value theoretical_eta() returns.
inline constexpr double kMaxEta = 0.999;

// 1 / sqrt(T * |C_T|), clamped into (0, kMaxEta]. Throws ConfigError unless
// both arguments are positive.
double theoretical_eta(std::int64_t horizon, std::int64_t candidate_cap);

class Exp3SS {
 public:
  // Starts a session: round 0, no candidates. Throws ConfigError.
  explicit Exp3SS(const BanditConfig& config);

  const BanditConfig& config() const noexcept { return config_; }
  std::size_t round() const noexcept { return round_; }

  ArmId intern(std::string_view normalized_text) { return registry_.intern(normalized_text); }
  const ArmRegistry& registry() const noexcept { return registry_; }
  const std::string& text(ArmId id) const { return registry_.text(id); }

  // Starts round t: C_t = proposals ∪ C_{t-1}. Carried arms keep ŵ; each
  // new arm receives η/(1-η) · Σ_{C_{t-1}} ŵ / |C_t \ C_{t-1}|. At t = 1
  // every arm starts at η / ((1-η)|C_1|). Throws EnvironmentError when the
  // first round has no proposals.
  void ingest_candidates(std::span<const ArmId> proposals);

  // p_{i,t} = (1-η) w_{i,t} / W_t + η / |C_t|, in candidate order.
  std::span<const double> compute_probabilities();

  ArmId select_arm();

  // Outcome the update would apply, without touching the weights.
  StepOutcome preview(ArmId chosen, double reward) const;

  // ŵ_{i,t+1} = w_{i,t} exp(η r̂_{i,t}). Reward is clipped to [0, 1]. Throws
  // UsageError if the arm is not a candidate this round.
  StepOutcome update(ArmId chosen, double reward);

  std::span<const ArmId> candidates() const noexcept { return candidates_; }
  bool contains(ArmId id) const { return index_.count(id) > 0; }
  std::size_t new_arms_last_round() const noexcept { return new_last_round_; }

  // Linear weights in candidate order: w_{i,t} (current round) and ŵ (after
  // the last update).
  std::vector<double> weights() const;
  std::vector<double> carried_weights() const;
  std::span<const double> log_weights() const noexcept { return log_weight_; }

  // Multiplies every weight by factor. Sampling is unaffected.
  void rescale(double factor);

  nlohmann::json to_json() const;
  static Exp3SS from_json(const nlohmann::json& j);

 private:
  enum class Phase { kAwaitingCandidates, kIngested, kProbabilitiesReady };

  std::size_t position(ArmId id) const;
  void require_round_open(const char* what) const;

  BanditConfig config_;
  ArmRegistry registry_;
  Engine engine_;
  Phase phase_ = Phase::kAwaitingCandidates;
  std::size_t round_ = 0;
  std::vector<ArmId> candidates_;
  std::unordered_map<ArmId, std::size_t, ArmIdHash> index_;
  std::vector<double> log_weight_;   // w_{i,t}
  std::vector<double> log_carried_;  // ŵ_{i,t+1}
  std::vector<double> probabilities_;
  std::size_t new_last_round_ = 0;
};

// Vanilla EXP3 with uniform initial weights over a fixed arm set, using the
// same probability and update rules as Exp3SS.
class Exp3 {
 public:
  Exp3(std::vector<ArmId> arms, double eta, std::uint64_t rng_seed, bool renormalize = true);

  std::span<const ArmId> arms() const noexcept { return arms_; }
  std::span<const double> compute_probabilities();
  ArmId select_arm();
  StepOutcome update(ArmId chosen, double reward);

 private:
  std::vector<ArmId> arms_;
  std::unordered_map<ArmId, std::size_t, ArmIdHash> index_;
  double eta_;
  bool renormalize_;
  Engine engine_;
  std::vector<double> log_weight_;
  std::vector<double> probabilities_;
};

// Reward for the played arm at the given 1-based round.
using RewardFeed = std::function<double(std::size_t round, ArmId played)>;

// Runs vanilla EXP3 for horizon rounds and returns one outcome per round.
// Throws EnvironmentError on an empty arm set and ConfigError on a bad eta.
std::vector<StepOutcome> run_exp3_fixed(std::span<const ArmId> arms, double eta,
                                        const RewardFeed& reward_feed, std::size_t horizon,
                                        std::uint64_t rng_seed);

// Decimal text with 17 significant digits; parses back to the same double.
std::string format_exact(double value);
double parse_exact(const std::string& text);

}  // namespace exp3ss
