#pragma once

// Session replay: a simulated user walks through a logged session while a
// policy recommends one query per round.

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "exp3ss/bandit.hpp"
#include "exp3ss/datasets.hpp"
#include "exp3ss/experts.hpp"
#include "exp3ss/text_metrics.hpp"

namespace exp3ss {

enum class UserModel {
  kAdvanceOnClick,  // a click puts the recommendation into the context
  kAlwaysAdvance,   // the context always receives the logged query
};

std::string to_string(UserModel model);
UserModel parse_user_model(std::string_view name);

struct Exp3SSPolicy {
  BanditConfig bandit;  // rng_seed is replaced per session
};

// Vanilla EXP3 over the arm set proposed at round 1.
struct Exp3FixedPolicy {
  double eta = 0.1;
  std::size_t arm_cap = 50;
  bool renormalize = true;
};

// Always plays the named expert's best candidate.
struct ExpertTop1Policy {
  std::size_t expert_index = 0;
};

using Policy = std::variant<Exp3SSPolicy, Exp3FixedPolicy, ExpertTop1Policy>;

// exp3ss, exp3-fixed, expert-top1:<i>
std::string policy_label(const Policy& policy);
nlohmann::json to_json(const Policy& policy);

struct SimulationConfig {
  std::size_t rounds = 500;
  std::size_t n_sessions = 100;
  UserModel user_model = UserModel::kAdvanceOnClick;
  std::uint64_t seed = 0;
  OverlapRewardOptions reward;
  bool context_metrics = true;
  std::size_t threads = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------

class UserState {
 public:
  // Throws EnvironmentError for sessions shorter than 2 queries.
  explicit UserState(std::vector<std::string> session);

  const std::vector<std::string>& session() const noexcept { return session_; }
  std::size_t target_index() const noexcept { return target_index_; }
  const std::string& target() const { return session_[target_index_]; }
  const QueryContext& context() const noexcept { return context_; }
  // True once the target sits on the final query and no longer moves.
  bool holding() const noexcept { return holding_; }

 private:
  friend int step_user(UserState&, const std::string&, UserModel, const OverlapRewardOptions&);

  std::vector<std::string> session_;
  std::size_t target_index_ = 1;
  QueryContext context_;
  bool holding_ = false;
};

// Scores the recommendation against the current target, then extends the
// context by one query and advances the target (holding on the last query).
int step_user(UserState& user, const std::string& recommended, UserModel model,
              const OverlapRewardOptions& reward = {});

// ---------------------------------------------------------------------------

struct RegretTrace {
  std::vector<int> reward;                  // r_t
  std::vector<std::int64_t> cumulative_reward;  // G_t
  std::vector<std::int64_t> cumulative_regret;  // R(t) = t - G_t
  std::vector<double> per_round_regret;     // R(t) / t
  std::vector<std::size_t> candidate_size;  // arms available at round t
  std::vector<double> context_cosine;
  std::vector<double> context_distance;
  std::vector<std::string> recommended;
  std::vector<std::string> targets;
  std::vector<std::string> final_candidates;  // every arm in C_T
  std::size_t expert_failures = 0;

  std::size_t rounds() const noexcept { return reward.size(); }
};

// Runs one policy on one session. bandit_seed feeds the policy's generator.
// Throws EnvironmentError if the first round has no candidates.
RegretTrace run_session(const Session& session, const Policy& policy, const ExpertSet& experts,
                        const SimulationConfig& config, std::uint64_t bandit_seed,
                        const Embedder& embedder = Embedder());

// G*_T: best cumulative reward of a single fixed arm against the targets.
std::int64_t hindsight_best(const std::vector<std::string>& arms,
                            const std::vector<std::string>& targets,
                            const OverlapRewardOptions& reward = {});
std::int64_t hindsight_best(const RegretTrace& trace, const OverlapRewardOptions& reward = {});

struct CandidateGrowth {
  std::vector<double> mean;
  std::vector<std::size_t> min;
  std::vector<std::size_t> max;
  std::vector<double> mean_increase;  // mean of |C_t| - |C_{t-1}|
};

CandidateGrowth candidate_growth_stats(const std::vector<RegretTrace>& traces);

struct PolicySummary {
  std::string label;
  std::vector<double> mean_per_round_regret;
  std::vector<double> se_per_round_regret;
  std::vector<double> mean_cumulative_regret;
  std::vector<double> se_cumulative_regret;
  std::vector<double> mean_instantaneous_regret;
  std::vector<double> mean_context_cosine;
  std::vector<double> mean_context_distance;
  CandidateGrowth growth;
  double mean_hindsight_best = 0.0;
  std::size_t expert_failures = 0;
  std::vector<RegretTrace> traces;  // in session order
};

struct ExperimentResult {
  std::vector<std::size_t> session_indices;  // into the log, sampling order
  std::vector<std::string> session_ids;
  std::vector<PolicySummary> policies;
};

// Indices of n sessions drawn without replacement. Throws DataError when the
// log is too small.
std::vector<std::size_t> sample_sessions(const QueryLog& log, std::size_t n, std::uint64_t seed);

// Seed for the policy generator of the j-th sampled session; shared by all
// policies so comparisons are paired.
std::uint64_t session_seed(std::uint64_t seed, std::size_t j);

ExperimentResult run_experiment(const QueryLog& log, const std::vector<Policy>& policies,
                                const ExpertSet& experts, const SimulationConfig& config,
                                const Embedder& embedder = Embedder());

// Mean and standard error (sample sd / sqrt(n), 0 for n = 1).
struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};
MeanSe mean_se(const std::vector<double>& values);

}  // namespace exp3ss
