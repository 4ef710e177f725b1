#pragma once

// Experiment specs and the exp3ss command-line front end.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "exp3ss/datasets.hpp"
#include "exp3ss/experts.hpp"
#include "exp3ss/simulator.hpp"
#include "exp3ss/text_metrics.hpp"

namespace exp3ss {

// One expert, given either as a trained artifact or as a kind trained on
// the spec's training log.
struct ExpertSpec {
  std::string kind;  // adjacency | ngram | artifact | external
  std::string path;  // artifact
  nlohmann::json params = nlohmann::json::object();

  // "adjacency", "ngram", "external:<command line>", or an artifact path.
  static ExpertSpec parse(const std::string& text);
  static ExpertSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct ExperimentSpec {
  std::optional<std::string> log;
  std::optional<SyntheticConfig> synthetic;
  std::optional<double> eval_fraction;  // split into expert-training / replay
  std::uint64_t split_seed = 0;
  std::vector<ExpertSpec> experts;
  std::vector<std::string> policies{"exp3ss"};
  std::size_t rounds = 500;
  std::size_t sessions = 100;
  std::size_t k = 3;
  std::optional<double> epsilon;  // switches the rule to a score threshold
  double eta = 0.1;
  bool eta_theoretical = false;
  std::optional<std::int64_t> eta_candidate_cap;
  std::string user_model = "advance-on-click";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t arm_cap = 50;
  bool renormalize = true;
  OverlapRewardOptions reward;
  std::size_t embedding_dimension = Embedder::kDefaultDimension;
  std::uint64_t embedding_seed = Embedder::kDefaultSeed;
  std::optional<std::string> embedding_vectors;
  bool context_metrics = true;
  std::string out = "out";

  // Unknown keys and wrongly typed values are ConfigErrors. A meta.json
  // sidecar is accepted too (its "spec" member is used).
  static ExperimentSpec from_json(const nlohmann::json& j);
  static ExperimentSpec load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  void validate() const;
  SelectionRule selection_rule() const;
  double effective_eta() const;
  SimulationConfig simulation_config() const;
  std::vector<Policy> policy_list() const;
};

// Log, experts and embedder materialized from a spec.
struct PreparedExperiment {
  QueryLog replay_log;
  ExpertSet experts;
  std::shared_ptr<const Embedder> embedder;
};

PreparedExperiment prepare_experiment(const ExperimentSpec& spec);

inline constexpr const char* kRegretHeader =
    "round,policy,mean_per_round_regret,se_per_round_regret,mean_cumulative_regret,"
    "mean_instantaneous_regret,mean_candidate_size,min_candidate_size,max_candidate_size,"
    "mean_context_cosine,mean_context_distance";

inline constexpr const char* kCandidatesHeader =
    "round,policy,mean_candidate_size,min_candidate_size,max_candidate_size,mean_candidate_increase";

// Shortest decimal text that parses back to the same double.
std::string format_number(double value);

// Rows only; prefix (for example "3,") is prepended to every row.
void write_regret_rows(std::ostream& out, const ExperimentResult& result, const std::string& prefix = "");
void write_candidate_rows(std::ostream& out, const ExperimentResult& result);

nlohmann::json experiment_meta(const ExperimentSpec& spec, const PreparedExperiment& prepared,
                               const ExperimentResult& result);

// Full command line (args[0] is the program name). Returns the exit status:
// 0 success, 2 usage or configuration error, 3 data or runtime error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace exp3ss
