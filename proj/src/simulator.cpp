#include "exp3ss/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <set>
#include <thread>

#include "exp3ss/errors.hpp"
#include "exp3ss/rng.hpp"

namespace exp3ss {

std::string to_string(UserModel model) {
  return model == UserModel::kAdvanceOnClick ? "advance-on-click" : "always-advance";
}

UserModel parse_user_model(std::string_view name) {
  if (name == "advance-on-click") return UserModel::kAdvanceOnClick;
  if (name == "always-advance") return UserModel::kAlwaysAdvance;
  throw ConfigError("unknown user model '" + std::string(name) +
                    "' (expected advance-on-click or always-advance)");
}

std::string policy_label(const Policy& policy) {
  struct {
    std::string operator()(const Exp3SSPolicy&) const { return "exp3ss"; }
    std::string operator()(const Exp3FixedPolicy&) const { return "exp3-fixed"; }
    std::string operator()(const ExpertTop1Policy& p) const {
      return "expert-top1:" + std::to_string(p.expert_index);
    }
  } visitor;
  return std::visit(visitor, policy);
}

nlohmann::json to_json(const Policy& policy) {
  nlohmann::json j{{"policy", policy_label(policy)}};
  if (const auto* p = std::get_if<Exp3SSPolicy>(&policy)) {
    j["eta"] = p->bandit.eta;
    j["selection_rule"] = to_string(p->bandit.selection_rule);
    j["renormalize"] = p->bandit.renormalize;
  } else if (const auto* f = std::get_if<Exp3FixedPolicy>(&policy)) {
    j["eta"] = f->eta;
    j["arm_cap"] = f->arm_cap;
    j["renormalize"] = f->renormalize;
  } else {
    j["expert_index"] = std::get<ExpertTop1Policy>(policy).expert_index;
  }
  return j;
}

void SimulationConfig::validate() const {
  if (rounds < 1) throw ConfigError("rounds must be at least 1");
  if (n_sessions < 1) throw ConfigError("n_sessions must be at least 1");
  if (!(reward.threshold >= 0.0 && reward.threshold <= 1.0)) {
    throw ConfigError("reward threshold must lie in [0, 1]");
  }
}

nlohmann::json SimulationConfig::to_json() const {
  return {{"rounds", rounds},
          {"n_sessions", n_sessions},
          {"user_model", to_string(user_model)},
          {"seed", seed},
          {"reward",
           {{"coefficient", to_string(reward.coefficient)},
            {"strict", reward.strict},
            {"multiset", reward.multiset},
            {"threshold", reward.threshold}}},
          {"context_metrics", context_metrics}};
}

// ---------------------------------------------------------------------------

namespace {

QueryContext first_query_context(const std::vector<std::string>& session) {
  if (session.size() < 2) {
    throw EnvironmentError("session needs at least 2 queries, got " + std::to_string(session.size()));
  }
  return QueryContext({session.front()});
}

}  // namespace

UserState::UserState(std::vector<std::string> session)
    : session_(std::move(session)), context_(first_query_context(session_)) {}

int step_user(UserState& user, const std::string& recommended, UserModel model,
              const OverlapRewardOptions& reward) {
  const int r = overlap_reward(recommended, user.target(), reward);
  if (model == UserModel::kAdvanceOnClick && r == 1) {
    user.context_.push(recommended);
  } else {
    user.context_.push(user.target());
  }
  if (user.target_index_ + 1 < user.session_.size()) {
    ++user.target_index_;
  } else {
    user.holding_ = true;
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

class Runner {
 public:
  Runner(const Session& session, const ExpertSet& experts, const SimulationConfig& config,
         const Embedder& embedder)
      : user_(session.queries), experts_(experts), config_(config), embedder_(embedder) {
    if (experts_.empty()) throw UsageError("simulation needs at least one expert");
    if (config_.context_metrics) context_embeddings_.push_back(embedder_.embed(user_.context().current()));
    trace_.reward.reserve(config_.rounds);
  }

  const QueryContext& context() const { return user_.context(); }

  std::vector<ExpertRecommendation> propose(const SelectionRule& rule) {
    auto result = union_candidates(experts_, user_.context(), rule);
    trace_.expert_failures += result.errors.size();
    return std::move(result.candidates);
  }

  std::vector<ExpertRecommendation> propose_single(std::size_t index, const SelectionRule& rule) {
    try {
      return experts_[index]->recommend(user_.context(), rule);
    } catch (const ExpertError&) {
      ++trace_.expert_failures;
      return {};
    }
  }

  // Records the round and moves the user; returns r_t.
  int play(const std::string& recommended, std::size_t candidate_size) {
    const std::size_t t = trace_.reward.size() + 1;
    trace_.targets.push_back(user_.target());
    trace_.recommended.push_back(recommended);
    trace_.candidate_size.push_back(candidate_size);
    if (config_.context_metrics) {
      const auto s = context_similarity(embedder_.embed(recommended), context_embeddings_);
      trace_.context_cosine.push_back(s.mean_cosine);
      trace_.context_distance.push_back(s.mean_distance);
    }
    const int r = step_user(user_, recommended, config_.user_model, config_.reward);
    if (config_.context_metrics) context_embeddings_.push_back(embedder_.embed(user_.context().current()));
    const std::int64_t g = (trace_.cumulative_reward.empty() ? 0 : trace_.cumulative_reward.back()) + r;
    const auto regret = static_cast<std::int64_t>(t) - g;
    trace_.reward.push_back(r);
    trace_.cumulative_reward.push_back(g);
    trace_.cumulative_regret.push_back(regret);
    trace_.per_round_regret.push_back(static_cast<double>(regret) / static_cast<double>(t));
    return r;
  }

  RegretTrace finish(std::vector<std::string> final_candidates) {
    trace_.final_candidates = std::move(final_candidates);
    return std::move(trace_);
  }

 private:
  UserState user_;
  const ExpertSet& experts_;
  const SimulationConfig& config_;
  const Embedder& embedder_;
  std::vector<QueryEmbedding> context_embeddings_;
  RegretTrace trace_;
};

RegretTrace run_exp3ss(Runner& runner, const Exp3SSPolicy& policy, const SimulationConfig& config,
                       std::uint64_t seed) {
  BanditConfig bandit_config = policy.bandit;
  bandit_config.rng_seed = seed;
  Exp3SS bandit(bandit_config);
  std::vector<ArmId> proposals;
  for (std::size_t t = 1; t <= config.rounds; ++t) {
    proposals.clear();
    for (const auto& rec : runner.propose(bandit_config.selection_rule)) {
      proposals.push_back(bandit.intern(rec.query));
    }
    bandit.ingest_candidates(proposals);
    bandit.compute_probabilities();
    const ArmId chosen = bandit.select_arm();
    const int r = runner.play(bandit.text(chosen), bandit.candidates().size());
    bandit.update(chosen, r);
  }
  std::vector<std::string> arms;
  for (ArmId id : bandit.candidates()) arms.push_back(bandit.text(id));
  return runner.finish(std::move(arms));
}

RegretTrace run_exp3_fixed_policy(Runner& runner, const Exp3FixedPolicy& policy,
                                  const SimulationConfig& config, std::uint64_t seed) {
  if (policy.arm_cap < 1) throw ConfigError("exp3-fixed arm_cap must be at least 1");
  auto proposals = runner.propose(TopK{policy.arm_cap});
  if (proposals.size() > policy.arm_cap) proposals.resize(policy.arm_cap);
  if (proposals.empty()) throw EnvironmentError("experts proposed no candidates in round 1");
  ArmRegistry registry;
  std::vector<ArmId> arms;
  for (const auto& rec : proposals) arms.push_back(registry.intern(rec.query));
  Exp3 bandit(arms, policy.eta, seed, policy.renormalize);
  for (std::size_t t = 1; t <= config.rounds; ++t) {
    bandit.compute_probabilities();
    const ArmId chosen = bandit.select_arm();
    const int r = runner.play(registry.text(chosen), arms.size());
    bandit.update(chosen, r);
  }
  std::vector<std::string> texts;
  for (ArmId id : arms) texts.push_back(registry.text(id));
  return runner.finish(std::move(texts));
}

RegretTrace run_top1(Runner& runner, const ExpertTop1Policy& policy, std::size_t n_experts,
                     const SimulationConfig& config) {
  if (policy.expert_index >= n_experts) {
    throw ConfigError("expert-top1 index " + std::to_string(policy.expert_index) + " but only " +
                      std::to_string(n_experts) + " experts");
  }
  std::vector<std::string> played;
  std::set<std::string> seen;
  for (std::size_t t = 1; t <= config.rounds; ++t) {
    const auto recs = runner.propose_single(policy.expert_index, TopK{1});
    // Nothing to recommend scores as a miss.
    const std::string query = recs.empty() ? std::string() : recs.front().query;
    runner.play(query, recs.size());
    if (!query.empty() && seen.insert(query).second) played.push_back(query);
  }
  return runner.finish(std::move(played));
}

}  // namespace

RegretTrace run_session(const Session& session, const Policy& policy, const ExpertSet& experts,
                        const SimulationConfig& config, std::uint64_t bandit_seed,
                        const Embedder& embedder) {
  config.validate();
  Runner runner(session, experts, config, embedder);
  if (const auto* p = std::get_if<Exp3SSPolicy>(&policy)) {
    return run_exp3ss(runner, *p, config, bandit_seed);
  }
  if (const auto* f = std::get_if<Exp3FixedPolicy>(&policy)) {
    return run_exp3_fixed_policy(runner, *f, config, bandit_seed);
  }
  return run_top1(runner, std::get<ExpertTop1Policy>(policy), experts.size(), config);
}

std::int64_t hindsight_best(const std::vector<std::string>& arms,
                            const std::vector<std::string>& targets,
                            const OverlapRewardOptions& reward) {
  std::int64_t best = 0;
  for (const auto& arm : arms) {
    std::int64_t total = 0;
    for (const auto& target : targets) total += overlap_reward(arm, target, reward);
    best = std::max(best, total);
  }
  return best;
}

std::int64_t hindsight_best(const RegretTrace& trace, const OverlapRewardOptions& reward) {
  return hindsight_best(trace.final_candidates, trace.targets, reward);
}

CandidateGrowth candidate_growth_stats(const std::vector<RegretTrace>& traces) {
  CandidateGrowth g;
  if (traces.empty()) return g;
  const std::size_t rounds = traces.front().rounds();
  for (const auto& tr : traces) {
    if (tr.rounds() != rounds) throw UsageError("traces have different lengths");
  }
  g.mean.resize(rounds);
  g.min.assign(rounds, std::numeric_limits<std::size_t>::max());
  g.max.assign(rounds, 0);
  g.mean_increase.resize(rounds);
  const double n = static_cast<double>(traces.size());
  for (std::size_t t = 0; t < rounds; ++t) {
    double sum = 0.0;
    double increase = 0.0;
    for (const auto& tr : traces) {
      const std::size_t c = tr.candidate_size[t];
      sum += static_cast<double>(c);
      increase += static_cast<double>(c) - static_cast<double>(t == 0 ? 0 : tr.candidate_size[t - 1]);
      g.min[t] = std::min(g.min[t], c);
      g.max[t] = std::max(g.max[t], c);
    }
    g.mean[t] = sum / n;
    g.mean_increase[t] = increase / n;
  }
  return g;
}

MeanSe mean_se(const std::vector<double>& values) {
  MeanSe out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / n;
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  return out;
}

std::vector<std::size_t> sample_sessions(const QueryLog& log, std::size_t n, std::uint64_t seed) {
  if (n > log.sessions.size()) {
    throw DataError("log", 0,
                    "requested " + std::to_string(n) + " sessions but the log has " +
                        std::to_string(log.sessions.size()));
  }
  std::vector<std::size_t> order(log.sessions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Engine engine(derive_seed(seed, 0));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + uniform_index(engine, order.size() - i);
    std::swap(order[i], order[j]);
  }
  order.resize(n);
  return order;
}

std::uint64_t session_seed(std::uint64_t seed, std::size_t j) { return derive_seed(seed, 1 + j); }

namespace {

PolicySummary summarize(std::string label, std::vector<RegretTrace> traces, const SimulationConfig& config) {
  PolicySummary s;
  s.label = std::move(label);
  const std::size_t rounds = config.rounds;
  s.mean_per_round_regret.resize(rounds);
  s.se_per_round_regret.resize(rounds);
  s.mean_cumulative_regret.resize(rounds);
  s.se_cumulative_regret.resize(rounds);
  s.mean_instantaneous_regret.resize(rounds);
  s.mean_context_cosine.assign(rounds, 0.0);
  s.mean_context_distance.assign(rounds, 0.0);
  std::vector<double> per_round(traces.size());
  std::vector<double> cumulative(traces.size());
  std::vector<double> instantaneous(traces.size());
  std::vector<double> cosine(traces.size());
  std::vector<double> distance(traces.size());
  for (std::size_t t = 0; t < rounds; ++t) {
    for (std::size_t j = 0; j < traces.size(); ++j) {
      per_round[j] = traces[j].per_round_regret[t];
      cumulative[j] = static_cast<double>(traces[j].cumulative_regret[t]);
      instantaneous[j] = 1.0 - traces[j].reward[t];
      if (config.context_metrics) {
        cosine[j] = traces[j].context_cosine[t];
        distance[j] = traces[j].context_distance[t];
      }
    }
    const auto pr = mean_se(per_round);
    const auto cr = mean_se(cumulative);
    s.mean_per_round_regret[t] = pr.mean;
    s.se_per_round_regret[t] = pr.se;
    s.mean_cumulative_regret[t] = cr.mean;
    s.se_cumulative_regret[t] = cr.se;
    s.mean_instantaneous_regret[t] = mean_se(instantaneous).mean;
    if (config.context_metrics) {
      s.mean_context_cosine[t] = mean_se(cosine).mean;
      s.mean_context_distance[t] = mean_se(distance).mean;
    }
  }
  s.growth = candidate_growth_stats(traces);
  std::vector<double> best;
  for (const auto& tr : traces) {
    best.push_back(static_cast<double>(hindsight_best(tr, config.reward)));
    s.expert_failures += tr.expert_failures;
  }
  s.mean_hindsight_best = mean_se(best).mean;
  s.traces = std::move(traces);
  return s;
}

}  // namespace

ExperimentResult run_experiment(const QueryLog& log, const std::vector<Policy>& policies,
                                const ExpertSet& experts, const SimulationConfig& config,
                                const Embedder& embedder) {
  config.validate();
  if (policies.empty()) throw ConfigError("no policies to run");
  ExperimentResult result;
  result.session_indices = sample_sessions(log, config.n_sessions, config.seed);
  for (std::size_t i : result.session_indices) result.session_ids.push_back(log.sessions[i].session_id);

  const std::size_t n = result.session_indices.size();
  const std::size_t jobs = n * policies.size();
  std::vector<std::vector<RegretTrace>> traces(policies.size(), std::vector<RegretTrace>(n));
  std::vector<std::exception_ptr> failures(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t job = next++; job < jobs; job = next++) {
      const std::size_t p = job / n;
      const std::size_t j = job % n;
      try {
        traces[p][j] = run_session(log.sessions[result.session_indices[j]], policies[p], experts,
                                   config, session_seed(config.seed, j), embedder);
      } catch (...) {
        failures[job] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(config.threads, 1, jobs);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  for (std::size_t p = 0; p < policies.size(); ++p) {
    result.policies.push_back(summarize(policy_label(policies[p]), std::move(traces[p]), config));
  }
  return result;
}

}  // namespace exp3ss
