#pragma once

// Scripted environments shared by the unit and acceptance suites.

#include <memory>
#include <string>
#include <vector>

#include "exp3ss/experts.hpp"
#include "exp3ss/simulator.hpp"

namespace exp3ss::fixtures {

inline std::shared_ptr<ScriptedExpert> fixed_expert(std::string name, const std::vector<std::string>& queries) {
  std::vector<ExpertRecommendation> recs;
  double score = 1.0;
  for (const auto& q : queries) {
    recs.push_back({q, score});
    score *= 0.9;
  }
  return std::make_shared<ScriptedExpert>(std::move(name), std::move(recs));
}

// Two-query session: the target holds on "target query" from round 1 on.
inline Session held_session() { return Session{"held", {"start query", "target query"}}; }

// Ten arms proposed every round, one of which matches the held target.
inline ExpertSet stationary_experts() {
  std::vector<std::string> arms;
  for (int i = 0; i < 9; ++i) arms.push_back("junk" + std::to_string(i) + " filler" + std::to_string(i));
  arms.insert(arms.begin() + 4, "target query");
  return {fixed_expert("stationary", arms)};
}

// EXP3-SS seeing all ten stationary arms.
inline Exp3SSPolicy stationary_policy(double eta = 0.1) {
  Exp3SSPolicy policy;
  policy.bandit.eta = eta;
  policy.bandit.selection_rule = TopK{10};
  return policy;
}

}  // namespace exp3ss::fixtures
