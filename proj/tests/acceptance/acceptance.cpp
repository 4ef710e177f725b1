// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "exp3ss/bandit.hpp"
#include "exp3ss/cli.hpp"
#include "exp3ss/datasets.hpp"
#include "exp3ss/experts.hpp"
#include "exp3ss/rng.hpp"
#include "exp3ss/simulator.hpp"
#include "exp3ss/text.hpp"
#include "exp3ss/text_metrics.hpp"
#include "fixtures.hpp"

using namespace exp3ss;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------
// Vanilla EXP3, written out independently of the library: linear weights in
// long double, uniform initialization, same generator discipline (64-bit
// Mersenne Twister, top 53 bits as a uniform, inverse-CDF scan).

class ReferenceExp3 {
 public:
  ReferenceExp3(std::size_t arms, long double eta, std::uint64_t seed)
      : eta_(eta), weights_(arms, 1.0L), engine_(seed) {}

  std::vector<double> probabilities() const {
    long double total = 0.0L;
    for (auto w : weights_) total += w;
    std::vector<double> p;
    const auto k = static_cast<long double>(weights_.size());
    for (auto w : weights_) p.push_back(static_cast<double>((1.0L - eta_) * w / total + eta_ / k));
    return p;
  }

  std::size_t draw(const std::vector<double>& p) {
    double total = 0.0;
    for (double v : p) total += v;
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53 * total;
    double cumulative = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      cumulative += p[i];
      if (u < cumulative) return i;
    }
    return p.size() - 1;
  }

  void update(std::size_t arm, double reward, double p) {
    weights_[arm] *= std::exp(eta_ * static_cast<long double>(reward) / static_cast<long double>(p));
  }

 private:
  long double eta_;
  std::vector<long double> weights_;
  std::mt19937_64 engine_;
};

double scripted_reward(std::size_t round, std::size_t arm, std::uint64_t seed) {
  // Deterministic, arm-dependent Bernoulli-like rewards.
  const std::uint64_t h = splitmix64(seed * 1000003u + round * 131u + arm);
  const double threshold = 0.15 + 0.07 * static_cast<double>(arm % 10);
  return static_cast<double>(h >> 11) * 0x1.0p-53 < threshold ? 1.0 : 0.0;
}

Verdict criterion_1() {
  Verdict v;
  std::vector<std::string> arms;
  for (int i = 0; i < 10; ++i) arms.push_back("arm " + std::to_string(i));
  // Proposes the ten arms in the first round only.
  const ExpertSet experts{std::make_shared<ScriptedExpert>("once", [arms](const QueryContext& c) {
    std::vector<ExpertRecommendation> out;
    if (c.size() == 1) {
      for (const auto& a : arms) out.push_back({a, 0.5});
    }
    return out;
  })};
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    BanditConfig config;
    config.eta = 0.05 + 0.04 * static_cast<double>(seed);
    config.selection_rule = TopK{10};
    config.rng_seed = 1000 + seed;
    Exp3SS bandit(config);
    ReferenceExp3 reference(10, config.eta, config.rng_seed);
    QueryContext context({"start"});
    for (std::size_t t = 1; t <= 50; ++t) {
      std::vector<ArmId> proposals;
      for (const auto& rec : union_candidates(experts, context, config.selection_rule).candidates) {
        proposals.push_back(bandit.intern(rec.query));
      }
      context.push("next");
      bandit.ingest_candidates(proposals);
      const auto p = bandit.compute_probabilities();
      const auto q = reference.probabilities();
      // Candidate order equals the scripted order, so arm i is index i.
      for (std::size_t i = 0; i < 10; ++i) {
        v.require(bandit.text(bandit.candidates()[i]) == arms[i], "candidate order differs");
        worst = std::max(worst, std::abs(p[i] - q[i]));
      }
      const ArmId chosen = bandit.select_arm();
      const std::size_t ref_chosen = reference.draw(q);
      const std::size_t index = chosen.value;
      v.require(index == ref_chosen, fmt("trajectories differ at seed %llu round %zu", (unsigned long long)seed, t));
      const double r = scripted_reward(t, index, seed);
      const auto outcome = bandit.update(chosen, r);
      reference.update(ref_chosen, r, q[ref_chosen]);
      v.require(outcome.pseudo_reward == r / outcome.probability, "pseudo-reward is not r/p");
    }
  }
  v.require(worst <= 1e-12, fmt("max |p - p_ref| = %.3g", worst));
  if (v.pass) v.detail = fmt("max |p - p_ref| = %.2g over 10 seeds x 50 rounds, identical arm trajectories", worst);
  return v;
}

// ---------------------------------------------------------------------------

Verdict criterion_2() {
  Verdict v;
  Engine rng(2024);
  std::size_t cycles = 0;
  double worst_sum = 0.0;
  double min_slack = 1.0;
  std::size_t max_arms = 0;
  while (cycles < 10000) {
    BanditConfig config;
    config.eta = 0.01 + 0.98 * uniform01(rng);
    config.rng_seed = rng();
    config.renormalize = uniform_index(rng, 4) != 0;
    Exp3SS bandit(config);
    const std::size_t length = 1 + uniform_index(rng, 200);
    std::size_t next_arm = 0;
    for (std::size_t t = 0; t < length && cycles < 10000; ++t, ++cycles) {
      std::vector<ArmId> proposals;
      const std::size_t fresh = (t == 0 ? 1 : 0) + uniform_index(rng, 8);
      for (std::size_t i = 0; i < fresh; ++i) proposals.push_back(bandit.intern("a" + std::to_string(next_arm++)));
      // Re-proposing existing arms must not reset them.
      const std::size_t repeats = next_arm > 0 ? uniform_index(rng, 4) : 0;
      for (std::size_t i = 0; i < repeats; ++i) {
        proposals.push_back(bandit.intern("a" + std::to_string(uniform_index(rng, next_arm))));
      }
      bandit.ingest_candidates(proposals);
      const auto p = bandit.compute_probabilities();
      const double floor = config.eta / static_cast<double>(p.size());
      double sum = 0.0;
      for (double pi : p) {
        sum += pi;
        min_slack = std::min(min_slack, pi - floor);
      }
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      max_arms = std::max(max_arms, p.size());
      const ArmId chosen = bandit.select_arm();
      bandit.update(chosen, uniform_index(rng, 3) == 0 ? 1.0 : uniform01(rng));
    }
  }
  v.require(worst_sum <= 1e-9, fmt("|sum p - 1| reached %.3g", worst_sum));
  v.require(min_slack >= -1e-12, fmt("p fell below eta/|C| by %.3g", -min_slack));
  if (v.pass) {
    v.detail = fmt("10000 cycles, max |sum p - 1| = %.2g, min p - eta/|C| = %.2g, up to %zu arms", worst_sum,
                   min_slack, max_arms);
  }
  return v;
}

// ---------------------------------------------------------------------------

Verdict criterion_3() {
  Verdict v;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    BanditConfig a;
    a.eta = 0.2;
    a.rng_seed = 77 + seed;
    BanditConfig b = a;
    a.renormalize = true;
    b.renormalize = false;
    Exp3SS with(a);
    Exp3SS without(b);
    for (std::size_t t = 1; t <= 200; ++t) {
      std::vector<ArmId> pa, pb;
      // New arms at a decaying rate, so the set keeps growing.
      const std::size_t fresh = t == 1 ? 3 : (t % (1 + t / 20) == 0 ? 2 : 0);
      for (std::size_t i = 0; i < fresh; ++i) {
        const std::string name = "q" + std::to_string(t) + "." + std::to_string(i);
        pa.push_back(with.intern(name));
        pb.push_back(without.intern(name));
      }
      with.ingest_candidates(pa);
      without.ingest_candidates(pb);
      const auto p = with.compute_probabilities();
      const auto q = without.compute_probabilities();
      v.require(p.size() == q.size(), "candidate sets diverged");
      for (std::size_t i = 0; i < p.size() && i < q.size(); ++i) worst = std::max(worst, std::abs(p[i] - q[i]));
      const ArmId ca = with.select_arm();
      const ArmId cb = without.select_arm();
      v.require(with.text(ca) == without.text(cb), fmt("choices diverged at seed %llu round %zu",
                                                       (unsigned long long)seed, t));
      const double r = scripted_reward(t, ca.value, seed);
      with.update(ca, r);
      without.update(cb, r);
    }
  }
  v.require(worst <= 1e-9, fmt("max |p_renorm - p_raw| = %.3g", worst));
  if (v.pass) v.detail = fmt("max |p_renorm - p_raw| = %.2g over 5 seeds x 200 rounds", worst);
  return v;
}

// ---------------------------------------------------------------------------

Verdict criterion_4() {
  Verdict v;
  // Frozen state with unequal weights, reached by a few updates.
  BanditConfig config;
  config.eta = 0.3;
  config.rng_seed = 5;
  Exp3SS bandit(config);
  std::vector<ArmId> arms;
  for (int i = 0; i < 5; ++i) arms.push_back(bandit.intern("arm" + std::to_string(i)));
  bandit.ingest_candidates(arms);
  bandit.compute_probabilities();
  bandit.update(arms[1], 1.0);
  bandit.ingest_candidates({});
  bandit.compute_probabilities();
  bandit.update(arms[3], 1.0);
  bandit.ingest_candidates({});
  const auto frozen = bandit.compute_probabilities();
  const std::vector<double> probabilities(frozen.begin(), frozen.end());
  const std::vector<double> rho{0.9, 0.25, 0.6, 1.0, 0.0};

  constexpr std::size_t kDraws = 100000;
  Engine engine(derive_seed(4, 4));
  std::vector<double> sums(5, 0.0);
  for (std::size_t n = 0; n < kDraws; ++n) {
    const std::size_t i = sample_categorical(engine, probabilities);
    const auto outcome = bandit.preview(arms[i], rho[i]);
    sums[i] += outcome.pseudo_reward;
  }
  std::ostringstream detail;
  for (std::size_t i = 0; i < 5; ++i) {
    const double mean = sums[i] / kDraws;
    const double p = probabilities[i];
    // r̂_i = (rho_i / p_i) * Bernoulli(p_i); its mean has this sd.
    const double sigma = rho[i] / p * std::sqrt(p * (1.0 - p) / kDraws);
    v.require(std::abs(mean - rho[i]) <= 3.0 * sigma + 1e-15,
              fmt("arm %zu: mean %.5f vs rho %.2f (3 sigma %.5f)", i, mean, rho[i], 3 * sigma));
    detail << fmt("%s%.4f/%.2f", i ? " " : "", mean, rho[i]);
  }
  if (v.pass) v.detail = "mean r-hat vs rho: " + detail.str() + " (all within 3 sigma, 100000 draws)";
  return v;
}

// ---------------------------------------------------------------------------

struct SyntheticRun {
  ExperimentResult result;
  double seconds = 0.0;
};

const QueryLog& synthetic_log() {
  static const QueryLog log = generate_synthetic_log(SyntheticConfig{});
  return log;
}

const std::pair<QueryLog, QueryLog>& synthetic_split() {
  static const auto split = split_log(synthetic_log(), 0.2, 7);
  return split;
}

const ExpertSet& synthetic_experts() {
  static const ExpertSet experts{
      std::make_shared<AdjacencyExpert>(AdjacencyExpert::train(synthetic_split().first)),
      std::make_shared<NgramExpert>(NgramExpert::train(synthetic_split().first))};
  return experts;
}

const SyntheticRun& ordering_run() {
  static const SyntheticRun run = [] {
    const auto start = std::chrono::steady_clock::now();
    SimulationConfig config;
    config.rounds = 200;
    config.n_sessions = 100;
    config.seed = 7;
    config.context_metrics = false;
    const std::vector<Policy> policies{Exp3SSPolicy{}, Exp3FixedPolicy{}, ExpertTop1Policy{0},
                                       ExpertTop1Policy{1}};
    SyntheticRun r;
    r.result = run_experiment(synthetic_split().second, policies, synthetic_experts(), config);
    r.seconds = seconds_since(start);
    return r;
  }();
  return run;
}

Verdict criterion_5() {
  Verdict v;
  const auto& run = ordering_run();
  const auto& policies = run.result.policies;
  const auto& ours = policies[0];
  const std::size_t last = ours.mean_cumulative_regret.size() - 1;
  std::ostringstream detail;
  detail << fmt("R(200): exp3ss %.2f (se %.2f)", ours.mean_cumulative_regret[last], ours.se_cumulative_regret[last]);
  for (std::size_t p = 1; p < policies.size(); ++p) {
    const auto& other = policies[p];
    std::vector<double> diff;
    for (std::size_t j = 0; j < ours.traces.size(); ++j) {
      diff.push_back(static_cast<double>(other.traces[j].cumulative_regret[last] -
                                         ours.traces[j].cumulative_regret[last]));
    }
    const auto paired = mean_se(diff);
    const double margin = other.mean_cumulative_regret[last] - ours.mean_cumulative_regret[last];
    const double se = std::max({ours.se_cumulative_regret[last], other.se_cumulative_regret[last], paired.se});
    v.require(margin > se, fmt("%s margin %.2f does not exceed se %.2f", other.label.c_str(), margin, se));
    detail << fmt(", %s %.2f (margin %.2f > se %.2f)", other.label.c_str(), other.mean_cumulative_regret[last],
                  margin, se);
  }
  v.require(run.seconds < 120.0, fmt("took %.1f s", run.seconds));
  v.detail = v.pass ? detail.str() : v.detail;
  return v;
}

// ---------------------------------------------------------------------------

Verdict criterion_6() {
  Verdict v;
  const auto experts = fixtures::stationary_experts();
  const auto policy = fixtures::stationary_policy(0.1);
  std::vector<double> ratio;
  for (std::size_t horizon : {250u, 500u, 1000u}) {
    SimulationConfig config;
    config.rounds = horizon;
    config.context_metrics = false;
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto tr = run_session(fixtures::held_session(), policy, experts, config, session_seed(6, seed));
      total += static_cast<double>(tr.cumulative_regret.back()) / static_cast<double>(horizon);
    }
    ratio.push_back(total / 20.0);
  }
  v.require(ratio[1] < ratio[0] && ratio[2] < ratio[1],
            fmt("R(T)/T = %.4f, %.4f, %.4f is not strictly decreasing", ratio[0], ratio[1], ratio[2]));
  if (v.pass) v.detail = fmt("mean R(T)/T at T=250,500,1000: %.4f > %.4f > %.4f", ratio[0], ratio[1], ratio[2]);
  return v;
}

// ---------------------------------------------------------------------------

Verdict criterion_7() {
  Verdict v;
  const std::size_t experts = synthetic_experts().size();
  std::size_t checked = 0;
  double mean_final = 0.0;
  std::size_t min_final = SIZE_MAX, max_final = 0;
  std::string growth_csv;
  for (std::size_t k : {1u, 3u, 5u}) {
    SimulationConfig config;
    config.rounds = 120;
    config.n_sessions = 60;
    config.seed = 70 + k;
    config.context_metrics = false;
    BanditConfig bandit;
    bandit.selection_rule = TopK{k};
    const auto result = run_experiment(synthetic_split().second, {Exp3SSPolicy{bandit}}, synthetic_experts(), config);
    for (const auto& tr : result.policies[0].traces) {
      for (std::size_t t = 0; t < tr.rounds(); ++t) {
        const std::size_t previous = t == 0 ? 0 : tr.candidate_size[t - 1];
        v.require(tr.candidate_size[t] >= previous, "candidate set shrank");
        v.require(tr.candidate_size[t] - std::min(previous, tr.candidate_size[t]) <= k * experts,
                  fmt("candidate set grew by more than k|E| (k=%zu)", k));
        ++checked;
      }
    }
    if (k == 3) {
      std::ostringstream csv;
      csv << kCandidatesHeader << '\n';
      write_candidate_rows(csv, result);
      growth_csv = csv.str();
      const auto& g = result.policies[0].growth;
      mean_final = g.mean.back();
      min_final = g.min.back();
      max_final = g.max.back();
    }
  }
  // The growth-rate column is present and filled.
  std::istringstream in(growth_csv);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  v.require(header.find("mean_candidate_increase") != std::string::npos, "growth-rate column missing");
  v.require(std::count(row.begin(), row.end(), ',') == 5, "growth-rate row malformed");
  if (v.pass) {
    v.detail = fmt("%zu (session, round) checks; k=3 at T=120: mean |C_T| %.1f, min %zu, max %zu "
                   "(reference only: 23 / 8 / 43)",
                   checked, mean_final, min_final, max_final);
  }
  return v;
}

// ---------------------------------------------------------------------------

std::string embedding_fingerprint(const QueryEmbedding& e) {
  std::string s;
  for (std::size_t i = 0; i < e.dimension(); ++i) {
    if (e.values()[i] != 0.0) s += std::to_string(i) + ":" + std::to_string(static_cast<int>(e.values()[i])) + " ";
  }
  return s;
}

Verdict criterion_8() {
  Verdict v;
  v.require(tokenize("Life Insurance!") == TokenSet{"life", "insurance"}, "tokenize casefold/split");
  v.require(tokenize("").empty(), "tokenize empty");
  v.require(tokenize("factors that affect getting life insurance").size() == 6, "six-token query");
  v.require(overlap_reward("life insurance", "life insurance") == 1, "identical queries");
  v.require(overlap_reward("life insurance", "garden tools") == 0, "disjoint queries");
  v.require(overlap_reward("", "life") == 0 && overlap_reward("life", "") == 0, "empty side");
  const double dice = overlap_coefficient("factors influencing the purchase of life insurance",
                                          "factors influencing the insurance amount");
  v.require(std::abs(dice - 2.0 / 3.0) < 1e-15, fmt("Dice = %.6f, expected 2/3", dice));
  v.require(overlap_reward("factors influencing the purchase of life insurance",
                           "factors influencing the insurance amount") == 1,
            "Dice 2/3 must reward 1");
  v.require(overlap_reward("a b", "a c") == 0, "Dice exactly 0.5 is not more than half");

  const Embedder embedder;
  v.require(embedder.embed("").norm() == 0.0, "embed empty is zero");
  auto sum = embedder.embed("a");
  sum += embedder.embed("b");
  const auto ab = embedder.embed("a b");
  v.require(std::equal(sum.values().begin(), sum.values().end(), ab.values().begin(), ab.values().end()),
            "embedding additivity");
  const auto golden = embedder.embed("life insurance");
  v.require(embedding_fingerprint(golden) ==
                "3:2 12:1 14:1 15:1 19:1 22:-1 26:-1 31:1 33:-1 36:-1 41:-1 43:1 46:-1 47:-1 50:-1 52:1 57:-1 72:2 "
                "80:1 85:1 86:1 87:-1 88:1 91:-1 99:1 101:1 102:-1 103:-1 104:-1 105:-1 107:-1 114:1 124:-1 127:1 ",
            "golden embedding changed");

  const auto q = embedder.embed("car loans");
  std::vector<double> doubled(q.values().begin(), q.values().end());
  for (double& x : doubled) x *= 2.0;
  v.require(std::abs(cosine_similarity(q, q) - 1.0) < 1e-12, "cos(v, v)");
  v.require(std::abs(cosine_similarity(q, QueryEmbedding(doubled)) - 1.0) < 1e-12, "cos(v, 2v)");
  std::vector<double> e1(8, 0.0), e2(8, 0.0), three(8, 0.0), four(8, 0.0);
  e1[0] = 1.0;
  e2[1] = 1.0;
  three[0] = 3.0;
  four[1] = 4.0;
  v.require(cosine_similarity(QueryEmbedding(e1), QueryEmbedding(e2)) == 0.0, "orthogonal cosine");
  v.require(euclidean_distance(q, q) == 0.0, "d(v, v)");
  v.require(std::abs(euclidean_distance(QueryEmbedding(std::vector<double>(q.dimension(), 0.0)), q) - q.norm()) < 1e-12,
            "d(0, v)");
  v.require(euclidean_distance(QueryEmbedding(three), QueryEmbedding(four)) == 5.0, "3-4-5");
  const std::vector<std::string> context{"car loans"};
  const auto s = context_similarity("car loans", context, embedder);
  v.require(std::abs(s.mean_cosine - 1.0) < 1e-12 && s.mean_distance == 0.0, "context similarity ([q], q)");

  // Symmetry fuzz.
  static const char* words[] = {"life", "insurance", "car", "loans", "rates", "cheap", "quotes", "the", "of", "best"};
  Engine rng(8);
  auto random_query = [&] {
    std::string out;
    const std::size_t n = uniform_index(rng, 6);
    for (std::size_t i = 0; i < n; ++i) out += std::string(i ? " " : "") + words[uniform_index(rng, 10)];
    return out;
  };
  std::size_t positives = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_query();
    const auto b = random_query();
    const int ab = overlap_reward(a, b);
    v.require(ab == overlap_reward(b, a), "overlap reward asymmetric for '" + a + "' / '" + b + "'");
    positives += static_cast<std::size_t>(ab);
  }
  if (v.pass) v.detail = fmt("tagged examples exact, Dice = 2/3 -> 1, 1000 symmetric pairs (%zu rewarded)", positives);
  return v;
}

// ---------------------------------------------------------------------------

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Hash of regret.csv for the fixed spec below, recorded on first run.
constexpr std::uint64_t kPinnedRegretHash = 0x1d0668cef9790226ull;

Verdict criterion_9() {
  Verdict v;
  const auto dir = std::filesystem::temp_directory_path() / "exp3ss_acceptance_repro";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const nlohmann::json spec{{"synthetic",
                             {{"n_topics", 12}, {"keywords_per_topic", 12}, {"n_sessions", 200},
                              {"min_session_length", 3}, {"max_session_length", 7}, {"drift_probability", 0.1},
                              {"seed", 7}}},
                            {"eval_fraction", 0.25},
                            {"split_seed", 3},
                            {"experts", {"adjacency", "ngram"}},
                            {"policies", {"exp3ss", "exp3-fixed", "expert-top1:0", "expert-top1:1"}},
                            {"rounds", 40},
                            {"sessions", 20},
                            {"seed", 9}};
  {
    std::ofstream out(dir / "spec.json");
    out << spec.dump();
  }
  std::string csv[2];
  for (int run = 0; run < 2; ++run) {
    const auto out = (dir / ("run" + std::to_string(run))).string();
    std::ostringstream sink_out, sink_err;
    const int status = run_cli({"exp3ss", "simulate", "--config", (dir / "spec.json").string(), "--out", out},
                               sink_out, sink_err);
    v.require(status == 0, "simulate failed: " + sink_err.str());
    csv[run] = slurp(std::filesystem::path(out) / "regret.csv");
  }
  v.require(!csv[0].empty() && csv[0] == csv[1], "two runs differ");
  const std::uint64_t hash = fnv1a(csv[0]);
  v.require(hash == kPinnedRegretHash, fmt("regret.csv hash %016llx differs from pinned %016llx",
                                           (unsigned long long)hash, (unsigned long long)kPinnedRegretHash));
  if (v.pass) v.detail = fmt("two runs byte-identical, %zu bytes, fnv1a %016llx matches the pinned value",
                             csv[0].size(), (unsigned long long)hash);
  std::filesystem::remove_all(dir);
  return v;
}

// ---------------------------------------------------------------------------

Verdict criterion_10() {
  Verdict v;
  SimulationConfig config;
  config.rounds = 200;
  config.n_sessions = 100;
  config.seed = 10;
  config.user_model = UserModel::kAlwaysAdvance;
  config.context_metrics = false;
  std::vector<ExperimentResult> results;
  const std::vector<std::size_t> ks{1, 2, 3, 5};
  std::ostringstream csv;
  csv << "k," << kRegretHeader << '\n';
  for (std::size_t k : ks) {
    BanditConfig bandit;
    bandit.selection_rule = TopK{k};
    results.push_back(run_experiment(synthetic_split().second, {Exp3SSPolicy{bandit}}, synthetic_experts(), config));
    write_regret_rows(csv, results.back(), std::to_string(k) + ",");
  }
  std::size_t rows = 0;
  {
    std::istringstream in(csv.str());
    for (std::string line; std::getline(in, line);) ++rows;
  }
  v.require(rows == 1 + ks.size() * config.rounds, "sweep table has the wrong number of rows");
  for (std::size_t a = 0; a + 1 < ks.size(); ++a) {
    const auto& small = results[a].policies[0].traces;
    const auto& large = results[a + 1].policies[0].traces;
    v.require(results[a].session_ids == results[a + 1].session_ids, "sessions not paired");
    for (std::size_t j = 0; j < small.size(); ++j) {
      for (std::size_t t = 0; t < config.rounds; ++t) {
        v.require(small[j].candidate_size[t] <= large[j].candidate_size[t],
                  fmt("|C_t| decreased from k=%zu to k=%zu (session %zu, round %zu)", ks[a], ks[a + 1], j, t + 1));
      }
    }
  }
  std::ostringstream detail;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const auto& s = results[i].policies[0];
    detail << fmt("%sk=%zu: R(T)/T %.3f, mean |C_T| %.1f", i ? "; " : "", ks[i], s.mean_per_round_regret.back(),
                  s.growth.mean.back());
  }
  if (v.pass) v.detail = "candidate sizes nondecreasing in k per session and round; " + detail.str();
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"EXP3 reduction oracle", criterion_1},
      {"probability invariants fuzz", criterion_2},
      {"renormalization equivalence", criterion_3},
      {"pseudo-reward estimator", criterion_4},
      {"policy ordering on synthetic log", criterion_5},
      {"empirical sublinearity", criterion_6},
      {"candidate-set laws", criterion_7},
      {"metric unit suite", criterion_8},
      {"reproducibility", criterion_9},
      {"k-sweep set inclusion", criterion_10},
  };
  const double limits[] = {1.0, 10.0, 0.0, 10.0, 120.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    const double elapsed = seconds_since(start);
    if (limits[i] > 0.0 && elapsed >= limits[i] && v.pass) {
      v.pass = false;
      v.detail = fmt("runtime %.2f s exceeds %.0f s", elapsed, limits[i]);
    }
    std::printf("criterion %2zu %s  %s (%.2f s): %s\n", i + 1, v.pass ? "PASS" : "FAIL", criteria[i].first, elapsed,
                v.detail.c_str());
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
