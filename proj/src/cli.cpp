#include "exp3ss/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "exp3ss/errors.hpp"
#include "exp3ss/external_expert.hpp"

namespace exp3ss {

namespace {

// Typed access to a JSON object; every key must be consumed.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <typename T>
  void get(const char* key, T& dst) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const auto& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(key, "a boolean");
      dst = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(key, "a string");
      dst = v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(key, "a number");
      dst = v.get<T>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) fail(key, "a nonnegative integer");
      dst = v.get<T>();
    } else {
      if (!v.is_number_integer()) fail(key, "an integer");
      dst = v.get<T>();
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& dst) {
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      seen_.insert(key);
      dst.reset();
      return;
    }
    T value{};
    get(key, value);
    dst = value;
  }

  const nlohmann::json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  [[noreturn]] void fail(const char* key, const char* expected) const {
    throw ConfigError(where_ + ": '" + key + "' must be " + expected);
  }

  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

AdjacencyParams adjacency_params(const nlohmann::json& j) {
  AdjacencyParams p;
  Reader r(j, "adjacency expert");
  r.get("alpha", p.alpha);
  r.get("n_sim", p.n_sim);
  r.finish();
  if (!(p.alpha >= 0.0)) throw ConfigError("adjacency alpha must be nonnegative");
  if (p.n_sim < 1) throw ConfigError("adjacency n_sim must be at least 1");
  return p;
}

NgramParams ngram_params(const nlohmann::json& j) {
  NgramParams p;
  Reader r(j, "ngram expert");
  r.get("order", p.order);
  r.get("beam_width", p.beam_width);
  r.get("max_len", p.max_len);
  r.finish();
  p.validate();
  return p;
}

ExternalExpertOptions external_options(const nlohmann::json& j) {
  ExternalExpertOptions o;
  Reader r(j, "external expert");
  if (!r.has("command")) throw ConfigError("external expert needs a command");
  const auto& cmd = r.raw("command");
  if (cmd.is_string()) {
    o.command = split_words(cmd.get<std::string>());
  } else if (cmd.is_array()) {
    for (const auto& a : cmd) {
      if (!a.is_string()) throw ConfigError("external expert command must be strings");
      o.command.push_back(a.get<std::string>());
    }
  } else {
    throw ConfigError("external expert command must be a string or a list of strings");
  }
  if (o.command.empty()) throw ConfigError("external expert command is empty");
  r.get("name", o.name);
  std::int64_t timeout_ms = o.request_timeout.count();
  std::int64_t startup_ms = o.startup_timeout.count();
  r.get("timeout_ms", timeout_ms);
  r.get("startup_timeout_ms", startup_ms);
  r.get("threshold_generation", o.threshold_generation);
  r.finish();
  if (timeout_ms <= 0 || startup_ms <= 0) throw ConfigError("external expert timeouts must be positive");
  o.request_timeout = std::chrono::milliseconds(timeout_ms);
  o.startup_timeout = std::chrono::milliseconds(startup_ms);
  return o;
}

void validate_expert(const ExpertSpec& e) {
  if (e.kind == "adjacency") {
    adjacency_params(e.params);
  } else if (e.kind == "ngram") {
    ngram_params(e.params);
  } else if (e.kind == "external") {
    external_options(e.params);
  } else if (e.kind == "artifact") {
    if (e.path.empty()) throw ConfigError("artifact expert needs a path");
  } else {
    throw UsageError("unknown expert kind '" + e.kind + "' (expected adjacency, ngram, external or an artifact path)");
  }
}

Policy parse_policy(const std::string& text, const ExperimentSpec& spec, std::size_t n_experts) {
  if (text == "exp3ss") {
    BanditConfig b;
    b.eta = spec.effective_eta();
    b.selection_rule = spec.selection_rule();
    b.renormalize = spec.renormalize;
    return Exp3SSPolicy{b};
  }
  if (text == "exp3-fixed") return Exp3FixedPolicy{spec.effective_eta(), spec.arm_cap, spec.renormalize};
  const std::string prefix = "expert-top1:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string digits = text.substr(prefix.size());
    std::size_t index = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), index);
    if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size()) {
      throw ConfigError("bad expert index in policy '" + text + "'");
    }
    if (index >= n_experts) {
      throw ConfigError("policy '" + text + "' names expert " + std::to_string(index) + " but only " +
                        std::to_string(n_experts) + " are configured");
    }
    return ExpertTop1Policy{index};
  }
  throw ConfigError("unknown policy '" + text + "' (expected exp3ss, exp3-fixed or expert-top1:<i>)");
}

}  // namespace

// ---------------------------------------------------------------------------

ExpertSpec ExpertSpec::parse(const std::string& text) {
  ExpertSpec e;
  if (text == "adjacency" || text == "ngram") {
    e.kind = text;
  } else if (text.rfind("external:", 0) == 0) {
    e.kind = "external";
    e.params = {{"command", split_words(text.substr(9))}};
  } else if (text.size() > 5 && text.substr(text.size() - 5) == ".json") {
    e.kind = "artifact";
    e.path = text;
  } else {
    throw UsageError("unknown expert kind '" + text + "' (expected adjacency, ngram, external:<command> or a .json artifact)");
  }
  return e;
}

ExpertSpec ExpertSpec::from_json(const nlohmann::json& j) {
  if (j.is_string()) return parse(j.get<std::string>());
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string()) {
    throw ConfigError("expert entries must be strings or objects with a 'kind'");
  }
  ExpertSpec e;
  e.kind = j.at("kind").get<std::string>();
  e.params = j;
  e.params.erase("kind");
  if (e.kind == "artifact") {
    if (!j.contains("path") || !j.at("path").is_string() || j.size() != 2) {
      throw ConfigError("artifact experts take exactly a 'path'");
    }
    e.path = j.at("path").get<std::string>();
    e.params = nlohmann::json::object();
  }
  return e;
}

nlohmann::json ExpertSpec::to_json() const {
  if (kind == "artifact") return {{"kind", kind}, {"path", path}};
  nlohmann::json j = params;
  j["kind"] = kind;
  return j;
}

ExperimentSpec ExperimentSpec::from_json(const nlohmann::json& input) {
  const nlohmann::json& j = input.is_object() && input.contains("spec") && input.contains("format")
                                ? input.at("spec")
                                : input;
  ExperimentSpec s;
  Reader r(j, "experiment spec");
  r.get("log", s.log);
  if (r.has("synthetic") && !j.at("synthetic").is_null()) {
    s.synthetic = SyntheticConfig::from_json(r.raw("synthetic"));
  } else if (r.has("synthetic")) {
    r.raw("synthetic");
  }
  r.get("eval_fraction", s.eval_fraction);
  r.get("split_seed", s.split_seed);
  if (r.has("experts")) {
    const auto& list = r.raw("experts");
    if (!list.is_array()) throw ConfigError("experiment spec: 'experts' must be a list");
    for (const auto& e : list) s.experts.push_back(ExpertSpec::from_json(e));
  }
  if (r.has("policies")) {
    const auto& list = r.raw("policies");
    if (!list.is_array()) throw ConfigError("experiment spec: 'policies' must be a list");
    s.policies.clear();
    for (const auto& p : list) {
      if (!p.is_string()) throw ConfigError("experiment spec: policies must be strings");
      s.policies.push_back(p.get<std::string>());
    }
  }
  r.get("rounds", s.rounds);
  r.get("sessions", s.sessions);
  r.get("k", s.k);
  r.get("epsilon", s.epsilon);
  r.get("eta", s.eta);
  r.get("eta_theoretical", s.eta_theoretical);
  r.get("eta_candidate_cap", s.eta_candidate_cap);
  r.get("user_model", s.user_model);
  r.get("seed", s.seed);
  r.get("threads", s.threads);
  r.get("arm_cap", s.arm_cap);
  r.get("renormalize", s.renormalize);
  if (r.has("reward")) {
    Reader rr(r.raw("reward"), "reward");
    std::string coefficient = to_string(s.reward.coefficient);
    rr.get("coefficient", coefficient);
    s.reward.coefficient = parse_overlap_coefficient(coefficient);
    rr.get("strict", s.reward.strict);
    rr.get("multiset", s.reward.multiset);
    rr.get("threshold", s.reward.threshold);
    rr.finish();
  }
  if (r.has("embedding")) {
    Reader er(r.raw("embedding"), "embedding");
    er.get("dimension", s.embedding_dimension);
    er.get("seed", s.embedding_seed);
    er.get("vectors", s.embedding_vectors);
    er.finish();
  }
  r.get("context_metrics", s.context_metrics);
  r.get("out", s.out);
  r.finish();
  return s;
}

ExperimentSpec ExperimentSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spec file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json ExperimentSpec::to_json() const {
  nlohmann::json experts_json = nlohmann::json::array();
  for (const auto& e : experts) experts_json.push_back(e.to_json());
  auto opt = [](const auto& o) -> nlohmann::json { return o ? nlohmann::json(*o) : nlohmann::json(); };
  return {{"log", opt(log)},
          {"synthetic", synthetic ? synthetic->to_json() : nlohmann::json()},
          {"eval_fraction", opt(eval_fraction)},
          {"split_seed", split_seed},
          {"experts", experts_json},
          {"policies", policies},
          {"rounds", rounds},
          {"sessions", sessions},
          {"k", k},
          {"epsilon", opt(epsilon)},
          {"eta", eta},
          {"eta_theoretical", eta_theoretical},
          {"eta_candidate_cap", opt(eta_candidate_cap)},
          {"user_model", user_model},
          {"seed", seed},
          {"threads", threads},
          {"arm_cap", arm_cap},
          {"renormalize", renormalize},
          {"reward",
           {{"coefficient", to_string(reward.coefficient)},
            {"strict", reward.strict},
            {"multiset", reward.multiset},
            {"threshold", reward.threshold}}},
          {"embedding",
           {{"dimension", embedding_dimension}, {"seed", embedding_seed}, {"vectors", opt(embedding_vectors)}}},
          {"context_metrics", context_metrics},
          {"out", out}};
}

SelectionRule ExperimentSpec::selection_rule() const {
  if (epsilon) return ScoreThreshold{*epsilon};
  return TopK{k};
}

double ExperimentSpec::effective_eta() const {
  if (!eta_theoretical) return eta;
  if (eta_candidate_cap) return theoretical_eta(static_cast<std::int64_t>(rounds), *eta_candidate_cap);
  if (epsilon) throw ConfigError("eta_theoretical with a score threshold needs eta_candidate_cap");
  const auto cap = static_cast<std::int64_t>(k * experts.size() * rounds);
  return theoretical_eta(static_cast<std::int64_t>(rounds), cap);
}

SimulationConfig ExperimentSpec::simulation_config() const {
  SimulationConfig c;
  c.rounds = rounds;
  c.n_sessions = sessions;
  c.user_model = parse_user_model(user_model);
  c.seed = seed;
  c.reward = reward;
  c.context_metrics = context_metrics;
  c.threads = threads;
  return c;
}

std::vector<Policy> ExperimentSpec::policy_list() const {
  std::vector<Policy> out;
  for (const auto& p : policies) out.push_back(parse_policy(p, *this, experts.size()));
  return out;
}

void ExperimentSpec::validate() const {
  if (log.has_value() == synthetic.has_value()) {
    throw ConfigError("experiment spec needs exactly one of 'log' and 'synthetic'");
  }
  if (synthetic) synthetic->validate();
  if (eval_fraction && !(*eval_fraction > 0.0 && *eval_fraction < 1.0)) {
    throw ConfigError("eval_fraction must lie in (0, 1)");
  }
  if (experts.empty()) throw ConfigError("experiment spec lists no experts");
  for (const auto& e : experts) validate_expert(e);
  if (policies.empty()) throw ConfigError("experiment spec lists no policies");
  std::set<std::string> seen;
  for (const auto& p : policies) {
    if (!seen.insert(p).second) throw ConfigError("policy '" + p + "' listed twice");
  }
  if (rounds < 1) throw ConfigError("rounds must be at least 1");
  if (sessions < 1) throw ConfigError("sessions must be at least 1");
  if (k < 1) throw ConfigError("k must be at least 1");
  if (epsilon && !(*epsilon >= 0.0 && *epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  if (eta_candidate_cap && *eta_candidate_cap < 1) throw ConfigError("eta_candidate_cap must be positive");
  BanditConfig b;
  b.eta = effective_eta();
  b.selection_rule = selection_rule();
  b.validate();
  parse_user_model(user_model);
  if (!(reward.threshold >= 0.0 && reward.threshold <= 1.0)) throw ConfigError("reward threshold must lie in [0, 1]");
  if (!embedding_vectors && embedding_dimension < 8) throw ConfigError("embedding dimension must be at least 8");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (arm_cap < 1) throw ConfigError("arm_cap must be at least 1");
  policy_list();
}

// ---------------------------------------------------------------------------

PreparedExperiment prepare_experiment(const ExperimentSpec& spec) {
  spec.validate();
  PreparedExperiment prepared;
  QueryLog full = spec.log ? load_log(*spec.log).log : preprocess(generate_synthetic_log(*spec.synthetic)).log;
  QueryLog train;
  if (spec.eval_fraction) {
    std::tie(train, prepared.replay_log) = split_log(full, *spec.eval_fraction, spec.split_seed);
  } else {
    train = full;
    prepared.replay_log = std::move(full);
  }
  bool trained_inline = false;
  for (const auto& e : spec.experts) {
    if (e.kind == "adjacency") {
      prepared.experts.push_back(std::make_shared<AdjacencyExpert>(AdjacencyExpert::train(train, adjacency_params(e.params))));
      trained_inline = true;
    } else if (e.kind == "ngram") {
      prepared.experts.push_back(std::make_shared<NgramExpert>(NgramExpert::train(train, ngram_params(e.params))));
      trained_inline = true;
    } else if (e.kind == "external") {
      prepared.experts.push_back(std::make_shared<ExternalExpert>(external_options(e.params)));
    } else {
      prepared.experts.push_back(load_expert(e.path));
    }
  }
  if (trained_inline && !spec.eval_fraction) {
    spdlog::warn("experts are trained on the same sessions they are evaluated on (no eval_fraction)");
  }
  prepared.embedder = spec.embedding_vectors
                          ? std::make_shared<Embedder>(Embedder::from_vector_file(*spec.embedding_vectors))
                          : std::make_shared<Embedder>(spec.embedding_dimension, spec.embedding_seed);
  return prepared;
}

std::string format_number(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw UsageError("cannot format number");
  return std::string(buf, ptr);
}

void write_regret_rows(std::ostream& out, const ExperimentResult& result, const std::string& prefix) {
  if (result.policies.empty()) return;
  const std::size_t rounds = result.policies.front().mean_per_round_regret.size();
  for (std::size_t t = 0; t < rounds; ++t) {
    for (const auto& p : result.policies) {
      out << prefix << (t + 1) << ',' << p.label << ',' << format_number(p.mean_per_round_regret[t]) << ','
          << format_number(p.se_per_round_regret[t]) << ',' << format_number(p.mean_cumulative_regret[t]) << ','
          << format_number(p.mean_instantaneous_regret[t]) << ',' << format_number(p.growth.mean[t]) << ','
          << p.growth.min[t] << ',' << p.growth.max[t] << ',' << format_number(p.mean_context_cosine[t]) << ','
          << format_number(p.mean_context_distance[t]) << '\n';
    }
  }
}

void write_candidate_rows(std::ostream& out, const ExperimentResult& result) {
  if (result.policies.empty()) return;
  const std::size_t rounds = result.policies.front().growth.mean.size();
  for (std::size_t t = 0; t < rounds; ++t) {
    for (const auto& p : result.policies) {
      out << (t + 1) << ',' << p.label << ',' << format_number(p.growth.mean[t]) << ',' << p.growth.min[t] << ','
          << p.growth.max[t] << ',' << format_number(p.growth.mean_increase[t]) << '\n';
    }
  }
}

nlohmann::json experiment_meta(const ExperimentSpec& spec, const PreparedExperiment& prepared,
                               const ExperimentResult& result) {
  nlohmann::json experts = nlohmann::json::array();
  for (const auto& e : prepared.experts) {
    experts.push_back({{"name", e->name()}, {"kind", e->kind()}, {"fingerprint", e->fingerprint()}});
  }
  nlohmann::json policies = nlohmann::json::array();
  for (const auto& p : spec.policy_list()) policies.push_back(to_json(p));
  nlohmann::json results = nlohmann::json::array();
  for (const auto& p : result.policies) {
    results.push_back({{"policy", p.label},
                       {"mean_cumulative_regret", p.mean_cumulative_regret.back()},
                       {"se_cumulative_regret", p.se_cumulative_regret.back()},
                       {"mean_per_round_regret", p.mean_per_round_regret.back()},
                       {"mean_hindsight_best", p.mean_hindsight_best},
                       {"mean_final_candidate_size", p.growth.mean.back()},
                       {"expert_failures", p.expert_failures}});
  }
  nlohmann::json seeds = nlohmann::json::array();
  for (std::size_t j = 0; j < result.session_ids.size(); ++j) seeds.push_back(session_seed(spec.seed, j));
  return {{"format", "exp3ss-run"},
          {"version", 1},
          {"spec", spec.to_json()},
          {"effective_eta", spec.effective_eta()},
          {"selection_rule", to_string(spec.selection_rule())},
          {"replay_sessions", prepared.replay_log.sessions.size()},
          {"sampled_sessions", result.session_ids},
          {"session_seeds", seeds},
          {"experts", experts},
          {"policies", policies},
          {"results", results}};
}

// ---------------------------------------------------------------------------

namespace {

void configure_logging(std::ostream& err) {
  static bool done = false;
  if (!done) {
    auto logger = spdlog::get("exp3ss");
    if (!logger) logger = spdlog::stderr_color_mt("exp3ss");
    spdlog::set_default_logger(logger);
    done = true;
  }
  auto level = spdlog::level::warn;
  if (const char* env = std::getenv("EXP3SS_LOG_LEVEL"); env && *env) {
    const std::string name(env);
    level = spdlog::level::from_str(name);
    if (level == spdlog::level::off && name != "off") {
      err << "warning: unknown EXP3SS_LOG_LEVEL '" << name << "', using warn\n";
      level = spdlog::level::warn;
    }
  }
  spdlog::set_level(level);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw EnvironmentError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw EnvironmentError("failed writing " + path.string());
}

struct SpecFlags {
  std::optional<std::string> config;
  std::optional<std::string> log;
  std::vector<std::string> experts;
  std::vector<std::string> policies;
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> sessions;
  std::optional<std::size_t> k;
  std::optional<double> eta;
  bool eta_theoretical = false;
  std::optional<double> epsilon;
  std::optional<std::string> user_model;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  std::optional<double> eval_fraction;
  bool synthetic = false;
};

void add_spec_flags(CLI::App* cmd, SpecFlags& f) {
  cmd->add_option("--config", f.config, "experiment spec (JSON); flags override it");
  cmd->add_option("--log", f.log, "query log to replay (JSONL or TSV)");
  cmd->add_flag("--synthetic", f.synthetic, "replay the default synthetic log instead of --log");
  cmd->add_option("--experts", f.experts, "adjacency, ngram, external:<command> or artifact .json (repeatable)");
  cmd->add_option("--policy", f.policies, "exp3ss, exp3-fixed or expert-top1:<i> (repeatable)");
  cmd->add_option("--rounds", f.rounds, "rounds per session");
  cmd->add_option("--sessions", f.sessions, "sessions sampled from the log");
  cmd->add_option("--k", f.k, "top-k per expert");
  cmd->add_option("--eta", f.eta, "exploration rate");
  cmd->add_flag("--eta-theoretical", f.eta_theoretical, "use the horizon-tuned exploration rate");
  cmd->add_option("--epsilon", f.epsilon, "score threshold instead of top-k");
  cmd->add_option("--user-model", f.user_model, "advance-on-click or always-advance");
  cmd->add_option("--seed", f.seed, "experiment seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--threads", f.threads, "worker threads");
  cmd->add_option("--eval-fraction", f.eval_fraction, "hold out this fraction of sessions for replay");
}

ExperimentSpec build_spec(const SpecFlags& f) {
  ExperimentSpec s = f.config ? ExperimentSpec::load(*f.config) : ExperimentSpec{};
  if (f.log) {
    s.log = f.log;
    s.synthetic.reset();
  } else if (f.synthetic) {
    s.synthetic = SyntheticConfig{};
    s.log.reset();
  }
  if (!f.experts.empty()) {
    s.experts.clear();
    for (const auto& e : f.experts) s.experts.push_back(ExpertSpec::parse(e));
  }
  if (!f.policies.empty()) s.policies = f.policies;
  if (f.rounds) s.rounds = *f.rounds;
  if (f.sessions) s.sessions = *f.sessions;
  if (f.k) {
    s.k = *f.k;
    s.epsilon.reset();
  }
  if (f.eta) s.eta = *f.eta;
  if (f.eta_theoretical) s.eta_theoretical = true;
  if (f.epsilon) s.epsilon = f.epsilon;
  if (f.user_model) s.user_model = *f.user_model;
  if (f.seed) s.seed = *f.seed;
  if (f.out) s.out = *f.out;
  if (f.threads) s.threads = *f.threads;
  if (f.eval_fraction) s.eval_fraction = f.eval_fraction;
  s.validate();
  return s;
}

void print_summary(std::ostream& out, const ExperimentResult& result, const std::string& prefix = "") {
  for (const auto& p : result.policies) {
    out << prefix << p.label << ": R(T) = " << format_number(p.mean_cumulative_regret.back()) << " +/- "
        << format_number(p.se_cumulative_regret.back()) << ", mean |C_T| = " << format_number(p.growth.mean.back())
        << '\n';
  }
}

void cmd_simulate(const SpecFlags& flags, std::ostream& out) {
  const ExperimentSpec spec = build_spec(flags);
  const auto prepared = prepare_experiment(spec);
  const auto result = run_experiment(prepared.replay_log, spec.policy_list(), prepared.experts,
                                     spec.simulation_config(), *prepared.embedder);
  const std::filesystem::path dir(spec.out);
  std::ostringstream regret;
  regret << kRegretHeader << '\n';
  write_regret_rows(regret, result);
  std::ostringstream candidates;
  candidates << kCandidatesHeader << '\n';
  write_candidate_rows(candidates, result);
  write_text(dir / "regret.csv", regret.str());
  write_text(dir / "candidates.csv", candidates.str());
  write_text(dir / "meta.json", experiment_meta(spec, prepared, result).dump(2) + "\n");
  print_summary(out, result);
  out << "wrote " << (dir / "regret.csv").string() << ", " << (dir / "candidates.csv").string() << ", "
      << (dir / "meta.json").string() << '\n';
}

void cmd_sweep_k(const SpecFlags& flags, const std::vector<std::size_t>& k_values, std::ostream& out) {
  ExperimentSpec spec = build_spec(flags);
  if (spec.epsilon) throw ConfigError("sweep-k needs a top-k rule, not --epsilon");
  if (k_values.empty()) throw ConfigError("sweep-k needs at least one k");
  const auto prepared = prepare_experiment(spec);
  std::ostringstream csv;
  csv << "k," << kRegretHeader << '\n';
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t k : k_values) {
    ExperimentSpec variant = spec;
    variant.k = k;
    variant.validate();
    const auto result = run_experiment(prepared.replay_log, variant.policy_list(), prepared.experts,
                                       variant.simulation_config(), *prepared.embedder);
    write_regret_rows(csv, result, std::to_string(k) + ",");
    auto meta = experiment_meta(variant, prepared, result);
    runs.push_back({{"k", k}, {"effective_eta", meta["effective_eta"]}, {"results", meta["results"]}});
    print_summary(out, result, "k=" + std::to_string(k) + " ");
  }
  const std::filesystem::path dir(spec.out);
  write_text(dir / "sweep.csv", csv.str());
  nlohmann::json meta{{"format", "exp3ss-sweep"}, {"version", 1}, {"spec", spec.to_json()},
                      {"k_values", k_values}, {"runs", runs}};
  nlohmann::json experts = nlohmann::json::array();
  for (const auto& e : prepared.experts) {
    experts.push_back({{"name", e->name()}, {"kind", e->kind()}, {"fingerprint", e->fingerprint()}});
  }
  meta["experts"] = experts;
  write_text(dir / "meta.json", meta.dump(2) + "\n");
  out << "wrote " << (dir / "sweep.csv").string() << ", " << (dir / "meta.json").string() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  configure_logging(err);
  CLI::App app{"EXP3-SS next-query recommendation experiments", "exp3ss"};
  app.require_subcommand(1);

  // generate
  auto* generate = app.add_subcommand("generate", "write a synthetic query log");
  SyntheticConfig synth;
  std::string generate_out;
  generate->add_option("--out", generate_out, "output JSONL")->required();
  generate->add_option("--topics", synth.n_topics);
  generate->add_option("--keywords", synth.keywords_per_topic, "keywords per topic");
  generate->add_option("--sessions", synth.n_sessions);
  generate->add_option("--min-length", synth.min_session_length);
  generate->add_option("--max-length", synth.max_session_length);
  generate->add_option("--drift", synth.drift_probability);
  generate->add_option("--seed", synth.seed);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "normalize a query log into canonical JSONL");
  std::string prepare_in, prepare_out, prepare_format = "auto";
  PreprocessOptions pre;
  bool keep_duplicates = false;
  prepare->add_option("--input", prepare_in)->required();
  prepare->add_option("--output", prepare_out)->required();
  prepare->add_option("--format", prepare_format, "auto, jsonl or tsv");
  prepare->add_flag("--keep-duplicates", keep_duplicates, "do not collapse repeated queries");
  prepare->add_option("--min-length", pre.min_session_length, "shortest session kept");

  // split
  auto* split = app.add_subcommand("split", "split a log into training and replay sessions");
  std::string split_in, train_out, eval_out;
  double eval_fraction = 0.2;
  std::uint64_t split_seed = 0;
  split->add_option("--log", split_in)->required();
  split->add_option("--eval-fraction", eval_fraction);
  split->add_option("--seed", split_seed);
  split->add_option("--train-out", train_out)->required();
  split->add_option("--eval-out", eval_out)->required();

  // train-experts
  auto* train = app.add_subcommand("train-experts", "train experts and save artifacts");
  std::string train_log, train_dir;
  std::vector<std::string> kinds;
  AdjacencyParams adjacency;
  NgramParams ngram;
  train->add_option("--log", train_log)->required();
  train->add_option("--experts", kinds, "adjacency or ngram (repeatable)")->required();
  train->add_option("--out", train_dir, "artifact directory")->required();
  train->add_option("--alpha", adjacency.alpha);
  train->add_option("--n-sim", adjacency.n_sim);
  train->add_option("--order", ngram.order);
  train->add_option("--beam-width", ngram.beam_width);
  train->add_option("--max-len", ngram.max_len);

  auto* simulate = app.add_subcommand("simulate", "replay sessions and write regret curves");
  SpecFlags sim_flags;
  add_spec_flags(simulate, sim_flags);

  auto* sweep = app.add_subcommand("sweep-k", "simulate once per k with paired seeds");
  SpecFlags sweep_flags;
  std::vector<std::size_t> k_values;
  add_spec_flags(sweep, sweep_flags);
  sweep->add_option("--k-values", k_values, "comma-separated k values")->required()->delimiter(',');

  std::vector<char*> argv;
  std::vector<std::string> storage = args;
  if (storage.empty()) storage.push_back("exp3ss");
  for (auto& a : storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "error: " << e.what() << "\n";
    err << "run with --help for usage\n";
    return 2;
  }

  try {
    if (generate->parsed()) {
      synth.validate();
      const auto log = generate_synthetic_log(synth);
      write_jsonl(log, generate_out);
      out << "wrote " << log.sessions.size() << " sessions, " << log.query_count() << " queries to "
          << generate_out << '\n';
    } else if (prepare->parsed()) {
      pre.collapse_duplicates = !keep_duplicates;
      const auto loaded = load_log(prepare_in, parse_log_format(prepare_format), pre);
      std::ostringstream body;
      write_jsonl(loaded.log, body);
      write_text(prepare_out, body.str());
      const auto& st = loaded.stats;
      out << "sessions: " << st.sessions_kept << " kept, " << st.sessions_dropped << " dropped of "
          << st.sessions_read << '\n'
          << "queries: " << st.queries_kept << " kept of " << st.queries_read << " ("
          << st.empty_queries_dropped << " empty, " << st.duplicates_collapsed << " duplicates collapsed)\n";
    } else if (split->parsed()) {
      const auto log = load_log(split_in).log;
      const auto [tr, ev] = split_log(log, eval_fraction, split_seed);
      write_jsonl(tr, train_out);
      write_jsonl(ev, eval_out);
      out << "train: " << tr.sessions.size() << " sessions, eval: " << ev.sessions.size() << " sessions\n";
    } else if (train->parsed()) {
      for (const auto& kind : kinds) {
        if (kind != "adjacency" && kind != "ngram") {
          throw UsageError("unknown expert kind '" + kind + "' (expected adjacency or ngram)");
        }
      }
      const auto log = load_log(train_log).log;
      std::map<std::string, std::size_t> uses;
      for (const auto& kind : kinds) ++uses[kind];
      std::map<std::string, std::size_t> index;
      for (const auto& kind : kinds) {
        const std::string stem = uses[kind] > 1 ? kind + "-" + std::to_string(index[kind]++) : kind;
        const auto path = std::filesystem::path(train_dir) / (stem + ".json");
        std::filesystem::create_directories(train_dir);
        std::string fingerprint;
        if (kind == "adjacency") {
          const auto expert = AdjacencyExpert::train(log, adjacency);
          save_expert(expert, path);
          fingerprint = expert.fingerprint();
        } else {
          const auto expert = NgramExpert::train(log, ngram);
          save_expert(expert, path);
          fingerprint = expert.fingerprint();
        }
        out << kind << ' ' << fingerprint << ' ' << path.string() << '\n';
      }
    } else if (simulate->parsed()) {
      cmd_simulate(sim_flags, out);
    } else if (sweep->parsed()) {
      cmd_sweep_k(sweep_flags, k_values, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}

}  // namespace exp3ss
