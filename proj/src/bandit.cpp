#include "exp3ss/bandit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include "exp3ss/errors.hpp"

namespace exp3ss {

namespace {

double log_sum_exp(std::span<const double> logs) {
  if (logs.empty()) return -std::numeric_limits<double>::infinity();
  const double peak = *std::max_element(logs.begin(), logs.end());
  double sum = 0.0;
  for (double v : logs) sum += std::exp(v - peak);
  return peak + std::log(sum);
}

void mix_probabilities(std::span<const double> log_weights, double eta, std::vector<double>& out) {
  const double lse = log_sum_exp(log_weights);
  const double floor = eta / static_cast<double>(log_weights.size());
  out.resize(log_weights.size());
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    out[i] = (1.0 - eta) * std::exp(log_weights[i] - lse) + floor;
  }
}

double clip_reward(double reward) {
  if (std::isnan(reward)) throw UsageError("reward is NaN");
  return std::clamp(reward, 0.0, 1.0);
}

void check_eta(double eta) {
  if (!(eta > 0.0 && eta < 1.0)) {
    throw ConfigError("eta must lie in the open interval (0, 1), got " + format_exact(eta));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

ArmId ArmRegistry::intern(std::string_view normalized_text) {
  if (auto found = find(normalized_text)) return *found;
  const ArmId id{static_cast<std::uint32_t>(texts_.size())};
  texts_.emplace_back(normalized_text);
  ids_.emplace(texts_.back(), id);
  return id;
}

std::optional<ArmId> ArmRegistry::find(std::string_view normalized_text) const {
  if (auto it = ids_.find(std::string(normalized_text)); it != ids_.end()) return it->second;
  return std::nullopt;
}

const std::string& ArmRegistry::text(ArmId id) const {
  if (id.value >= texts_.size()) throw UsageError("unknown arm id " + std::to_string(id.value));
  return texts_[id.value];
}

// ---------------------------------------------------------------------------

void validate(const SelectionRule& rule) {
  if (const auto* top = std::get_if<TopK>(&rule)) {
    if (top->k < 1) throw ConfigError("top-k requires k >= 1");
  } else {
    const double eps = std::get<ScoreThreshold>(rule).epsilon;
    if (!(eps >= 0.0 && eps <= 1.0)) throw ConfigError("score threshold must lie in [0, 1]");
  }
}

std::string to_string(const SelectionRule& rule) {
  if (const auto* top = std::get_if<TopK>(&rule)) return "top_k:" + std::to_string(top->k);
  return "score_threshold:" + format_exact(std::get<ScoreThreshold>(rule).epsilon);
}

void BanditConfig::validate() const {
  check_eta(eta);
  exp3ss::validate(selection_rule);
}

double theoretical_eta(std::int64_t horizon, std::int64_t candidate_cap) {
  if (horizon <= 0 || candidate_cap <= 0) {
    throw ConfigError("theoretical eta needs a positive horizon and candidate cap");
  }
  const double eta =
      1.0 / std::sqrt(static_cast<double>(horizon) * static_cast<double>(candidate_cap));
  return std::min(eta, kMaxEta);
}

// ---------------------------------------------------------------------------

Exp3SS::Exp3SS(const BanditConfig& config) : config_(config), engine_(config.rng_seed) {
  config_.validate();
}

std::size_t Exp3SS::position(ArmId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw UsageError("arm " + std::to_string(id.value) + " is not a candidate");
  return it->second;
}

void Exp3SS::require_round_open(const char* what) const {
  if (phase_ == Phase::kAwaitingCandidates) {
    throw UsageError(std::string(what) + " called before ingest_candidates this round");
  }
}

void Exp3SS::ingest_candidates(std::span<const ArmId> proposals) {
  if (phase_ != Phase::kAwaitingCandidates) {
    throw UsageError("ingest_candidates called twice in one round");
  }
  for (ArmId id : proposals) {
    if (id.value >= registry_.size()) throw UsageError("proposal uses an unregistered arm");
  }
  const double eta = config_.eta;
  const double log_ratio = std::log(eta / (1.0 - eta));

  if (round_ == 0) {
    for (ArmId id : proposals) {
      if (index_.emplace(id, candidates_.size()).second) candidates_.push_back(id);
    }
    if (candidates_.empty()) {
      throw EnvironmentError("no expert proposed a candidate in the first round");
    }
    log_weight_.assign(candidates_.size(),
                       log_ratio - std::log(static_cast<double>(candidates_.size())));
    new_last_round_ = candidates_.size();
  } else {
    const std::size_t carried = candidates_.size();
    const double carried_mass = log_sum_exp(log_carried_);
    for (ArmId id : proposals) {
      if (index_.emplace(id, candidates_.size()).second) candidates_.push_back(id);
    }
    const std::size_t added = candidates_.size() - carried;
    log_weight_ = log_carried_;
    if (added > 0) {
      const double log_new = log_ratio + carried_mass - std::log(static_cast<double>(added));
      log_weight_.resize(candidates_.size(), log_new);
    }
    new_last_round_ = added;
  }
  ++round_;
  phase_ = Phase::kIngested;
}

std::span<const double> Exp3SS::compute_probabilities() {
  require_round_open("compute_probabilities");
  if (phase_ == Phase::kIngested) {
    mix_probabilities(log_weight_, config_.eta, probabilities_);
    phase_ = Phase::kProbabilitiesReady;
  }
  return probabilities_;
}

ArmId Exp3SS::select_arm() {
  compute_probabilities();
  return candidates_[sample_categorical(engine_, probabilities_)];
}

StepOutcome Exp3SS::preview(ArmId chosen, double reward) const {
  require_round_open("preview");
  const std::size_t i = position(chosen);
  std::vector<double> p;
  std::span<const double> probs = probabilities_;
  if (phase_ != Phase::kProbabilitiesReady) {
    mix_probabilities(log_weight_, config_.eta, p);
    probs = p;
  }
  StepOutcome outcome;
  outcome.chosen = chosen;
  outcome.probability = probs[i];
  outcome.reward = clip_reward(reward);
  outcome.pseudo_reward = outcome.reward / outcome.probability;
  return outcome;
}

StepOutcome Exp3SS::update(ArmId chosen, double reward) {
  compute_probabilities();
  const StepOutcome outcome = preview(chosen, reward);
  log_carried_ = log_weight_;
  log_carried_[position(chosen)] += config_.eta * outcome.pseudo_reward;
  if (config_.renormalize) {
    const double lse = log_sum_exp(log_carried_);
    for (double& v : log_carried_) v -= lse;
  }
  phase_ = Phase::kAwaitingCandidates;
  return outcome;
}

std::vector<double> Exp3SS::weights() const {
  std::vector<double> out(log_weight_.size());
  std::transform(log_weight_.begin(), log_weight_.end(), out.begin(),
                 [](double v) { return std::exp(v); });
  return out;
}

std::vector<double> Exp3SS::carried_weights() const {
  std::vector<double> out(log_carried_.size());
  std::transform(log_carried_.begin(), log_carried_.end(), out.begin(),
                 [](double v) { return std::exp(v); });
  return out;
}

void Exp3SS::rescale(double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw UsageError("rescale factor must be positive");
  const double shift = std::log(factor);
  for (double& v : log_weight_) v += shift;
  for (double& v : log_carried_) v += shift;
  if (phase_ == Phase::kProbabilitiesReady) phase_ = Phase::kIngested;
}

namespace {

nlohmann::json exact_array(std::span<const double> values) {
  auto out = nlohmann::json::array();
  for (double v : values) out.push_back(format_exact(v));
  return out;
}

std::vector<double> parse_exact_array(const nlohmann::json& j) {
  std::vector<double> out;
  for (const auto& v : j) out.push_back(parse_exact(v.get<std::string>()));
  return out;
}

}  // namespace

nlohmann::json Exp3SS::to_json() const {
  nlohmann::json j;
  j["format"] = "exp3ss-state";
  j["version"] = 1;
  j["eta"] = format_exact(config_.eta);
  j["renormalize"] = config_.renormalize;
  j["rng_seed"] = config_.rng_seed;
  if (const auto* top = std::get_if<TopK>(&config_.selection_rule)) {
    j["selection_rule"] = {{"kind", "top_k"}, {"k", top->k}};
  } else {
    j["selection_rule"] = {
        {"kind", "score_threshold"},
        {"epsilon", format_exact(std::get<ScoreThreshold>(config_.selection_rule).epsilon)}};
  }
  j["round"] = round_;
  j["phase"] = phase_ == Phase::kAwaitingCandidates ? "awaiting_candidates" : "ingested";
  auto arms = nlohmann::json::array();
  for (std::uint32_t i = 0; i < registry_.size(); ++i) arms.push_back(registry_.text(ArmId{i}));
  j["arms"] = std::move(arms);
  auto candidates = nlohmann::json::array();
  for (ArmId id : candidates_) candidates.push_back(id.value);
  j["candidates"] = std::move(candidates);
  j["log_weights"] = exact_array(log_weight_);
  j["log_carried_weights"] = exact_array(log_carried_);
  j["new_arms_last_round"] = new_last_round_;
  j["rng_state"] = save_engine(engine_);
  return j;
}

Exp3SS Exp3SS::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "exp3ss-state" || j.at("version").get<int>() != 1) {
      throw DataError("unsupported bandit state format");
    }
    BanditConfig config;
    config.eta = parse_exact(j.at("eta").get<std::string>());
    config.renormalize = j.at("renormalize").get<bool>();
    config.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    const auto& rule = j.at("selection_rule");
    if (rule.at("kind") == "top_k") {
      config.selection_rule = TopK{rule.at("k").get<std::size_t>()};
    } else {
      config.selection_rule = ScoreThreshold{parse_exact(rule.at("epsilon").get<std::string>())};
    }
    Exp3SS state(config);
    for (const auto& text : j.at("arms")) state.registry_.intern(text.get<std::string>());
    for (const auto& id : j.at("candidates")) {
      const ArmId arm{id.get<std::uint32_t>()};
      if (arm.value >= state.registry_.size()) throw DataError("candidate refers to unknown arm");
      state.index_.emplace(arm, state.candidates_.size());
      state.candidates_.push_back(arm);
    }
    state.round_ = j.at("round").get<std::size_t>();
    state.phase_ = j.at("phase") == "ingested" ? Phase::kIngested : Phase::kAwaitingCandidates;
    state.log_weight_ = parse_exact_array(j.at("log_weights"));
    state.log_carried_ = parse_exact_array(j.at("log_carried_weights"));
    state.new_last_round_ = j.at("new_arms_last_round").get<std::size_t>();
    state.engine_ = load_engine(j.at("rng_state").get<std::string>());
    if (state.log_weight_.size() != state.candidates_.size() ||
        (state.round_ > 0 && state.log_carried_.size() != state.candidates_.size() &&
         state.phase_ == Phase::kAwaitingCandidates)) {
      throw DataError("weight vectors do not match the candidate set");
    }
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed bandit state: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

Exp3::Exp3(std::vector<ArmId> arms, double eta, std::uint64_t rng_seed, bool renormalize)
    : arms_(std::move(arms)), eta_(eta), renormalize_(renormalize), engine_(rng_seed) {
  check_eta(eta_);
  if (arms_.empty()) throw EnvironmentError("EXP3 needs at least one arm");
  for (std::size_t i = 0; i < arms_.size(); ++i) {
    if (!index_.emplace(arms_[i], i).second) throw UsageError("duplicate arm in fixed arm set");
  }
  log_weight_.assign(arms_.size(), 0.0);
}

std::span<const double> Exp3::compute_probabilities() {
  mix_probabilities(log_weight_, eta_, probabilities_);
  return probabilities_;
}

ArmId Exp3::select_arm() {
  compute_probabilities();
  return arms_[sample_categorical(engine_, probabilities_)];
}

StepOutcome Exp3::update(ArmId chosen, double reward) {
  auto it = index_.find(chosen);
  if (it == index_.end()) throw UsageError("arm is not part of the fixed arm set");
  compute_probabilities();
  StepOutcome outcome;
  outcome.chosen = chosen;
  outcome.probability = probabilities_[it->second];
  outcome.reward = clip_reward(reward);
  outcome.pseudo_reward = outcome.reward / outcome.probability;
  log_weight_[it->second] += eta_ * outcome.pseudo_reward;
  if (renormalize_) {
    const double lse = log_sum_exp(log_weight_);
    for (double& v : log_weight_) v -= lse;
  }
  return outcome;
}

std::vector<StepOutcome> run_exp3_fixed(std::span<const ArmId> arms, double eta,
                                        const RewardFeed& reward_feed, std::size_t horizon,
                                        std::uint64_t rng_seed) {
  Exp3 bandit(std::vector<ArmId>(arms.begin(), arms.end()), eta, rng_seed);
  std::vector<StepOutcome> outcomes;
  outcomes.reserve(horizon);
  for (std::size_t t = 1; t <= horizon; ++t) {
    const ArmId played = bandit.select_arm();
    outcomes.push_back(bandit.update(played, reward_feed(t, played)));
  }
  return outcomes;
}

// ---------------------------------------------------------------------------

std::string format_exact(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
  return std::string(buf, end);
}

double parse_exact(const std::string& text) {
  double value = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw DataError("malformed decimal '" + text + "'");
  }
  return value;
}

}  // namespace exp3ss
