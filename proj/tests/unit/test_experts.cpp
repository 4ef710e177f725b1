#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>

#include "exp3ss/errors.hpp"
#include "exp3ss/experts.hpp"
#include "exp3ss/external_expert.hpp"
#include "exp3ss/rng.hpp"
#include "exp3ss/text.hpp"

using namespace exp3ss;

namespace {

QueryLog toy_log(std::initializer_list<std::vector<std::string>> sessions) {
  QueryLog log;
  int i = 0;
  for (const auto& s : sessions) log.sessions.push_back(Session{"t" + std::to_string(i++), s});
  return log;
}

std::vector<std::string> queries_of(const std::vector<ExpertRecommendation>& recs) {
  std::vector<std::string> out;
  for (const auto& r : recs) out.push_back(r.query);
  return out;
}

std::shared_ptr<ScriptedExpert> scripted(std::string name, std::vector<ExpertRecommendation> recs) {
  return std::make_shared<ScriptedExpert>(std::move(name), std::move(recs));
}

const QueryContext kContext({"life insurance"});

}  // namespace

TEST_CASE("query context") {
  QueryContext c({"Life Insurance!"});
  CHECK(c.current() == "life insurance");
  c.push("car   loans");
  CHECK(c.size() == 2);
  CHECK(c.current() == "car loans");
  CHECK_THROWS_AS(QueryContext({}), UsageError);
}

TEST_CASE("scripted expert applies the selection rule") {
  const auto two = scripted("s", {{"q1", 0.9}, {"q2", 0.4}});
  const auto thresholded = two->recommend(kContext, ScoreThreshold{0.5});
  REQUIRE(thresholded.size() == 1);
  CHECK(thresholded[0] == ExpertRecommendation{"q1", 0.9});

  const auto five = scripted("s", {{"c", 0.3}, {"a", 0.9}, {"e", 0.1}, {"b", 0.7}, {"d", 0.2}});
  CHECK(queries_of(five->recommend(kContext, TopK{3})) == std::vector<std::string>{"a", "b", "c"});

  const auto dup = scripted("s", {{"Q one", 0.2}, {"q  ONE!", 0.6}, {"", 1.0}, {"x", 1.7}});
  const auto cleaned = dup->recommend(kContext, TopK{10});
  REQUIRE(cleaned.size() == 2);
  CHECK(cleaned[0] == ExpertRecommendation{"x", 1.0});
  CHECK(cleaned[1] == ExpertRecommendation{"q one", 0.6});
  CHECK_THROWS_AS(five->recommend(kContext, TopK{0}), ConfigError);
}

TEST_CASE("adjacency expert examples") {
  const auto log = toy_log({{"a", "b"}, {"a", "b"}, {"a", "c"}});
  const auto smoothed = AdjacencyExpert::train(log);
  const auto recs = smoothed.recommend(QueryContext({"a"}), TopK{2});
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].query == "b");
  CHECK(recs[1].query == "c");
  CHECK(recs[0].score > recs[1].score);
  // alpha = 0.1: (1.1/3.2) / (2.1/3.2)
  CHECK(recs[1].score == doctest::Approx(1.1 / 2.1));

  const auto exact = AdjacencyExpert::train(log, AdjacencyParams{0.0, 5});
  const auto raw = exact.recommend(QueryContext({"a"}), TopK{5});
  REQUIRE(raw.size() == 2);
  CHECK(raw[0] == ExpertRecommendation{"b", 1.0});
  CHECK(raw[1].score == doctest::Approx(0.5));

  const auto single = AdjacencyExpert::train(toy_log({{"alpha", "beta"}}));
  const auto only = single.recommend(QueryContext({"alpha"}), TopK{3});
  REQUIRE(only.size() == 1);
  CHECK(only[0] == ExpertRecommendation{"beta", 1.0});

  CHECK(single.recommend(QueryContext({"unrelated words"}), TopK{3}).empty());
  CHECK_THROWS_AS(AdjacencyExpert().recommend(kContext, TopK{3}), UsageError);
  CHECK_THROWS_AS(AdjacencyExpert::train(toy_log({{"lonely"}})), DataError);
  CHECK_THROWS_AS(AdjacencyExpert::train(log, AdjacencyParams{-1.0, 5}), ConfigError);
}

TEST_CASE("adjacency expert weights partial matches by Jaccard") {
  const auto log = toy_log({{"life insurance", "life insurance rates"}, {"car insurance", "car loans"}});
  const auto expert = AdjacencyExpert::train(log, AdjacencyParams{0.0, 5});
  const auto recs = expert.recommend(QueryContext({"life insurance quotes"}), TopK{5});
  REQUIRE(recs.size() == 2);
  // J = 2/3 vs 1/4, rescaled by the best.
  CHECK(recs[0] == ExpertRecommendation{"life insurance rates", 1.0});
  CHECK(recs[1].query == "car loans");
  CHECK(recs[1].score == doctest::Approx((1.0 / 4) / (2.0 / 3)));
}

TEST_CASE("adjacency expert reproduces successor frequencies on exact matches") {
  static const char* words[] = {"ka", "lo", "mi", "ne", "ru", "ta"};
  Engine engine(17);
  for (int trial = 0; trial < 40; ++trial) {
    QueryLog log;
    std::size_t transitions = 0;
    while (transitions < 60) {
      Session s{"s", {}};
      const std::size_t len = 2 + uniform_index(engine, 4);
      for (std::size_t i = 0; i < len; ++i) {
        // Sorted word subsets, so distinct texts have distinct token sets.
        std::string q;
        for (std::size_t w = 0; w < 6; ++w) {
          if (uniform_index(engine, 3) == 0) q += std::string(q.empty() ? "" : " ") + words[w];
        }
        if (q.empty()) q = "ka";
        if (!s.queries.empty() && s.queries.back() == q) continue;
        s.queries.push_back(q);
      }
      transitions += s.queries.size() - 1;
      log.sessions.push_back(std::move(s));
    }
    const auto expert = AdjacencyExpert::train(log, AdjacencyParams{0.0, 1});
    // Brute-force recount for one source query.
    const std::string source = log.sessions[0].queries[0];
    std::map<std::string, double> counts;
    for (const auto& s : log.sessions) {
      for (std::size_t i = 1; i < s.queries.size(); ++i) {
        if (s.queries[i - 1] == source) counts[s.queries[i]] += 1.0;
      }
    }
    double top = 0.0;
    for (const auto& [q, c] : counts) top = std::max(top, c);
    const auto recs = expert.recommend(QueryContext({source}), TopK{1000});
    REQUIRE(recs.size() == counts.size());
    for (const auto& r : recs) CHECK(r.score == doctest::Approx(counts.at(r.query) / top));
  }
}

TEST_CASE("n-gram expert examples") {
  const auto repeated = NgramExpert::train(toy_log({{"alpha beta"}, {"alpha beta"}}));
  for (const char* ctx : {"alpha beta", "gamma", "beta alpha"}) {
    const auto recs = repeated.recommend(QueryContext({ctx}), TopK{3});
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].query == "alpha beta");
    CHECK(recs[0].score == doctest::Approx(1.0));
  }

  const auto forked = NgramExpert::train(toy_log({{"a b"}, {"a c"}}), NgramParams{2, 2, 8});
  const auto recs = forked.recommend(QueryContext({"a b"}), TopK{2});
  REQUIRE(recs.size() == 2);
  CHECK(queries_of(recs) == std::vector<std::string>{"a b", "a c"});
  CHECK(recs[0].score == doctest::Approx(recs[1].score));
  // Paths a -> b -> </q> with probabilities 1, 0.5, 1.
  CHECK(recs[0].score == doctest::Approx(std::exp(std::log(0.5) / 3)));

  CHECK_THROWS_AS(NgramExpert::train(QueryLog{}), DataError);
  CHECK_THROWS_AS(NgramExpert::train(repeated.to_json().is_null() ? QueryLog{} : toy_log({{"x"}}),
                                     NgramParams{4, 2, 8}),
                  ConfigError);
  CHECK_THROWS_AS(NgramExpert().recommend(kContext, TopK{1}), UsageError);
}

TEST_CASE("n-gram expert conditions on the context and respects max_len") {
  const auto log = toy_log({{"life cover", "life cover rates"},
                            {"car insurance", "car loans"},
                            {"car insurance", "car loans"}});
  const auto model = NgramExpert::train(log, NgramParams{3, 3, 8});
  const auto after_car = model.recommend(QueryContext({"car insurance"}), TopK{1});
  REQUIRE(after_car.size() == 1);
  CHECK(after_car[0].query == "car loans");
  const auto after_life = model.recommend(QueryContext({"cheap", "life cover"}), TopK{1});
  REQUIRE(after_life.size() == 1);
  CHECK(after_life[0].query == "life cover rates");

  const auto short_model = NgramExpert::train(log, NgramParams{3, 3, 1});
  for (const auto& r : short_model.recommend(QueryContext({"car insurance"}), TopK{3})) {
    CHECK(tokenize_list(r.query).size() == 1);
  }
}

TEST_CASE("n-gram beams are deterministic and survive serialization") {
  const auto log = generate_synthetic_log(SyntheticConfig{5, 10, 60, 3, 6, 0.1, 4});
  const auto a = NgramExpert::train(log);
  const auto b = NgramExpert::train(log);
  CHECK(a.fingerprint() == b.fingerprint());
  const auto c = NgramExpert::from_json(nlohmann::json::parse(a.to_json().dump()));
  CHECK(c.fingerprint() == a.fingerprint());
  for (const auto& s : log.sessions) {
    const QueryContext ctx({s.queries[0]});
    const auto x = a.recommend(ctx, TopK{5});
    CHECK_FALSE(x.empty());
    CHECK(x == b.recommend(ctx, TopK{5}));
    CHECK(x == c.recommend(ctx, TopK{5}));
    CHECK(x == a.recommend(ctx, TopK{5}));
    for (const auto& r : x) {
      CHECK(r.score > 0.0);
      CHECK(r.score <= 1.0);
      CHECK(normalize_query(r.query) == r.query);
    }
  }
}

TEST_CASE("union of expert outputs") {
  const ExpertSet disjoint{scripted("e1", {{"a", 0.9}, {"b", 0.8}, {"c", 0.7}}),
                           scripted("e2", {{"d", 0.9}, {"e", 0.8}, {"f", 0.7}})};
  CHECK(union_candidates(disjoint, kContext, TopK{3}).candidates.size() == 6);

  const ExpertSet shared{scripted("e1", {{"q1", 0.7}}), scripted("e2", {{"q1", 0.9}})};
  const auto merged = union_candidates(shared, kContext, TopK{3}).candidates;
  REQUIRE(merged.size() == 1);
  CHECK(merged[0] == ExpertRecommendation{"q1", 0.9});

  const ExpertSet overlapping{scripted("e1", {{"a", 0.9}, {"b", 0.5}, {"c", 0.4}, {"z", 0.1}}),
                              scripted("e2", {{"b", 0.8}, {"a", 0.6}, {"d", 0.6}, {"y", 0.05}})};
  const auto four = union_candidates(overlapping, kContext, TopK{3}).candidates;
  CHECK(queries_of(four) == std::vector<std::string>{"a", "b", "d", "c"});

  // Ties keep first-expert order.
  const ExpertSet tied{scripted("e1", {{"x", 0.5}}), scripted("e2", {{"w", 0.5}})};
  CHECK(queries_of(union_candidates(tied, kContext, TopK{1}).candidates) ==
        std::vector<std::string>{"x", "w"});
  CHECK_THROWS_AS(union_candidates({}, kContext, TopK{1}), UsageError);
}

TEST_CASE("union size is bounded by k times the number of experts") {
  const auto log = generate_synthetic_log(SyntheticConfig{6, 10, 80, 3, 6, 0.1, 9});
  const ExpertSet experts{std::make_shared<AdjacencyExpert>(AdjacencyExpert::train(log)),
                          std::make_shared<NgramExpert>(NgramExpert::train(log))};
  for (std::size_t k : {1, 2, 3, 5}) {
    for (std::size_t i = 0; i < 30; ++i) {
      const QueryContext ctx({log.sessions[i].queries[0]});
      CHECK(union_candidates(experts, ctx, TopK{k}).candidates.size() <= k * experts.size());
    }
  }
}

TEST_CASE("a failing expert contributes nothing") {
  const ExpertSet experts{
      std::make_shared<ScriptedExpert>(
          "broken", [](const QueryContext&) -> std::vector<ExpertRecommendation> {
            throw ExpertError("offline");
          }),
      scripted("ok", {{"fine", 1.0}})};
  const auto result = union_candidates(experts, kContext, TopK{3});
  CHECK(queries_of(result.candidates) == std::vector<std::string>{"fine"});
  REQUIRE(result.errors.size() == 1);
  CHECK(result.errors[0].find("broken") == 0);
}

TEST_CASE("expert artifacts") {
  const auto dir = std::filesystem::temp_directory_path() / "exp3ss_artifacts_test";
  std::filesystem::create_directories(dir);
  const auto log = generate_synthetic_log(SyntheticConfig{4, 10, 40, 3, 5, 0.1, 2});
  const auto adjacency = AdjacencyExpert::train(log);
  const auto ngram = NgramExpert::train(log);
  save_expert(adjacency, dir / "adj.json");
  save_expert(ngram, dir / "ngram.json");
  const auto a = load_expert(dir / "adj.json");
  const auto n = load_expert(dir / "ngram.json");
  CHECK(a->kind() == "adjacency");
  CHECK(a->fingerprint() == adjacency.fingerprint());
  CHECK(n->fingerprint() == ngram.fingerprint());
  const QueryContext ctx({log.sessions[3].queries[1]});
  CHECK(a->recommend(ctx, TopK{3}) == adjacency.recommend(ctx, TopK{3}));
  CHECK(n->recommend(ctx, TopK{3}) == ngram.recommend(ctx, TopK{3}));

  {
    std::ifstream in(dir / "adj.json");
    auto j = nlohmann::json::parse(in);
    j["model"]["params"]["alpha"] = 0.7;
    std::ofstream out(dir / "tampered.json");
    out << j.dump();
  }
  CHECK_THROWS_AS(load_expert(dir / "tampered.json"), DataError);
  CHECK_THROWS_AS(save_expert(ScriptedExpert("s", std::vector<ExpertRecommendation>{}), dir / "s.json"),
                  UsageError);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------

namespace {

ExternalExpertOptions bridge(const std::string& mode) {
  ExternalExpertOptions options;
  options.command = {FAKE_BRIDGE_PATH, mode};
  options.name = "fake-" + mode;
  options.request_timeout = std::chrono::milliseconds(300);
  options.startup_timeout = std::chrono::milliseconds(2000);
  return options;
}

}  // namespace

TEST_CASE("external expert round trip") {
  ExternalExpert expert(bridge("echo"));
  CHECK(expert.kind() == "external");
  const auto recs = expert.recommend(QueryContext({"life insurance", "car loans"}), TopK{3});
  REQUIRE(recs.size() == 2);
  CHECK(recs[0] == ExpertRecommendation{"car loans", 1.0});
  CHECK(recs[1] == ExpertRecommendation{"more car loans", 0.5});
  CHECK(expert.recommend(kContext, TopK{1}).size() == 1);
  CHECK(expert.recommend(kContext, ScoreThreshold{0.8}).size() == 1);
  CHECK(expert.restarts() == 0);
}

TEST_CASE("external expert failures are expert errors") {
  for (const char* mode : {"garbage", "slow", "error", "mismatch"}) {
    CAPTURE(mode);
    ExternalExpert expert(bridge(mode));
    CHECK_THROWS_AS(expert.recommend(kContext, TopK{3}), ExpertError);
    const ExpertSet set{std::make_shared<ExternalExpert>(bridge(mode)), scripted("ok", {{"fine", 1.0}})};
    const auto result = union_candidates(set, kContext, TopK{3});
    CHECK(result.candidates.size() == 1);
    CHECK(result.errors.size() == 1);
  }
  auto noready = bridge("noready");
  noready.startup_timeout = std::chrono::milliseconds(200);
  CHECK_THROWS_AS(ExternalExpert{noready}, ExpertError);
  auto missing = bridge("echo");
  missing.command = {"/nonexistent/bridge"};
  CHECK_THROWS_AS(ExternalExpert{missing}, ExpertError);
}

TEST_CASE("external expert restarts after a timeout") {
  ExternalExpert expert(bridge("flaky"));
  CHECK_THROWS_AS(expert.recommend(kContext, TopK{3}), ExpertError);
  // The respawned child starts over, so its first request stalls again.
  CHECK_THROWS_AS(expert.recommend(kContext, TopK{3}), ExpertError);
  CHECK(expert.restarts() == 1);
}
