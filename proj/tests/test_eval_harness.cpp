// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>

#include "prime/error.hpp"
#include "prime/eval_harness.hpp"
#include "prime/seed.hpp"
#include "providers.hpp"
#include "synthetic.hpp"

namespace fs = std::filesystem;
using namespace prime;
namespace pt = prime::testing;

namespace {

RankedPrediction prediction_with_gold_at(std::size_t rank) {
  RankedPrediction p;
  p.parse_status = ParseStatus::ok;
  const std::vector<std::string> fillers = {"option X", "option Y", "option Z"};
  for (std::size_t pos = 1, f = 0; pos <= 3; ++pos) p.option_ids.push_back(pos == rank ? "gold" : fillers[f++]);
  return p;
}

// Enumerates positions of the ranked list instead of using the closed form.
Scores brute_force(const RankedPrediction& p, const std::string& gold) {
  Scores s;
  for (std::size_t i = 0; i < p.option_ids.size() && i < 3; ++i) {
    const double rel = p.option_ids[i] == gold ? 1.0 : 0.0;
    if (i == 0) s.hit1 += rel;
    s.hit3 += rel;
    s.dcg3 += rel / std::log2(static_cast<double>(i) + 2.0);
    if (rel > 0 && s.rr == 0) s.rr = 1.0 / static_cast<double>(i + 1);
  }
  return s;
}

struct Fixture {
  pt::SyntheticCorpus corpus;
  EpisodicStore store;
  fs::path registry_dir;
  std::unique_ptr<AdapterRegistry> registry;
  std::map<std::string, ProfileSummary> summaries;
  MemoryResources resources() const { return {&store, registry.get(), &summaries}; }
};

BaseManifest tiny_manifest() {
  BaseManifest m;
  m.weights["layers.0.q_proj"] = {4, 4};
  return m;
}

Fixture make_fixture(bool with_adapters = true) {
  Fixture f;
  f.corpus = pt::build_synthetic_corpus({});
  f.store = EpisodicStore::build(f.corpus.history);
  f.registry_dir = fs::temp_directory_path() / "prime_eval_registry";
  fs::remove_all(f.registry_dir);
  f.registry = std::make_unique<AdapterRegistry>(f.registry_dir, tiny_manifest());
  for (const auto& u : f.corpus.users) {
    if (with_adapters) f.registry->register_adapter(init_adapter(u, Objective::T_FT, tiny_manifest(), 2, 16, 1));
    f.summaries[u] = ProfileSummary{u, "summary of " + u, SummaryMethod::PKR, 0};
  }
  return f;
}

EvalConfig config_for(EvalMode mode, std::size_t runs = 2) {
  EvalConfig c;
  c.mode = mode;
  c.runs = runs;
  c.parallelism = 3;
  c.master_seed = 17;
  return c;
}

}  // namespace

TEST(Metrics, MatchBruteForceForEachGoldRank) {
  const struct {
    std::size_t rank;
    double hit1, hit3, dcg3, rr;
  } expected[] = {{1, 1, 1, 1, 1}, {2, 0, 1, 0.6309, 0.5}, {3, 0, 1, 0.5, 0.3333}, {0, 0, 0, 0, 0}};
  for (const auto& e : expected) {
    const auto p = prediction_with_gold_at(e.rank);
    const auto s = score_prediction(p, "gold");
    const auto b = brute_force(p, "gold");
    EXPECT_DOUBLE_EQ(s.hit1, b.hit1);
    EXPECT_DOUBLE_EQ(s.hit3, b.hit3);
    EXPECT_NEAR(s.dcg3, b.dcg3, 1e-12);
    EXPECT_NEAR(s.rr, b.rr, 1e-12);
    EXPECT_EQ(s.hit1, e.hit1);
    EXPECT_EQ(s.hit3, e.hit3);
    EXPECT_NEAR(s.dcg3, e.dcg3, 1e-4);
    EXPECT_NEAR(s.rr, e.rr, 1e-4);
  }
  auto failed = prediction_with_gold_at(1);
  failed.parse_status = ParseStatus::failed;
  EXPECT_EQ(score_prediction(failed, "gold").hit1, 0.0);
}

TEST(Sampling, GoldPositionIsUniform) {
  EvalQuery q;
  q.query_id = "q";
  q.positive.reply_id = "gold";
  for (int i = 0; i < 15; ++i) {
    Conversation n;
    n.reply_id = "n" + std::to_string(i);
    q.negative_pool.push_back(n);
  }
  const int trials = 20000;
  std::vector<int> counts(10, 0);
  for (int t = 0; t < trials; ++t) {
    auto set = sample_candidates(q, 9, run_seed("q", static_cast<std::size_t>(t), 3));
    ASSERT_EQ(set.candidates.size(), 10u);
    ++counts[static_cast<std::size_t>(set.gold_label.back() - 'A')];
  }
  double chi2 = 0;
  const double expect = trials / 10.0;
  for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
  EXPECT_LT(chi2, 27.88);  // 9 degrees of freedom, p = 0.001
}

TEST(Sampling, DistinctNegativesLabelsAndFullPool) {
  EvalQuery q;
  q.positive.reply_id = "gold";
  for (int i = 0; i < 30; ++i) {
    Conversation n;
    n.reply_id = "n" + std::to_string(i);
    q.negative_pool.push_back(n);
  }
  auto set = sample_candidates(q, 9, 5);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < set.candidates.size(); ++i) {
    EXPECT_EQ(set.candidates[i].label, option_label(i));
    ids.insert(set.candidates[i].reply_id);
  }
  EXPECT_EQ(ids.size(), 10u);
  EXPECT_TRUE(ids.count("gold"));
  EXPECT_EQ(sample_candidates(q, 9, 5, true).candidates.size(), 26u);
  q.negative_pool.resize(4);
  EXPECT_EQ(sample_candidates(q, 9, 5).candidates.size(), 5u);
  EXPECT_EQ(sample_candidates(q, 9, 5).gold_label, sample_candidates(q, 9, 5).gold_label);
}

TEST(Modes, ParseAliasesAndValidation) {
  EXPECT_EQ(parse_mode("non-p"), EvalMode::non_personalized);
  EXPECT_EQ(parse_mode("EM"), EvalMode::em_only);
  EXPECT_EQ(parse_mode("PRIME"), EvalMode::prime);
  EXPECT_THROW(parse_mode("bogus"), ConfigError);
  auto c = config_for(EvalMode::sm_only);
  c.tsa = true;
  EXPECT_THROW(c.validate(), ConfigError);
  c = config_for(EvalMode::em_only);
  c.parse_retries = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Compose, EachModeReadsTheRightMemory) {
  auto f = make_fixture();
  const auto& q = f.corpus.queries.front();
  const auto set = sample_candidates(q, 9, 1);
  auto compose = [&](EvalMode m, SemanticForm form = SemanticForm::parametric, bool tsa = false) {
    auto c = config_for(m);
    c.semantic_form = form;
    c.tsa = tsa;
    return compose_request(c, q, set, f.resources());
  };
  const std::string past = "[Past conversation 1]";
  const std::string summary = "summary of " + q.author;

  auto np = compose(EvalMode::non_personalized);
  EXPECT_FALSE(np.request.adapter);
  EXPECT_EQ(np.request.user_text.find(past), std::string::npos);
  EXPECT_FALSE(np.thinking);
  EXPECT_EQ(np.request.max_tokens, 512);

  auto em = compose(EvalMode::em_only);
  EXPECT_FALSE(em.request.adapter);
  EXPECT_NE(em.request.user_text.find(past), std::string::npos);
  EXPECT_EQ(em.memory.items.size(), 3u);

  auto sm = compose(EvalMode::sm_only);
  EXPECT_EQ(*sm.request.adapter, q.author + "/T-FT");
  EXPECT_EQ(sm.request.user_text.find(past), std::string::npos);

  auto sm_text = compose(EvalMode::sm_only, SemanticForm::textual);
  EXPECT_FALSE(sm_text.request.adapter);
  EXPECT_NE(sm_text.request.user_text.find(summary), std::string::npos);

  auto dual = compose(EvalMode::dual);
  EXPECT_TRUE(dual.request.adapter);
  EXPECT_NE(dual.request.user_text.find(past), std::string::npos);
  EXPECT_FALSE(dual.thinking);

  auto pr = compose(EvalMode::prime);
  EXPECT_TRUE(pr.thinking);
  EXPECT_TRUE(pr.request.adapter);
  EXPECT_NE(pr.request.user_text.find("<sketch outline>"), std::string::npos);
  EXPECT_NE(pr.request.user_text.find(past), std::string::npos);
  EXPECT_EQ(pr.request.max_tokens, 2048);

  auto trainfree = compose(EvalMode::em_think_trainfree);
  EXPECT_TRUE(trainfree.thinking);
  EXPECT_FALSE(trainfree.request.adapter);

  auto tsa = compose(EvalMode::em_only, SemanticForm::parametric, true);
  EXPECT_NE(tsa.request.user_text.find(summary), std::string::npos);
  EXPECT_LT(tsa.request.user_text.find(summary), tsa.request.user_text.find(past));
}

TEST(Compose, MemoryUserOverridesWhoseMemoryIsRead) {
  auto f = make_fixture();
  const auto& q = f.corpus.queries.front();
  std::string other;
  for (const auto& u : f.corpus.users)
    if (u != q.author) other = u;
  auto c = config_for(EvalMode::dual);
  auto r = compose_request(c, q, sample_candidates(q, 9, 1), f.resources(), other);
  EXPECT_EQ(*r.request.adapter, other + "/T-FT");
  for (const auto& item : r.memory.items) EXPECT_EQ(item.op_author, other);
  EXPECT_NE(r.request.user_text.find("The author, " + q.author + ","), std::string::npos);
}

TEST(Compose, MissingResourcesNameTheUser) {
  auto f = make_fixture(false);
  const auto& q = f.corpus.queries.front();
  const auto set = sample_candidates(q, 9, 1);
  try {
    compose_request(config_for(EvalMode::sm_only), q, set, f.resources());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(q.author), std::string::npos);
  }
  EXPECT_THROW(compose_request(config_for(EvalMode::em_only), q, set, MemoryResources{}), ConfigError);
  EXPECT_THROW(compose_request(config_for(EvalMode::em_only), q, set, f.resources(), std::string("stranger")),
               ConfigError);
  auto textual = config_for(EvalMode::sm_only);
  textual.semantic_form = SemanticForm::textual;
  EXPECT_THROW(compose_request(textual, q, set, MemoryResources{&f.store, nullptr, nullptr}), ConfigError);
}

TEST(Suite, GoldAtRankTwoGivesFixedAggregates) {
  auto f = make_fixture();
  for (std::size_t runs : {1u, 3u, 7u}) {
    for (auto mode : {EvalMode::non_personalized, EvalMode::prime}) {
      auto provider = pt::gold_rank_provider(2);
      auto c = config_for(mode, runs);
      auto report = run_suite(c, f.corpus.queries, *provider, f.resources());
      EXPECT_EQ(report.items.size(), f.corpus.queries.size() * runs);
      EXPECT_NEAR(report.overall.hit1, 0.0, 1e-9);
      EXPECT_NEAR(report.overall.hit3, 100.0, 1e-9);
      EXPECT_NEAR(report.overall.dcg3, 63.09, 0.01);
      EXPECT_NEAR(report.overall.mrr, 50.0, 1e-9);
      EXPECT_NEAR(report.overall.avg, 53.27, 0.01);
      EXPECT_EQ(report.per_run.size(), runs);
    }
  }
}

TEST(Suite, OutputIsIndependentOfParallelism) {
  auto f = make_fixture();
  auto provider = std::make_shared<FunctionProvider>([](const CompletionRequest& req) {
    const auto offered = pt::parse_offered(req.user_text);
    SeededRng rng(static_cast<std::uint64_t>(req.seed.value_or(0)));
    Completion c;
    c.text = pt::answer_text({offered[rng.below(offered.size())].label});
    return c;
  });
  auto c = config_for(EvalMode::em_only, 4);
  c.parallelism = 1;
  auto serial = run_suite(c, f.corpus.queries, *provider, f.resources());
  c.parallelism = 6;
  auto parallel = run_suite(c, f.corpus.queries, *provider, f.resources());
  auto dump = [](const RunReport& r) {
    std::string s = r.to_json().dump();
    for (const auto& it : r.items) s += it.to_json().dump();
    return s;
  };
  EXPECT_EQ(dump(serial), dump(parallel));
}

TEST(Suite, RunSeedsVaryNegativesAndDecodingUnlessDisabled) {
  auto f = make_fixture();
  std::mutex mu;
  std::set<std::int64_t> seeds;
  auto provider = std::make_shared<FunctionProvider>([&](const CompletionRequest& req) {
    std::lock_guard lock(mu);
    seeds.insert(*req.seed);
    return Completion{"[\"option A\"]#END"};
  });
  std::vector<EvalQuery> one = {f.corpus.queries.front()};
  auto c = config_for(EvalMode::non_personalized, 5);
  auto varied = run_suite(c, one, *provider, f.resources());
  EXPECT_EQ(seeds.size(), 5u);
  c.vary_decoding = false;
  c.vary_negatives = false;
  seeds.clear();
  auto fixed = run_suite(c, one, *provider, f.resources());
  EXPECT_EQ(seeds.size(), 1u);
  for (const auto& it : fixed.items) EXPECT_EQ(it.offered_reply_ids, fixed.items[0].offered_reply_ids);
}

TEST(Suite, ParseRetriesProviderErrorsAndDryRun) {
  auto f = make_fixture();
  std::vector<EvalQuery> one = {f.corpus.queries.front()};
  std::atomic<int> calls{0};
  auto flaky = std::make_shared<FunctionProvider>([&](const CompletionRequest& req) {
    Completion c;
    c.text = ++calls % 2 == 1 ? "I refuse." : pt::answer_text({pt::marked_gold(req.user_text)});
    return c;
  });
  auto c = config_for(EvalMode::non_personalized, 2);
  c.parallelism = 1;
  auto no_retry = run_suite(c, one, *flaky, f.resources());
  EXPECT_EQ(no_retry.parse_failures, 1u);
  calls = 0;
  c.parse_retries = 1;
  auto retried = run_suite(c, one, *flaky, f.resources());
  EXPECT_EQ(calls.load(), 4);
  EXPECT_EQ(retried.parse_failures, 0u);
  EXPECT_NEAR(retried.overall.hit1, 100.0, 1e-9);

  auto broken = std::make_shared<FunctionProvider>([](const CompletionRequest&) {
    Completion c;
    c.finish_reason = FinishReason::error;
    c.error = "down";
    return c;
  });
  auto errs = run_suite(c, one, *broken, f.resources());
  EXPECT_EQ(errs.provider_errors, 2u);
  EXPECT_EQ(errs.overall.avg, 0.0);
  EXPECT_TRUE(errs.items[0].provider_error);

  auto counting = CountingProvider(broken);
  c.dry_run = true;
  auto dry = run_suite(c, one, counting, f.resources());
  EXPECT_EQ(counting.calls(), 0u);
  ASSERT_TRUE(dry.items[0].prompt);
  EXPECT_EQ(dry.items[0].finish_reason, "dry_run");
}

TEST(Suite, ConfigErrorsSurfaceBeforeAnyCall) {
  auto f = make_fixture(false);
  CountingProvider counting(pt::gold_rank_provider(1));
  EXPECT_THROW(run_suite(config_for(EvalMode::prime), f.corpus.queries, counting, f.resources()), ConfigError);
  EXPECT_EQ(counting.calls(), 0u);
}

TEST(Report, TableAndFilesAreWritten) {
  auto f = make_fixture();
  auto provider = pt::gold_rank_provider(1);
  auto report = run_suite(config_for(EvalMode::non_personalized), f.corpus.queries, *provider, f.resources());
  report.label = "Non-P";
  const auto dir = fs::temp_directory_path() / "prime_eval_report";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_report(dir, report);
  auto j = Json::parse(read_file(dir / "report.json"));
  EXPECT_EQ(j["overall"]["hit1"], 100.0);
  EXPECT_EQ(j["queries"], f.corpus.queries.size());
  EXPECT_EQ(read_jsonl(dir / "items.jsonl").size(), report.items.size());
  const auto table = read_file(dir / "table.txt");
  EXPECT_NE(table.find("Hit@1"), std::string::npos);
  EXPECT_NE(table.find("Non-P"), std::string::npos);
  EXPECT_NE(table.find("100.00"), std::string::npos);
  auto a = Aggregates::from_json(j["overall"]);
  EXPECT_EQ(a.avg, 100.0);
}
