// SPDX-License-Identifier: Apache-2.0
#include "prime/difficulty_filter.hpp"

#include <cmath>
#include <set>

#include "prime/error.hpp"
#include "prime/eval_harness.hpp"
#include "prime/parallel.hpp"
#include "prime/prompts.hpp"
#include "prime/seed.hpp"

namespace prime {

Json DifficultyOptions::to_json() const {
  Json j;
  j["runs"] = runs;
  j["max_hit1"] = max_hit1;
  j["max_hit3"] = max_hit3;
  j["negatives"] = negatives;
  j["max_tokens"] = max_tokens;
  j["temperature"] = temperature;
  j["master_seed"] = master_seed;
  j["vary_negatives"] = vary_negatives;
  j["vary_decoding"] = vary_decoding;
  return j;
}

Json DifficultyReport::to_json() const {
  Json j;
  j["options"] = options.to_json();
  j["judges"] = judge_names;
  j["queries_in"] = verdicts.size();
  j["queries_retained"] = verdicts.size() - removed_queries.size();
  j["queries_removed"] = removed_queries.size();
  j["provider_failures"] = provider_failures;
  j["removed_queries"] = removed_queries;
  j["removed_authors"] = removed_authors;
  Json rows = Json::array();
  for (const auto& v : verdicts) {
    Json jr = Json::array();
    for (const auto& o : v.judges)
      jr.push_back({{"judge", o.judge}, {"hit1", o.hit1}, {"hit3", o.hit3}, {"provider_failures", o.provider_failures}});
    rows.push_back({{"query_id", v.query_id}, {"author", v.author}, {"retained", v.retained}, {"judges", jr}});
  }
  j["verdicts"] = std::move(rows);
  return j;
}

namespace {

bool within(std::size_t hits, std::size_t runs, double max_fraction) {
  return static_cast<double>(hits) <= max_fraction * static_cast<double>(runs) + 1e-9;
}

}  // namespace

DifficultyResult difficulty_filter(const std::vector<EvalQuery>& queries, const std::vector<Judge>& judges,
                                   const DifficultyOptions& options) {
  if (options.runs < 1) throw ConfigError("difficulty filter runs must be >= 1");
  if (options.negatives < 1) throw ConfigError("difficulty filter negatives must be >= 1");
  if (judges.empty()) throw ConfigError("difficulty filter needs at least one judge");
  for (const auto& j : judges)
    if (!j.provider) throw ConfigError("judge " + j.name + " has no provider");

  const std::size_t runs = options.runs;
  const std::size_t per_query = judges.size() * runs;
  struct Outcome {
    bool hit1 = false;
    bool hit3 = false;
    bool failed = false;
  };
  std::vector<Outcome> outcomes(queries.size() * per_query);

  parallel_for(outcomes.size(), options.parallelism, [&](std::size_t i) {
    const auto& q = queries[i / per_query];
    const std::size_t judge = (i % per_query) / runs;
    const std::size_t run = i % runs;
    const auto seed = derive_seed("difficulty", q.query_id, static_cast<std::uint64_t>(run), options.master_seed);
    const auto base = derive_seed("difficulty", q.query_id, std::uint64_t{0}, options.master_seed);
    const auto set = sample_candidates(q, options.negatives, options.vary_negatives ? seed : base);
    CompletionRequest req;
    req.user_text = render_eval_prompt({q.author, q.op_title, q.op_body}, set.candidates);
    req.max_tokens = options.max_tokens;
    req.temperature = options.temperature;
    req.seed = static_cast<std::int64_t>((options.vary_decoding ? seed : base) >> 33);
    const Completion c = judges[judge].provider->complete(req);
    if (!c.ok()) {
      outcomes[i].failed = true;
      return;
    }
    const auto labels = set.labels();
    const auto s = score_prediction(parse_option_array(c.text, labels), set.gold_label);
    outcomes[i].hit1 = s.hit1 > 0;
    outcomes[i].hit3 = s.hit3 > 0;
  });

  DifficultyResult result;
  auto& report = result.report;
  report.options = options;
  for (const auto& j : judges) report.judge_names.push_back(j.name);
  std::set<std::string> authors_in, authors_kept;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& q = queries[qi];
    QueryVerdict v{q.query_id, q.author, true, {}};
    for (std::size_t j = 0; j < judges.size(); ++j) {
      JudgeOutcome o;
      o.judge = judges[j].name;
      for (std::size_t r = 0; r < runs; ++r) {
        const auto& out = outcomes[qi * per_query + j * runs + r];
        o.hits1 += out.hit1;
        o.hits3 += out.hit3;
        o.provider_failures += out.failed;
      }
      o.hit1 = static_cast<double>(o.hits1) / static_cast<double>(runs);
      o.hit3 = static_cast<double>(o.hits3) / static_cast<double>(runs);
      report.provider_failures += o.provider_failures;
      if (!within(o.hits1, runs, options.max_hit1) || !within(o.hits3, runs, options.max_hit3)) v.retained = false;
      v.judges.push_back(std::move(o));
    }
    authors_in.insert(q.author);
    if (v.retained) {
      result.retained.push_back(q);
      authors_kept.insert(q.author);
    } else {
      report.removed_queries.push_back(q.query_id);
    }
    report.verdicts.push_back(std::move(v));
  }
  for (const auto& a : authors_in)
    if (!authors_kept.count(a)) report.removed_authors.push_back(a);
  return result;
}

}  // namespace prime
