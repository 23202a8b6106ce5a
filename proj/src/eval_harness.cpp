// SPDX-License-Identifier: Apache-2.0
#include "prime/eval_harness.hpp"

#include <array>
#include <cmath>
#include <cstdio>

#include "prime/error.hpp"
#include "prime/parallel.hpp"
#include "prime/seed.hpp"

namespace prime {

std::string mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::non_personalized: return "non_personalized";
    case EvalMode::em_only: return "em_only";
    case EvalMode::sm_only: return "sm_only";
    case EvalMode::dual: return "dual";
    case EvalMode::prime: return "prime";
    case EvalMode::em_think_trainfree: return "em_think_trainfree";
  }
  return "non_personalized";
}

EvalMode parse_mode(const std::string& s) {
  static const std::pair<const char*, EvalMode> kAliases[] = {
      {"non_personalized", EvalMode::non_personalized}, {"non-p", EvalMode::non_personalized},
      {"em_only", EvalMode::em_only},                   {"em", EvalMode::em_only},
      {"sm_only", EvalMode::sm_only},                   {"sm", EvalMode::sm_only},
      {"dual", EvalMode::dual},                         {"prime", EvalMode::prime},
      {"em_think_trainfree", EvalMode::em_think_trainfree}};
  std::string lower;
  for (char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (const auto& [name, mode] : kAliases)
    if (lower == name) return mode;
  throw ConfigError("unknown evaluation mode: " + s);
}

void EvalConfig::validate() const {
  if (runs < 1) throw ConfigError("runs must be >= 1");
  if (negatives_per_run < 1) throw ConfigError("negatives_per_run must be >= 1");
  if (uses_recall() && k < 1) throw ConfigError("recall k must be >= 1");
  if (max_tokens < 1 || thinking_max_tokens < 1) throw ConfigError("token limits must be >= 1");
  if (temperature < 0) throw ConfigError("temperature must be >= 0");
  if (parse_retries < 0 || parse_retries > 2) throw ConfigError("parse_retries must be in [0, 2]");
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (tsa && !uses_recall()) throw ConfigError("tsa requires a mode with episodic recall");
}

Json EvalConfig::to_json() const {
  Json j;
  j["mode"] = mode_name(mode);
  j["strategy"] = strategy_name(strategy);
  j["k"] = k;
  j["objective"] = objective_name(objective);
  j["semantic_form"] = semantic_form == SemanticForm::parametric ? "parametric" : "textual";
  j["tsa"] = tsa;
  j["runs"] = runs;
  j["negatives_per_run"] = negatives_per_run;
  j["full_pool"] = full_pool;
  j["max_tokens"] = max_tokens;
  j["thinking_max_tokens"] = thinking_max_tokens;
  j["temperature"] = temperature;
  j["master_seed"] = master_seed;
  j["vary_negatives"] = vary_negatives;
  j["vary_decoding"] = vary_decoding;
  j["parse_retries"] = parse_retries;
  j["dry_run"] = dry_run;
  return j;
}

std::vector<std::string> CandidateSet::labels() const {
  std::vector<std::string> out;
  for (const auto& c : candidates) out.push_back(c.label);
  return out;
}

std::uint64_t run_seed(const std::string& query_id, std::size_t run_index, std::uint64_t master_seed) {
  return derive_seed(query_id, static_cast<std::uint64_t>(run_index), master_seed);
}

CandidateSet sample_candidates(const EvalQuery& query, std::size_t negatives, std::uint64_t seed, bool full_pool) {
  SeededRng rng(seed);
  const std::size_t pool = query.negative_pool.size();
  const std::size_t want = std::min(full_pool ? pool : negatives, kMaxCandidates - 1);
  std::vector<const Conversation*> chosen{&query.positive};
  for (auto i : rng.sample_indices(pool, want)) chosen.push_back(&query.negative_pool[i]);
  rng.shuffle(chosen);
  CandidateSet set;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const auto* c = chosen[i];
    set.candidates.push_back({option_label(i), c->reply_id, c->reply_author, c->reply_body});
    if (c == &query.positive) set.gold_label = option_label(i);
  }
  return set;
}

namespace {

const ProfileSummary& require_summary(const MemoryResources& res, const std::string& user) {
  if (!res.summaries) throw ConfigError("profile summaries required but not loaded (user " + user + ")");
  auto it = res.summaries->find(user);
  if (it == res.summaries->end()) throw ConfigError("no profile summary for user " + user);
  return it->second;
}

}  // namespace

ComposedRequest compose_request(const EvalConfig& config, const EvalQuery& query, const CandidateSet& candidates,
                                const MemoryResources& resources, const std::optional<std::string>& memory_user,
                                std::optional<std::int64_t> decode_seed) {
  const std::string user = memory_user.value_or(query.author);
  ComposedRequest out;
  out.thinking = config.thinking();

  if (config.uses_recall()) {
    if (!resources.store) throw ConfigError("episodic store required for mode " + mode_name(config.mode) +
                                            " (user " + user + ")");
    if (!resources.store->has_user(user)) throw ConfigError("episodic store has no history for user " + user);
    auto recalled = resources.store->recall(user, query.op_title + "\n" + query.op_body, config.strategy, config.k);
    if (config.tsa) recalled = augment_with_summary(std::move(recalled), require_summary(resources, user));
    out.memory.items = std::move(recalled.items);
    out.memory.summary = recalled.augmentation;
  }

  if (config.uses_semantic()) {
    if (config.semantic_form == SemanticForm::parametric) {
      if (!resources.registry) throw ConfigError("adapter registry required for mode " + mode_name(config.mode) +
                                                 " (user " + user + ")");
      if (!resources.registry->contains(user, config.objective))
        throw ConfigError("no " + objective_name(config.objective) + " adapter registered for user " + user);
      out.request.adapter = user + "/" + objective_name(config.objective);
    } else {
      out.memory.summary = require_summary(resources, user).text;
    }
  }

  const QueryContext ctx{query.author, query.op_title, query.op_body};
  const MemoryContext* mem = out.memory.empty() ? nullptr : &out.memory;
  out.request.user_text = out.thinking ? render_thinking_prompt(ctx, candidates.candidates, mem)
                                       : render_eval_prompt(ctx, candidates.candidates, mem);
  out.request.max_tokens = config.token_limit();
  out.request.temperature = config.temperature;
  out.request.seed = decode_seed;
  return out;
}

std::size_t gold_rank(const RankedPrediction& prediction, const std::string& gold_label) {
  if (prediction.parse_status == ParseStatus::failed) return 0;
  for (std::size_t i = 0; i < prediction.option_ids.size(); ++i)
    if (prediction.option_ids[i] == gold_label) return i + 1;
  return 0;
}

Scores score_prediction(const RankedPrediction& prediction, const std::string& gold_label) {
  const std::size_t r = gold_rank(prediction, gold_label);
  Scores s;
  if (r == 0 || r > 3) return s;
  s.hit1 = r == 1 ? 1.0 : 0.0;
  s.hit3 = 1.0;
  s.dcg3 = 1.0 / std::log2(static_cast<double>(r) + 1.0);
  s.rr = 1.0 / static_cast<double>(r);
  return s;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

Json Aggregates::to_json() const {
  return Json{{"hit1", round2(hit1)}, {"hit3", round2(hit3)}, {"dcg3", round2(dcg3)}, {"mrr", round2(mrr)},
              {"avg", round2(avg)}};
}

Aggregates Aggregates::from_json(const Json& j) {
  try {
    Aggregates a;
    a.hit1 = j.at("hit1").get<double>();
    a.hit3 = j.at("hit3").get<double>();
    a.dcg3 = j.at("dcg3").get<double>();
    a.mrr = j.at("mrr").get<double>();
    a.avg = j.at("avg").get<double>();
    return a;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed aggregates: ") + e.what());
  }
}

Json ItemRecord::to_json() const {
  Json j;
  j["query_id"] = query_id;
  j["author"] = author;
  j["run"] = run;
  j["seed"] = seed;
  j["offered_labels"] = offered_labels;
  j["offered_reply_ids"] = offered_reply_ids;
  j["gold_label"] = gold_label;
  j["prediction"] = prediction.option_ids;
  j["parse_status"] = parse_status_name(prediction.parse_status);
  j["gold_rank"] = gold_rank;
  j["scores"] = {{"hit1", scores.hit1}, {"hit3", scores.hit3}, {"dcg3", scores.dcg3}, {"rr", scores.rr}};
  j["finish_reason"] = finish_reason;
  j["provider_error"] = provider_error;
  if (!error.empty()) j["error"] = error;
  j["adapter"] = adapter ? Json(*adapter) : Json(nullptr);
  j["completion"] = prediction.raw_text;
  if (prompt) j["prompt"] = *prompt;
  return j;
}

Json RunReport::to_json() const {
  Json j;
  j["label"] = label;
  j["config"] = config.to_json();
  j["queries"] = config.runs ? items.size() / config.runs : 0;
  j["items"] = items.size();
  j["provider_errors"] = provider_errors;
  j["parse_failures"] = parse_failures;
  j["overall"] = overall.to_json();
  Json runs = Json::array();
  for (const auto& a : per_run) runs.push_back(a.to_json());
  j["per_run"] = std::move(runs);
  return j;
}

namespace {

Aggregates with_avg(Aggregates a) {
  a.avg = (a.hit1 + a.hit3 + a.dcg3 + a.mrr) / 4.0;
  return a;
}

}  // namespace

Aggregates aggregate(const std::vector<ItemRecord>& items, std::size_t runs) {
  if (runs == 0) return {};
  std::vector<Aggregates> sums(runs);
  std::vector<std::size_t> counts(runs, 0);
  for (const auto& it : items) {
    if (it.run >= runs) throw Error("item run index out of range");
    sums[it.run].hit1 += it.scores.hit1;
    sums[it.run].hit3 += it.scores.hit3;
    sums[it.run].dcg3 += it.scores.dcg3;
    sums[it.run].mrr += it.scores.rr;
    ++counts[it.run];
  }
  Aggregates total;
  for (std::size_t r = 0; r < runs; ++r) {
    const double n = counts[r] ? static_cast<double>(counts[r]) : 1.0;
    total.hit1 += 100.0 * sums[r].hit1 / n;
    total.hit3 += 100.0 * sums[r].hit3 / n;
    total.dcg3 += 100.0 * sums[r].dcg3 / n;
    total.mrr += 100.0 * sums[r].mrr / n;
  }
  const double rn = static_cast<double>(runs);
  total.hit1 /= rn;
  total.hit3 /= rn;
  total.dcg3 /= rn;
  total.mrr /= rn;
  return with_avg(total);
}

namespace {

std::vector<Aggregates> per_run_aggregates(const std::vector<ItemRecord>& items, std::size_t runs) {
  std::vector<std::vector<ItemRecord>> by_run(runs);
  for (const auto& it : items) {
    ItemRecord copy = it;
    copy.run = 0;
    by_run[it.run].push_back(std::move(copy));
  }
  std::vector<Aggregates> out;
  for (const auto& group : by_run) out.push_back(aggregate(group, 1));
  return out;
}

std::int64_t api_seed(std::uint64_t seed) { return static_cast<std::int64_t>(seed >> 33); }

}  // namespace

RunReport run_suite(const EvalConfig& config, const std::vector<EvalQuery>& queries, Provider& provider,
                    const MemoryResources& resources, const std::optional<std::string>& memory_user) {
  config.validate();
  const std::size_t runs = config.runs;
  const std::size_t n = queries.size() * runs;

  struct Planned {
    CandidateSet candidates;
    ComposedRequest composed;
    std::uint64_t seed = 0;
  };
  std::vector<Planned> plan(n);
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& q = queries[qi];
    for (std::size_t r = 0; r < runs; ++r) {
      auto& p = plan[qi * runs + r];
      p.seed = run_seed(q.query_id, r, config.master_seed);
      const std::uint64_t base = run_seed(q.query_id, 0, config.master_seed);
      p.candidates = sample_candidates(q, config.negatives_per_run, config.vary_negatives ? p.seed : base,
                                       config.full_pool);
      p.composed = compose_request(config, q, p.candidates, resources, memory_user,
                                   api_seed(config.vary_decoding ? p.seed : base));
    }
  }

  RunReport report;
  report.config = config;
  report.items.resize(n);
  parallel_for(n, config.parallelism, [&](std::size_t i) {
    const auto& q = queries[i / runs];
    const auto& p = plan[i];
    ItemRecord& rec = report.items[i];
    rec.query_id = q.query_id;
    rec.author = q.author;
    rec.run = i % runs;
    rec.seed = p.seed;
    rec.gold_label = p.candidates.gold_label;
    rec.adapter = p.composed.request.adapter;
    const auto labels = p.candidates.labels();
    rec.offered_labels = labels;
    for (const auto& c : p.candidates.candidates) rec.offered_reply_ids.push_back(c.reply_id);
    if (config.dry_run) {
      rec.prompt = p.composed.request.user_text;
      rec.finish_reason = "dry_run";
      return;
    }
    CompletionRequest req = p.composed.request;
    for (int attempt = 0; attempt <= config.parse_retries; ++attempt) {
      if (attempt > 0 && req.seed) req.seed = api_seed(derive_seed(p.seed, static_cast<std::uint64_t>(attempt)));
      const Completion c = provider.complete(req);
      rec.finish_reason = finish_reason_name(c.finish_reason);
      if (!c.ok()) {
        rec.provider_error = true;
        rec.error = c.error;
        rec.prediction = RankedPrediction{{}, c.text, ParseStatus::failed};
        break;
      }
      rec.prediction = p.composed.thinking ? parse_thinking_answer(c.text, labels) : parse_option_array(c.text, labels);
      if (rec.prediction.parse_status != ParseStatus::failed) break;
    }
    rec.gold_rank = gold_rank(rec.prediction, rec.gold_label);
    rec.scores = score_prediction(rec.prediction, rec.gold_label);
  });

  for (const auto& rec : report.items) {
    if (rec.provider_error) ++report.provider_errors;
    else if (!config.dry_run && rec.prediction.parse_status == ParseStatus::failed) ++report.parse_failures;
  }
  report.per_run = per_run_aggregates(report.items, runs);
  report.overall = aggregate(report.items, runs);
  return report;
}

std::string format_table(const std::vector<std::pair<std::string, Aggregates>>& rows) {
  std::size_t width = 6;
  for (const auto& [label, _] : rows) width = std::max(width, label.size());
  auto line = [&](const std::string& label, const std::array<std::string, 5>& cells) {
    std::string s = label + std::string(width - label.size(), ' ');
    for (const auto& c : cells) s += " | " + std::string(c.size() < 6 ? 6 - c.size() : 0, ' ') + c;
    return s + "\n";
  };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", round2(v));
    return std::string(buf);
  };
  std::string out = line("Method", {"Hit@1", "Hit@3", "DCG@3", "MRR", "Avg"});
  out += std::string(width, '-') + std::string(5 * 9, '-') + "\n";
  for (const auto& [label, a] : rows) out += line(label, {num(a.hit1), num(a.hit3), num(a.dcg3), num(a.mrr), num(a.avg)});
  return out;
}

void write_report(const std::filesystem::path& dir, const RunReport& report) {
  std::vector<Json> rows;
  rows.reserve(report.items.size());
  for (const auto& it : report.items) rows.push_back(it.to_json());
  write_file_atomic(dir / "items.jsonl", to_jsonl(rows));
  write_file_atomic(dir / "report.json", dump_pretty(report.to_json()));
  const std::string label = report.label.empty() ? mode_name(report.config.mode) : report.label;
  write_file_atomic(dir / "table.txt", format_table({{label, report.overall}}));
}

}  // namespace prime
