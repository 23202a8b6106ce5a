// SPDX-License-Identifier: Apache-2.0
#include "prime/thinking_synthesis.hpp"

#include <fstream>
#include <map>

#include "prime/error.hpp"
#include "prime/eval_harness.hpp"
#include "prime/parallel.hpp"
#include "prime/seed.hpp"
#include "prime/text.hpp"

namespace prime {

std::string synthesis_status_name(SynthesisStatus s) {
  switch (s) {
    case SynthesisStatus::pending: return "pending";
    case SynthesisStatus::fast_pass: return "fast_pass";
    case SynthesisStatus::fast_fail: return "fast_fail";
    case SynthesisStatus::slow_pass: return "slow_pass";
    case SynthesisStatus::slow_fail: return "slow_fail";
  }
  return "pending";
}

SynthesisStatus parse_synthesis_status(const std::string& s) {
  for (auto st : {SynthesisStatus::pending, SynthesisStatus::fast_pass, SynthesisStatus::fast_fail,
                  SynthesisStatus::slow_pass, SynthesisStatus::slow_fail})
    if (synthesis_status_name(st) == s) return st;
  throw FormatError("unknown synthesis status: " + s);
}

void SynthesisRecord::advance(SynthesisStatus next) {
  const bool ok = (status == SynthesisStatus::pending &&
                   (next == SynthesisStatus::fast_pass || next == SynthesisStatus::fast_fail)) ||
                  (status == SynthesisStatus::fast_pass &&
                   (next == SynthesisStatus::slow_pass || next == SynthesisStatus::slow_fail));
  if (!ok)
    throw Error("record " + engagement_id + ": illegal status transition " + synthesis_status_name(status) + " -> " +
                synthesis_status_name(next));
  status = next;
}

namespace {

Json prediction_json(const std::optional<RankedPrediction>& p) {
  if (!p) return nullptr;
  return Json{{"option_ids", p->option_ids}, {"parse_status", parse_status_name(p->parse_status)},
              {"raw_text", p->raw_text}};
}

std::optional<RankedPrediction> prediction_from(const Json& j) {
  if (j.is_null()) return std::nullopt;
  RankedPrediction p;
  p.option_ids = j.at("option_ids").get<std::vector<std::string>>();
  p.raw_text = j.at("raw_text").get<std::string>();
  const auto s = j.at("parse_status").get<std::string>();
  p.parse_status = s == "ok" ? ParseStatus::ok : s == "repaired" ? ParseStatus::repaired : ParseStatus::failed;
  return p;
}

}  // namespace

Json SynthesisRecord::to_json() const {
  Json j;
  j["user"] = user;
  j["engagement_id"] = engagement_id;
  j["created_utc"] = created_utc;
  j["status"] = synthesis_status_name(status);
  j["gold_option"] = gold_option;
  j["offered_labels"] = offered_labels;
  j["query_text"] = query_text;
  j["fast_answer"] = prediction_json(fast_answer);
  j["fast_top3"] = fast_top3;
  j["trace"] = trace ? Json(*trace) : Json(nullptr);
  j["slow_answer"] = prediction_json(slow_answer);
  j["error"] = error;
  return j;
}

SynthesisRecord SynthesisRecord::from_json(const Json& j) {
  try {
    SynthesisRecord r;
    r.user = j.at("user").get<std::string>();
    r.engagement_id = j.at("engagement_id").get<std::string>();
    r.created_utc = j.at("created_utc").get<std::int64_t>();
    r.status = parse_synthesis_status(j.at("status").get<std::string>());
    r.gold_option = j.at("gold_option").get<std::string>();
    r.offered_labels = j.at("offered_labels").get<std::vector<std::string>>();
    r.query_text = j.at("query_text").get<std::string>();
    r.fast_answer = prediction_from(j.at("fast_answer"));
    r.fast_top3 = j.at("fast_top3").get<bool>();
    if (!j.at("trace").is_null()) r.trace = j.at("trace").get<std::string>();
    r.slow_answer = prediction_from(j.at("slow_answer"));
    r.error = j.value("error", "");
    return r;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed synthesis record: ") + e.what());
  }
}

Json SynthesisOptions::to_json() const {
  Json j;
  j["negatives"] = negatives;
  j["seed"] = seed;
  j["match"] = match == MatchRule::rank1 ? "rank1" : "top3";
  j["fast_temperature"] = 0.0;
  j["fast_max_tokens"] = fast_max_tokens;
  j["proxy_max_tokens"] = proxy_max_tokens;
  j["proxy_temperature"] = proxy_temperature;
  j["strict"] = strict;
  j["include_profile_in_input"] = include_profile_in_input;
  j["cutoff_utc"] = cutoff_utc ? Json(*cutoff_utc) : Json(nullptr);
  return j;
}

ProfileSummary generate_profile(const Session& adapter_session, const std::string& user,
                                const std::optional<std::filesystem::path>& cache) {
  if (cache && std::filesystem::exists(*cache)) {
    auto p = ProfileSummary::from_json(Json::parse(read_file(*cache)));
    if (p.user != user) throw FormatError("cached profile " + cache->string() + " belongs to " + p.user);
    return p;
  }
  auto profile = pkr_summarize(adapter_session, user);
  if (cache) write_file_atomic(*cache, dump_pretty(profile.to_json()));
  return profile;
}

ReplayResult replay_history(const std::string& user, const std::vector<Conversation>& history,
                            const SynthesisOptions& options) {
  std::vector<Conversation> own;
  for (const auto& c : history) {
    if (c.op_author != user) continue;
    if (options.cutoff_utc && c.created_utc >= *options.cutoff_utc)
      throw Error("temporal firewall: engagement " + c.op_id + "/" + c.reply_id + " of " + user +
                  " is not before the cutoff");
    own.push_back(c);
  }
  const auto built = corpus::build_queries(CorpusSplit{{}, own, 0}, {user});
  ReplayResult out;
  out.skipped_no_negatives = built.dropped_empty_pool;
  for (const auto& q : built.queries) {
    const auto set = sample_candidates(q, options.negatives, derive_seed(options.seed, "replay", q.query_id));
    SynthesisRecord r;
    r.user = user;
    r.engagement_id = q.query_id;
    r.created_utc = q.positive.created_utc;
    r.query_text = render_eval_prompt({q.author, q.op_title, q.op_body}, set.candidates);
    r.offered_labels = set.labels();
    r.gold_option = set.gold_label;
    out.records.push_back(std::move(r));
  }
  return out;
}

namespace {

bool matches(const RankedPrediction& p, const std::string& gold, MatchRule rule) {
  if (p.parse_status == ParseStatus::failed) return false;
  const auto rank = gold_rank(p, gold);
  return rule == MatchRule::rank1 ? rank == 1 : (rank >= 1 && rank <= 3);
}

std::int64_t record_seed(const SynthesisOptions& o, const SynthesisRecord& r, std::string_view stage) {
  return static_cast<std::int64_t>(derive_seed(o.seed, stage, r.engagement_id) >> 33);
}

std::string input_part_of(const SynthesisRecord& r) {
  const std::string suffix = "\n\n" + std::string(kEvalOutputInstruction);
  if (r.query_text.size() < suffix.size() ||
      r.query_text.compare(r.query_text.size() - suffix.size(), suffix.size(), suffix) != 0)
    throw FormatError("record " + r.engagement_id + ": query_text is not a standard ranking prompt");
  return r.query_text.substr(0, r.query_text.size() - suffix.size());
}

}  // namespace

void fast_filter(const Session& adapter_session, std::vector<SynthesisRecord>& records,
                 const SynthesisOptions& options, const RecordSink& sink) {
  Session s = adapter_session;
  s.temperature = 0.0;
  s.max_tokens = options.fast_max_tokens;
  parallel_for(records.size(), options.parallelism, [&](std::size_t i) {
    auto& r = records[i];
    if (r.status != SynthesisStatus::pending) return;
    Session local = s;
    local.seed = record_seed(options, r, "fast");
    const auto c = local.ask(r.query_text);
    if (!c.ok()) {
      r.error = "fast filter: " + c.error;
      r.fast_answer = RankedPrediction{{}, c.text, ParseStatus::failed};
    } else {
      r.fast_answer = parse_option_array(c.text, r.offered_labels);
    }
    const auto rank = gold_rank(*r.fast_answer, r.gold_option);
    r.fast_top3 = rank >= 1 && rank <= 3;
    r.advance(matches(*r.fast_answer, r.gold_option, options.match) ? SynthesisStatus::fast_pass
                                                                     : SynthesisStatus::fast_fail);
    if (sink) sink(r);
  });
}

std::string render_proxy_prompt(const SynthesisRecord& record) {
  return input_part_of(record) + "\n\n" + std::string(kThinkingInstruction) +
         "\n\nThe correct final answer for this OP is known: [\"" + record.gold_option +
         "\"] is the reply that changed the author's view. Reconstruct the intermediate thoughts, step by step in "
         "the tagged format above, that lead to this answer, and make the <answer> section rank \"" +
         record.gold_option + "\" first.";
}

void proxy_reason(const Session& base_session, const ProfileSummary& profile, std::vector<SynthesisRecord>& records,
                  const SynthesisOptions& options, const RecordSink& sink) {
  if (text::trim(profile.text).empty()) throw Error("proxy reasoning needs a nonempty profile for " + profile.user);
  Session s = base_session;
  s.adapter.reset();
  s.prefix = profile.text;
  s.temperature = options.proxy_temperature;
  s.max_tokens = options.proxy_max_tokens;
  parallel_for(records.size(), options.parallelism, [&](std::size_t i) {
    auto& r = records[i];
    if (r.status != SynthesisStatus::fast_pass || r.trace) return;
    Session local = s;
    local.seed = record_seed(options, r, "proxy");
    const auto c = local.ask(render_proxy_prompt(r));
    if (!c.ok()) r.error = "proxy: " + c.error;
    r.trace = c.ok() ? c.text : std::string();
    if (sink) sink(r);
  });
}

void slow_filter(std::vector<SynthesisRecord>& records, const SynthesisOptions& options) {
  for (auto& r : records) {
    if (r.status != SynthesisStatus::fast_pass) continue;
    r.slow_answer = parse_thinking_answer(r.trace.value_or(""), r.offered_labels);
    r.advance(matches(*r.slow_answer, r.gold_option, options.match) ? SynthesisStatus::slow_pass
                                                                     : SynthesisStatus::slow_fail);
  }
}

Json YieldReport::to_json() const {
  Json j;
  j["user"] = user;
  j["replayed"] = replayed;
  j["skipped_no_negatives"] = skipped_no_negatives;
  j["fast_pass"] = fast_pass;
  j["fast_fail"] = fast_fail;
  j["fast_top3"] = fast_top3;
  j["slow_pass"] = slow_pass;
  j["slow_fail"] = slow_fail;
  j["incomplete_traces"] = incomplete_traces;
  j["rejected_incomplete"] = rejected_incomplete;
  j["emitted"] = emitted;
  j["flagged"] = flagged;
  return j;
}

YieldReport count_yield(const std::string& user, const std::vector<SynthesisRecord>& records,
                        std::size_t skipped_no_negatives) {
  YieldReport y;
  y.user = user;
  y.replayed = records.size();
  y.skipped_no_negatives = skipped_no_negatives;
  for (const auto& r : records) {
    y.fast_top3 += r.fast_top3;
    switch (r.status) {
      case SynthesisStatus::pending: break;
      case SynthesisStatus::fast_fail: ++y.fast_fail; break;
      case SynthesisStatus::fast_pass: ++y.fast_pass; break;
      case SynthesisStatus::slow_pass: ++y.fast_pass, ++y.slow_pass; break;
      case SynthesisStatus::slow_fail: ++y.fast_pass, ++y.slow_fail; break;
    }
  }
  return y;
}

std::string sft_target(const ThinkingTrace& trace) {
  std::string out;
  for (std::size_t i = 0; i < kThinkingTags.size(); ++i) {
    if (!trace.sections[i]) continue;
    const std::string tag(kThinkingTags[i]);
    out += "<" + tag + ">" + std::string(text::trim(*trace.sections[i])) + "</" + tag + ">\n";
  }
  return out + "#END";
}

std::vector<SftExample> emit_sft_dataset(const std::vector<SynthesisRecord>& records, const std::filesystem::path& dir,
                                         YieldReport& report, const SynthesisOptions& options,
                                         const ProfileSummary* profile) {
  std::vector<SftExample> out;
  for (const auto& r : records) {
    if (r.status != SynthesisStatus::slow_pass) continue;
    const auto trace = parse_thinking_trace(r.trace.value_or(""));
    if (!trace.complete()) {
      ++report.incomplete_traces;
      if (options.strict) {
        ++report.rejected_incomplete;
        continue;
      }
      report.flagged.push_back(r.engagement_id + ": missing " + text::join(trace.missing(), ", "));
    }
    std::string input = r.query_text;
    if (options.include_profile_in_input && profile) input = profile->text + "\n\n" + input;
    out.push_back({std::move(input), sft_target(trace)});
  }
  report.emitted = out.size();
  write_file_atomic(dir / "yield_report.json", dump_pretty(report.to_json()));
  if (out.empty())
    throw Error("insufficient synthesis yield for " + report.user + ": replayed " + std::to_string(report.replayed) +
                ", fast_pass " + std::to_string(report.fast_pass) + ", slow_pass " +
                std::to_string(report.slow_pass) + ", emitted 0");
  std::vector<Json> rows;
  for (const auto& e : out) rows.push_back(Json{{"input", e.input}, {"output", e.target}});
  write_file_atomic(dir / "sft" / "examples.jsonl", to_jsonl(rows));
  return out;
}

std::vector<SynthesisRecord> SynthesisState::load() const {
  std::vector<SynthesisRecord> out;
  if (!exists()) return out;
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw IoError("cannot read " + path_.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (!text::trim(line).empty()) lines.push_back(line);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    Json j;
    try {
      j = Json::parse(lines[i]);
    } catch (const Json::parse_error&) {
      if (i + 1 == lines.size()) break;
      throw FormatError(path_.string() + ": line " + std::to_string(i + 1) + " is not JSON");
    }
    auto rec = SynthesisRecord::from_json(j);
    auto it = index.find(rec.engagement_id);
    if (it == index.end()) {
      index[rec.engagement_id] = out.size();
      out.push_back(std::move(rec));
    } else {
      out[it->second] = std::move(rec);
    }
  }
  return out;
}

void SynthesisState::append(const SynthesisRecord& record) {
  std::lock_guard lock(mu_);
  std::filesystem::create_directories(path_.parent_path().empty() ? "." : path_.parent_path());
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + path_.string());
  out << record.to_json().dump(-1, ' ', false, Json::error_handler_t::replace) << '\n';
  out.flush();
  if (!out) throw IoError("write failed for " + path_.string());
}

void SynthesisState::compact(const std::vector<SynthesisRecord>& records) {
  std::lock_guard lock(mu_);
  std::vector<Json> rows;
  for (const auto& r : records) rows.push_back(r.to_json());
  write_file_atomic(path_, to_jsonl(rows));
}

PipelineResult run_synthesis(const std::string& user, const std::vector<Conversation>& history,
                             const Session& adapter_session, const Session& base_session,
                             const std::filesystem::path& dir, const SynthesisOptions& options) {
  PipelineResult result;
  result.profile = generate_profile(adapter_session, user, dir / "profile.json");

  SynthesisState state(dir / "synthesis_state.jsonl");
  const auto replay_meta = dir / "replay.json";
  std::size_t skipped = 0;
  if (state.exists() && std::filesystem::exists(replay_meta)) {
    result.records = state.load();
    skipped = Json::parse(read_file(replay_meta)).at("skipped_no_negatives").get<std::size_t>();
    for (const auto& r : result.records)
      if (options.cutoff_utc && r.created_utc >= *options.cutoff_utc)
        throw Error("temporal firewall: state file holds post-cutoff engagement " + r.engagement_id);
  } else {
    auto replay = replay_history(user, history, options);
    result.records = std::move(replay.records);
    skipped = replay.skipped_no_negatives;
    state.compact(result.records);
    write_file_atomic(replay_meta, dump_pretty(Json{{"replayed", result.records.size()},
                                                    {"skipped_no_negatives", skipped}}));
  }

  const RecordSink sink = [&](const SynthesisRecord& r) { state.append(r); };
  fast_filter(adapter_session, result.records, options, sink);
  state.compact(result.records);
  proxy_reason(base_session, result.profile, result.records, options, sink);
  state.compact(result.records);
  slow_filter(result.records, options);
  state.compact(result.records);

  result.report = count_yield(user, result.records, skipped);
  result.examples = emit_sft_dataset(result.records, dir, result.report, options, &result.profile);
  return result;
}

}  // namespace prime
