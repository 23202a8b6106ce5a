// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "prime/corpus.hpp"
#include "prime/llm_gateway.hpp"
#include "prime/prompts.hpp"
#include "prime/semantic_memory.hpp"

namespace prime {

enum class SynthesisStatus { pending, fast_pass, fast_fail, slow_pass, slow_fail };
std::string synthesis_status_name(SynthesisStatus s);
SynthesisStatus parse_synthesis_status(const std::string& s);

/// One replayed historical engagement moving through the filters.
struct SynthesisRecord {
  std::string user;
  std::string engagement_id;
  std::int64_t created_utc = 0;
  /// Standard ranking prompt without memory.
  std::string query_text;
  std::vector<std::string> offered_labels;
  std::string gold_option;
  std::optional<RankedPrediction> fast_answer;
  /// Gold appeared somewhere in the fast answer's top 3.
  bool fast_top3 = false;
  /// Raw proxy completion. Set (possibly empty) once the proxy was asked.
  std::optional<std::string> trace;
  std::optional<RankedPrediction> slow_answer;
  SynthesisStatus status = SynthesisStatus::pending;
  std::string error;

  /// Throws Error on a backward transition.
  void advance(SynthesisStatus next);
  Json to_json() const;
  static SynthesisRecord from_json(const Json& j);
};

enum class MatchRule { rank1, top3 };

struct SynthesisOptions {
  std::size_t negatives = 9;
  std::uint64_t seed = 0;
  MatchRule match = MatchRule::rank1;
  int fast_max_tokens = 512;
  int proxy_max_tokens = 2048;
  double proxy_temperature = 0.7;
  /// Reject traces missing any tag instead of flagging them.
  bool strict = false;
  bool include_profile_in_input = false;
  std::size_t parallelism = 4;
  /// Engagements at or after this time must never be replayed.
  std::optional<std::int64_t> cutoff_utc;

  Json to_json() const;
};

/// Reuses pkr_summarize; with a cache path, an existing profile is
/// loaded instead of regenerated and a new one is persisted.
ProfileSummary generate_profile(const Session& adapter_session, const std::string& user,
                                const std::optional<std::filesystem::path>& cache = {});

struct ReplayResult {
  std::vector<SynthesisRecord> records;
  std::size_t skipped_no_negatives = 0;
};

/// One pending record per positive historical engagement of the
/// user as OP author. Throws Error when an engagement is at or after the cutoff.
ReplayResult replay_history(const std::string& user, const std::vector<Conversation>& history,
                            const SynthesisOptions& options = {});

/// Called after each record changes; used to persist progress.
using RecordSink = std::function<void(const SynthesisRecord&)>;

/// Pending records are answered once, greedily, by the adapter
/// session with the standard prompt.
void fast_filter(const Session& adapter_session, std::vector<SynthesisRecord>& records,
                 const SynthesisOptions& options = {}, const RecordSink& sink = {});

/// The reverse-reasoning prompt: thinking prompt plus the known answer.
std::string render_proxy_prompt(const SynthesisRecord& record);

/// fast_pass records without a trace are sent to the base model with
/// the profile prefixed and no adapter.
void proxy_reason(const Session& base_session, const ProfileSummary& profile, std::vector<SynthesisRecord>& records,
                  const SynthesisOptions& options = {}, const RecordSink& sink = {});

/// fast_pass records become slow_pass iff their trace's answer
/// matches gold under the match rule.
void slow_filter(std::vector<SynthesisRecord>& records, const SynthesisOptions& options = {});

struct SftExample {
  std::string input;
  std::string target;
};

struct YieldReport {
  std::string user;
  std::size_t replayed = 0;
  std::size_t skipped_no_negatives = 0;
  std::size_t fast_pass = 0;
  std::size_t fast_fail = 0;
  std::size_t fast_top3 = 0;
  std::size_t slow_pass = 0;
  std::size_t slow_fail = 0;
  std::size_t incomplete_traces = 0;
  std::size_t rejected_incomplete = 0;
  std::size_t emitted = 0;
  std::vector<std::string> flagged;

  Json to_json() const;
};

YieldReport count_yield(const std::string& user, const std::vector<SynthesisRecord>& records,
                        std::size_t skipped_no_negatives = 0);

/// Target: each present tagged section of the trace in canonical order, then "#END".
std::string sft_target(const ThinkingTrace& trace);

/// Writes <dir>/sft/examples.jsonl and <dir>/yield_report.json, completing
/// the emission counts in report. Throws Error
/// ("insufficient synthesis yield") with the stage counts when nothing survives.
std::vector<SftExample> emit_sft_dataset(const std::vector<SynthesisRecord>& records, const std::filesystem::path& dir,
                                         YieldReport& report, const SynthesisOptions& options = {},
                                         const ProfileSummary* profile = nullptr);

/// Append-only record log with periodic atomic compaction. The newest line
/// per engagement wins on load; a torn final line is ignored.
class SynthesisState {
 public:
  explicit SynthesisState(std::filesystem::path path) : path_(std::move(path)) {}

  bool exists() const { return std::filesystem::exists(path_); }
  std::vector<SynthesisRecord> load() const;
  void append(const SynthesisRecord& record);
  void compact(const std::vector<SynthesisRecord>& records);

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

struct PipelineResult {
  ProfileSummary profile;
  std::vector<SynthesisRecord> records;
  std::vector<SftExample> examples;
  YieldReport report;
};

/// The whole pipeline plus emission for one user, resumable from
/// <dir>/synthesis_state.jsonl and <dir>/profile.json.
PipelineResult run_synthesis(const std::string& user, const std::vector<Conversation>& history,
                             const Session& adapter_session, const Session& base_session,
                             const std::filesystem::path& dir, const SynthesisOptions& options = {});

}  // namespace prime
