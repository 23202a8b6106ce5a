// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prime/corpus.hpp"
#include "prime/episodic_memory.hpp"
#include "prime/llm_gateway.hpp"
#include "prime/prompts.hpp"
#include "prime/semantic_memory.hpp"

namespace prime {

enum class EvalMode { non_personalized, em_only, sm_only, dual, prime, em_think_trainfree };

std::string mode_name(EvalMode m);
EvalMode parse_mode(const std::string& s);

/// How semantic memory is read in sm_only/dual/prime: an activated adapter,
/// or a profile summary prefixed to the query.
enum class SemanticForm { parametric, textual };

struct EvalConfig {
  EvalMode mode = EvalMode::non_personalized;
  RecallStrategy strategy = RecallStrategy::recent;
  std::size_t k = 3;
  Objective objective = Objective::T_FT;
  SemanticForm semantic_form = SemanticForm::parametric;
  bool tsa = false;
  std::size_t runs = 10;
  std::size_t negatives_per_run = 9;
  /// Offer the whole negative pool (at most 25) instead of sampling.
  bool full_pool = false;
  int max_tokens = 512;
  int thinking_max_tokens = 2048;
  double temperature = 0.7;
  std::uint64_t master_seed = 0;
  /// Resample negatives per run (otherwise run 0's sample is reused).
  bool vary_negatives = true;
  /// Distinct decoding seed per run.
  bool vary_decoding = true;
  /// Re-asks after an unparseable answer, at most 2.
  int parse_retries = 0;
  std::size_t parallelism = 4;
  /// Render prompts and plans only; no provider calls.
  bool dry_run = false;

  bool thinking() const { return mode == EvalMode::prime || mode == EvalMode::em_think_trainfree; }
  bool uses_recall() const { return mode != EvalMode::non_personalized && mode != EvalMode::sm_only; }
  bool uses_semantic() const {
    return mode == EvalMode::sm_only || mode == EvalMode::dual || mode == EvalMode::prime;
  }
  int token_limit() const { return thinking() ? thinking_max_tokens : max_tokens; }
  /// Throws ConfigError.
  void validate() const;
  Json to_json() const;
};

struct CandidateSet {
  std::vector<Candidate> candidates;
  std::string gold_label;

  std::vector<std::string> labels() const;
};

/// hash(query_id, run_index, master_seed).
std::uint64_t run_seed(const std::string& query_id, std::size_t run_index, std::uint64_t master_seed);

/// Positive plus min(negatives, |pool|) negatives drawn uniformly without
/// replacement, shuffled, then labeled "option A"... in presentation order.
CandidateSet sample_candidates(const EvalQuery& query, std::size_t negatives, std::uint64_t seed,
                               bool full_pool = false);

/// Personalization resources. Any pointer may be null when the mode does not need it.
struct MemoryResources {
  const EpisodicStore* store = nullptr;
  const AdapterRegistry* registry = nullptr;
  const std::map<std::string, ProfileSummary>* summaries = nullptr;
};

struct ComposedRequest {
  CompletionRequest request;
  MemoryContext memory;
  bool thinking = false;
};

/// Builds the mode-specific request. memory_user selects whose memories are
/// read (defaults to the query author). Throws ConfigError naming the user
/// when a required store, adapter or summary is missing.
ComposedRequest compose_request(const EvalConfig& config, const EvalQuery& query, const CandidateSet& candidates,
                                const MemoryResources& resources, const std::optional<std::string>& memory_user = {},
                                std::optional<std::int64_t> decode_seed = {});

struct Scores {
  double hit1 = 0;
  double hit3 = 0;
  double dcg3 = 0;
  double rr = 0;
};

/// 1-based rank of gold in the prediction; 0 when absent.
std::size_t gold_rank(const RankedPrediction& prediction, const std::string& gold_label);

/// Hit@1, Hit@3, DCG@3 (binary gain, log2(r+1) discount) and reciprocal
/// rank, all zero when gold is outside the top 3 or parsing failed.
Scores score_prediction(const RankedPrediction& prediction, const std::string& gold_label);

/// Values in percent.
struct Aggregates {
  double hit1 = 0;
  double hit3 = 0;
  double dcg3 = 0;
  double mrr = 0;
  double avg = 0;

  Json to_json() const;
  static Aggregates from_json(const Json& j);
};

struct ItemRecord {
  std::string query_id;
  std::string author;
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> offered_labels;
  std::vector<std::string> offered_reply_ids;
  std::string gold_label;
  RankedPrediction prediction;
  std::size_t gold_rank = 0;
  Scores scores;
  std::string finish_reason;
  bool provider_error = false;
  std::string error;
  std::optional<std::string> adapter;
  /// Only kept for dry runs.
  std::optional<std::string> prompt;

  Json to_json() const;
};

struct RunReport {
  std::string label;
  EvalConfig config;
  std::vector<ItemRecord> items;
  std::vector<Aggregates> per_run;
  Aggregates overall;
  std::size_t provider_errors = 0;
  std::size_t parse_failures = 0;

  Json to_json() const;
};

/// Mean over queries within each run, then mean over runs; avg is the mean
/// of the four metrics.
Aggregates aggregate(const std::vector<ItemRecord>& items, std::size_t runs);

/// Evaluates every query x run. Provider errors score zero and are flagged.
RunReport run_suite(const EvalConfig& config, const std::vector<EvalQuery>& queries, Provider& provider,
                    const MemoryResources& resources, const std::optional<std::string>& memory_user = {});

double round2(double v);

/// Rows of (label, aggregates) rendered as a fixed-width text table.
std::string format_table(const std::vector<std::pair<std::string, Aggregates>>& rows);

/// report.json, items.jsonl and table.txt.
void write_report(const std::filesystem::path& dir, const RunReport& report);

}  // namespace prime
