// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "prime/corpus.hpp"
#include "prime/eval_harness.hpp"
#include "prime/llm_gateway.hpp"

namespace prime {

class Embedder {
 public:
  virtual ~Embedder() = default;
  /// Throws on failure.
  virtual std::vector<double> embed(const std::string& text) = 0;
  virtual std::string name() const = 0;
};

/// Signed feature hashing of lowercased word tokens. Offline and deterministic.
class HashedBowEmbedder : public Embedder {
 public:
  explicit HashedBowEmbedder(std::size_t dim = 256, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}
  std::vector<double> embed(const std::string& text) override;
  std::string name() const override { return "hashed_bow_mock"; }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

struct RemoteEmbeddingConfig {
  std::string endpoint;
  std::string model;
  std::string api_key_env;
  int retries = 3;
  int backoff_ms = 200;
  int timeout_s = 120;
};

/// OpenAI-compatible /v1/embeddings client.
class RemoteEmbedder : public Embedder {
 public:
  explicit RemoteEmbedder(RemoteEmbeddingConfig cfg);
  std::vector<double> embed(const std::string& text) override;
  std::string name() const override { return "remote_endpoint"; }

 private:
  RemoteEmbeddingConfig cfg_;
};

struct AuthorIndex {
  std::string source;
  std::size_t dimension = 0;
  std::map<std::string, std::vector<double>> vectors;

  Json to_json() const;
};

/// The author's distinct OPs, chronological, as "title\nbody" blocks.
std::string author_profile_text(const std::string& author, const std::vector<Conversation>& history);

/// One unit-normalized embedding per author. Throws Error naming the author
/// when it has no history or the embedder fails.
AuthorIndex build_author_index(const std::vector<std::string>& authors, const std::vector<Conversation>& history,
                               Embedder& embedder, std::size_t parallelism = 1);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

/// Other authors, most to least similar; ties lexicographic.
std::vector<std::string> rank_similarity(const AuthorIndex& index, const std::string& target);

enum class ReplacementCondition { self, most_similar, similar, mid_range, dissimilar };
std::string condition_name(ReplacementCondition c);
inline constexpr ReplacementCondition kAllConditions[] = {
    ReplacementCondition::self, ReplacementCondition::most_similar, ReplacementCondition::similar,
    ReplacementCondition::mid_range, ReplacementCondition::dissimilar};

struct ReplacementPlan {
  std::string target;
  ReplacementCondition condition = ReplacementCondition::self;
  std::vector<std::string> replacements;
  /// 1-based similarity ranks of the replacements (0 for self).
  std::vector<std::size_t> ranks;
  /// Set when the author pool is too small for the condition.
  std::optional<std::string> unavailable;
};

/// 1-based rank indices among the n other authors for a condition.
std::vector<std::size_t> condition_ranks(ReplacementCondition c, std::size_t n);

std::vector<ReplacementPlan> plan_replacements(const std::string& target, const std::vector<std::string>& ranked);

struct ReplacementRun {
  std::string author;
  std::size_t rank = 0;
  Aggregates overall;
};

struct ConditionOutcome {
  ReplacementPlan plan;
  std::vector<ReplacementRun> runs;
  /// Mean over the replacement runs.
  Aggregates aggregate;
  std::optional<std::string> skipped;
};

struct ReplacementResult {
  std::string target;
  std::vector<ConditionOutcome> conditions;
};

/// Evaluates the target's queries once per replacement author with that
/// author's memories substituted.
ReplacementResult execute_replacement(const EvalConfig& config, const std::vector<ReplacementPlan>& plans,
                                      const std::vector<EvalQuery>& target_queries, Provider& provider,
                                      const MemoryResources& resources);

Json replacement_report_json(const EvalConfig& config, const std::vector<ReplacementResult>& results);
std::string replacement_csv(const std::vector<ReplacementResult>& results);

/// replacement_report.json and replacement_series.csv.
void write_replacement_report(const std::filesystem::path& dir, const EvalConfig& config,
                              const std::vector<ReplacementResult>& results);

}  // namespace prime
