// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "prime/corpus.hpp"
#include "prime/llm_gateway.hpp"

namespace prime {

struct Judge {
  std::string name;
  std::shared_ptr<Provider> provider;
};

struct DifficultyOptions {
  std::size_t runs = 10;
  double max_hit1 = 0.3;
  double max_hit3 = 0.5;
  std::size_t negatives = 9;
  int max_tokens = 512;
  double temperature = 0.7;
  std::uint64_t master_seed = 0;
  bool vary_negatives = true;
  bool vary_decoding = true;
  std::size_t parallelism = 4;

  Json to_json() const;
};

struct JudgeOutcome {
  std::string judge;
  std::size_t hits1 = 0;
  std::size_t hits3 = 0;
  /// Runs the provider failed on; each counts as a miss.
  std::size_t provider_failures = 0;
  double hit1 = 0;
  double hit3 = 0;
};

struct QueryVerdict {
  std::string query_id;
  std::string author;
  bool retained = false;
  std::vector<JudgeOutcome> judges;
};

struct DifficultyReport {
  DifficultyOptions options;
  std::vector<std::string> judge_names;
  std::vector<QueryVerdict> verdicts;
  std::vector<std::string> removed_queries;
  /// Authors left without any retained query.
  std::vector<std::string> removed_authors;
  std::size_t provider_failures = 0;

  Json to_json() const;
};

struct DifficultyResult {
  std::vector<EvalQuery> retained;
  DifficultyReport report;
};

/// Asks every judge to rank each query's candidates (gold plus sampled
/// negatives, no user history) for `runs` runs. A query survives when every
/// judge's mean Hit@1 <= max_hit1 and mean Hit@3 <= max_hit3.
DifficultyResult difficulty_filter(const std::vector<EvalQuery>& queries, const std::vector<Judge>& judges,
                                   const DifficultyOptions& options = {});

}  // namespace prime
