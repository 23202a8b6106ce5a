// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "prime/analysis.hpp"
#include "prime/difficulty_filter.hpp"
#include "prime/episodic_memory.hpp"
#include "prime/eval_harness.hpp"
#include "prime/llm_gateway.hpp"
#include "prime/thinking_synthesis.hpp"

namespace prime {

struct ProviderSpec {
  std::string type;  // "mock" or "remote"
  std::filesystem::path script;
  RemoteConfig remote;
  std::size_t max_in_flight = 8;
};

struct EmbedderSpec {
  std::string type = "hashed_bow";  // or "remote"
  std::size_t dim = 256;
  std::uint64_t seed = 0;
  RemoteEmbeddingConfig remote;
};

struct CorpusSettings {
  std::vector<std::filesystem::path> dumps;
  std::int64_t cutoff_utc = corpus::kDefaultCutoffUtc;
  std::size_t min_history_deltas = 10;
  std::optional<std::string> bot_account;
};

struct MemorySettings {
  std::size_t k = 3;
  Bm25Params bm25;
  int rank = 8;
  double alpha = 16.0;
  int epochs = 3;
  std::optional<std::filesystem::path> base_manifest;
  std::size_t hsumm_chunk = 5;
  std::uint64_t seed = 0;
};

struct EngineConfig {
  std::filesystem::path output_dir = "out";
  std::size_t parallelism = 4;
  std::map<std::string, ProviderSpec> providers;
  /// Provider used when a role is not assigned.
  std::string default_provider;
  std::vector<std::string> judges;
  EmbedderSpec embedder;
  CorpusSettings corpus;
  MemorySettings memory;
  EvalConfig eval;
  DifficultyOptions difficulty;
  SynthesisOptions synthesis;

  /// Effective configuration with every default spelled out.
  Json to_json() const;
};

/// Strict reader: any unknown key, wrong type or missing referenced file
/// throws ConfigError. Relative paths resolve against the file's directory.
EngineConfig parse_engine_config(const Json& j, const std::filesystem::path& base_dir = ".");
EngineConfig load_engine_config(const std::filesystem::path& path);

std::shared_ptr<Provider> make_provider(const ProviderSpec& spec);
std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec);

}  // namespace prime
