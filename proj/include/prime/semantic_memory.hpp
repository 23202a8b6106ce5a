// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "prime/corpus.hpp"
#include "prime/error.hpp"
#include "prime/llm_gateway.hpp"
#include "prime/tensor_archive.hpp"

namespace prime {

enum class Objective { NTP, CIG, O_FT, T_FT, DPO, SIMPO };

std::string objective_name(Objective o);
Objective parse_objective(const std::string& s);
inline bool is_preference(Objective o) { return o == Objective::DPO || o == Objective::SIMPO; }

/// Declared shapes ([d_out, d_in]) of the base-model weights adapters may target.
struct BaseManifest {
  std::string model;
  std::map<std::string, std::vector<std::int64_t>> weights;

  static BaseManifest from_json(const Json& j);
  static BaseManifest load(const std::filesystem::path& path);
  Json to_json() const;
};

/// LoRA tensor names for a targeted base weight.
std::string lora_a_name(const std::string& weight);
std::string lora_b_name(const std::string& weight);

/// Per-user low-rank weight delta. For each targeted weight W (d_out x d_in)
/// the archive holds "<W>.lora_A" (r x d_in) and "<W>.lora_B" (d_out x r).
struct AdapterRef {
  std::string user;
  Objective objective = Objective::T_FT;
  int rank = 8;
  double alpha = 16.0;
  TensorArchive tensors;
  std::string provenance;

  std::string id() const { return user + "/" + objective_name(objective); }
  double scale() const { return alpha / static_cast<double>(rank); }
  /// Base weight names the adapter targets, sorted.
  std::vector<std::string> targets() const;
};

/// Checks A/B pairing and rank. With a manifest, also checks that every pair
/// composes with the declared base weight shape. Throws FormatError.
void validate_adapter(const AdapterRef& adapter, const BaseManifest* manifest = nullptr);

/// W' = W + (alpha / r) * B * A for every targeted weight; other tensors are
/// copied unchanged. Throws FormatError for a missing or mismatched base tensor.
TensorArchive merge_adapter(const TensorArchive& base, const AdapterRef& adapter);

/// Fresh adapter before training: A ~ U(-1/sqrt(d_in), 1/sqrt(d_in)) seeded,
/// B = 0, so merging it is the identity.
AdapterRef init_adapter(const std::string& user, Objective objective, const BaseManifest& manifest, int rank,
                        double alpha, std::uint64_t seed);

/// Directory-backed registry: <root>/<user>/<objective>/{adapter.tensors, meta.json}.
/// Reads may run concurrently; registration is serialized.
class AdapterRegistry {
 public:
  AdapterRegistry(std::filesystem::path root, BaseManifest manifest);

  /// Throws FormatError on shape mismatch and Error when the slot is taken
  /// and replace is false.
  void register_adapter(const AdapterRef& adapter, bool replace = false);
  bool contains(const std::string& user, Objective objective) const;
  AdapterRef fetch(const std::string& user, Objective objective) const;
  /// (user, objective) pairs present on disk, sorted.
  std::vector<std::pair<std::string, Objective>> list() const;

  const BaseManifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path slot(const std::string& user, Objective objective) const;

  std::filesystem::path root_;
  BaseManifest manifest_;
  mutable std::shared_mutex mu_;
};

struct SupervisedExample {
  std::string input;
  std::string output;
};

struct PreferenceExample {
  std::string input;
  std::string chosen;
  std::string rejected;
};

struct JobOptions {
  int epochs = 3;
  int rank = 8;
  double alpha = 16.0;
  std::uint64_t seed = 0;
  std::size_t negatives_per_example = 9;
};

/// Input/output rendering for one parametric memory objective. Supervised
/// objectives fill `examples`; DPO/SIMPO fill `preferences`.
struct TrainingJobSpec {
  std::string job_id;
  std::string user;
  Objective objective = Objective::T_FT;
  std::vector<SupervisedExample> examples;
  std::vector<PreferenceExample> preferences;
  JobOptions hyper;

  std::size_t example_count() const { return is_preference(objective) ? preferences.size() : examples.size(); }
  Json job_json() const;
  std::vector<Json> example_rows() const;
  /// Writes job.json and examples.jsonl into dir.
  void save(const std::filesystem::path& dir) const;
};

class ObjectiveUnavailable : public Error {
 public:
  using Error::Error;
};

/// Renders the user's own OP history into training examples. Throws
/// ObjectiveUnavailable when the history cannot support the objective.
TrainingJobSpec build_training_job(const std::string& user, const std::vector<Conversation>& history,
                                   Objective objective, const JobOptions& options = {});

enum class SummaryMethod { HSumm, PKR };

struct ProfileSummary {
  std::string user;
  std::string text;
  SummaryMethod method = SummaryMethod::PKR;
  std::size_t source_span = 0;

  Json to_json() const;
  static ProfileSummary from_json(const Json& j);
};

std::string summary_method_name(SummaryMethod m);

/// Prompt builders for the summarization calls, exposed for tests.
std::string render_chunk_summary_prompt(const std::string& user, std::span<const Conversation> chunk);
std::string render_fold_prompt(const std::string& user, const std::string& previous, const std::string& next);
std::string render_pkr_prompt(const std::string& user);

/// Chronological chunks of chunk_size, each summarized, then folded left to
/// right into one running summary. Provider failures throw ProviderError
/// naming the chunk index.
ProfileSummary hierarchical_summarize(const Session& session, const std::string& user,
                                      const std::vector<Conversation>& history, std::size_t chunk_size);

/// Elicits a profile from a session whose adapter is the user's trained
/// adapter. Throws ConfigError without an adapter, ProviderError on an empty
/// or failed completion.
ProfileSummary pkr_summarize(const Session& session_with_adapter, const std::string& user);

}  // namespace prime
