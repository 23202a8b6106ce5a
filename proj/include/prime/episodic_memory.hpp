// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "prime/corpus.hpp"

namespace prime {

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

/// Corpus statistics for one user's documents.
struct IndexStats {
  std::size_t doc_count = 0;
  double avg_length = 0.0;
  std::unordered_map<std::string, std::size_t> doc_freq;

  std::size_t df(const std::string& term) const {
    auto it = doc_freq.find(term);
    return it == doc_freq.end() ? 0 : it->second;
  }
};

/// Term frequencies and length of one tokenized document.
struct DocTerms {
  std::unordered_map<std::string, std::size_t> tf;
  std::size_t length = 0;
};

DocTerms make_doc_terms(const std::vector<std::string>& tokens);

/// Okapi BM25 with IDF = ln(1 + (N - df + 0.5) / (df + 0.5)).
/// Repeated query terms contribute once per occurrence.
double bm25_score(const std::vector<std::string>& query_terms, const DocTerms& doc, const IndexStats& stats,
                  const Bm25Params& params = {});

/// Retrieval unit text: the OP fields and the reply joined by newlines.
std::string retrieval_text(const Conversation& c);

enum class RecallStrategy { recent, relevant };
std::string strategy_name(RecallStrategy s);
RecallStrategy parse_strategy(const std::string& s);

struct ProfileSummary;

struct RecallResult {
  std::vector<Conversation> items;
  /// BM25 score per item (relevant strategy only).
  std::vector<double> scores;
  RecallStrategy strategy = RecallStrategy::recent;
  std::optional<std::string> augmentation;
  bool unknown_user = false;
};

/// Per-user chronological history plus a per-user BM25 index.
/// Immutable after construction; concurrent reads are safe.
class EpisodicStore {
 public:
  static constexpr const char* kFormat = "episodic_store_v1";

  EpisodicStore() = default;

  /// Throws FormatError on a duplicate reply_id.
  static EpisodicStore build(const std::vector<Conversation>& history, Bm25Params params = {});

  /// Newest-first recent items, or top-k BM25 over the user's documents
  /// (ties: newer first, then reply_id). Unknown users yield an empty result
  /// with unknown_user set.
  RecallResult recall(const std::string& user, const std::string& query_text, RecallStrategy strategy,
                      std::size_t k = 3) const;

  bool has_user(const std::string& user) const { return users_.count(user) != 0; }
  std::vector<std::string> users() const;
  const std::vector<Conversation>& history(const std::string& user) const;
  const IndexStats& stats(const std::string& user) const;
  std::size_t size() const;
  const Bm25Params& params() const { return params_; }

  /// Writes docs.jsonl + index.json into dir.
  void save(const std::filesystem::path& dir) const;
  /// Loads and verifies that index.json matches statistics re-derived from docs.jsonl.
  static EpisodicStore load(const std::filesystem::path& dir);

 private:
  struct UserIndex {
    std::vector<Conversation> items;  // ascending created_utc
    std::vector<DocTerms> docs;       // parallel to items
    IndexStats stats;
  };
  std::map<std::string, UserIndex> users_;
  Bm25Params params_;
};

/// Attaches (or replaces) the profile summary used for textual-summary augmentation.
RecallResult augment_with_summary(RecallResult result, const ProfileSummary& summary);

}  // namespace prime
