// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "prime/json_io.hpp"

namespace prime {

enum class SubmissionKind { post, comment };

/// One line of a forum dump, normalized: fullname prefixes ("t1_", "t3_")
/// are stripped from parent_id and link_id.
struct RawSubmission {
  std::string id;
  std::string author;
  std::string title;
  std::string body;
  std::int64_t created_utc = 0;
  SubmissionKind kind = SubmissionKind::post;
  std::optional<std::string> parent_id;
  std::optional<std::string> link_id;
};

enum class Label { negative, positive };

/// A flattened (OP, direct reply) pair. created_utc is the OP's timestamp,
/// so every reply under one OP lands on the same side of the time split.
struct Conversation {
  std::string op_id;
  std::string op_author;
  std::string op_title;
  std::string op_body;
  std::string reply_id;
  std::string reply_author;
  std::string reply_body;
  Label label = Label::negative;
  std::int64_t created_utc = 0;

  bool positive() const { return label == Label::positive; }
  bool operator==(const Conversation&) const = default;
};

struct CorpusSplit {
  std::vector<Conversation> history;
  std::vector<Conversation> eval_pool;
  std::int64_t cutoff_utc = 0;
};

struct EvalQuery {
  std::string query_id;
  std::string author;
  std::string op_title;
  std::string op_body;
  Conversation positive;
  std::vector<Conversation> negative_pool;
};

Json to_json(const Conversation& c);
Conversation conversation_from_json(const Json& j);
Json to_json(const EvalQuery& q);
EvalQuery eval_query_from_json(const Json& j);

namespace corpus {

/// 2023-01-01T00:00:00Z.
inline constexpr std::int64_t kDefaultCutoffUtc = 1672531200;

struct IngestResult {
  std::vector<RawSubmission> records;
  std::size_t skipped_lines = 0;
};

/// Parses one dump line. Returns nullopt for malformed or invalid records.
std::optional<RawSubmission> parse_submission(std::string_view line);

/// Reads newline-delimited JSON dumps (".gz" and ".zst" decompressed by
/// extension). Files are read in parallel; output keeps file then line order.
/// Throws IoError for an unreadable file.
IngestResult ingest_dump(const std::vector<std::filesystem::path>& paths);

struct FlattenResult {
  std::vector<Conversation> conversations;
  std::size_t orphan_comments = 0;
  std::size_t dropped_deleted = 0;
};

/// True when the trimmed text equals or contains "[deleted]" / "[removed]".
bool is_deleted_marker(std::string_view text);

/// One Conversation per (post, direct reply). Deeper comments are not
/// emitted. Comments whose ancestry never reaches a post are orphans.
/// Output is sorted by (created_utc, op_id, reply_id).
FlattenResult flatten_threads(const std::vector<RawSubmission>& submissions);

struct DeltaRules {
  /// When set, comments by this account within a reply's subtree also award
  /// the delta (a marker or the phrase "delta awarded").
  std::optional<std::string> bot_account;
};

bool contains_delta_marker(std::string_view text);

/// Recomputes labels: positive iff a comment inside the reply's subtree
/// (the reply itself excluded) authored by the OP author, or by the bot
/// account in bot mode, carries a delta marker.
std::vector<Conversation> label_deltas(const std::vector<RawSubmission>& submissions,
                                       const std::vector<Conversation>& conversations,
                                       const DeltaRules& rules = {});

/// Items with created_utc >= cutoff go to eval_pool.
CorpusSplit split_by_time(std::vector<Conversation> conversations, std::int64_t cutoff_utc);

std::vector<std::string> select_active_users(const CorpusSplit& split,
                                             std::size_t min_history_deltas = 10);

struct QueryBuildResult {
  std::vector<EvalQuery> queries;
  std::size_t dropped_empty_pool = 0;
};

/// One query per positive eval_pool Conversation of a selected author; all
/// other direct replies to the same OP form the negative pool.
QueryBuildResult build_queries(const CorpusSplit& split, const std::vector<std::string>& authors);

/// History of the given authors only (as OP authors), chronological.
std::vector<Conversation> history_for(const CorpusSplit& split,
                                      const std::vector<std::string>& authors);

void write_conversations(const std::filesystem::path& path, const std::vector<Conversation>& rows);
std::vector<Conversation> read_conversations(const std::filesystem::path& path);
void write_queries(const std::filesystem::path& path, const std::vector<EvalQuery>& rows);
std::vector<EvalQuery> read_queries(const std::filesystem::path& path);

}  // namespace corpus
}  // namespace prime
