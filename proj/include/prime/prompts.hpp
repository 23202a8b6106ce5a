// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prime/corpus.hpp"

namespace prime {

/// A reply offered to the model under a presentation label ("option A"...).
struct Candidate {
  std::string label;
  std::string reply_id;
  std::string challenger;
  std::string reply;
};

struct QueryContext {
  std::string author;
  std::string op_title;
  std::string op_body;
};

/// Memory prepended ahead of the current OP: an optional profile summary,
/// then recalled past conversations in recall order.
struct MemoryContext {
  std::optional<std::string> summary;
  std::vector<Conversation> items;

  bool empty() const { return !summary && items.empty(); }
};

inline constexpr std::size_t kMaxCandidates = 26;

/// "option A" for 0, ... "option Z" for 25.
std::string option_label(std::size_t index);

/// Input part of the ranking prompt: author sentence, optional memory block,
/// the current OP and the candidate replies as a JSON array.
/// Throws FormatError for 0 or more than 26 candidates.
std::string render_input_part(const QueryContext& query, std::span<const Candidate> candidates,
                              const MemoryContext* memory = nullptr);

/// Standard ranking prompt: input part + JSON-array output instruction.
std::string render_eval_prompt(const QueryContext& query, std::span<const Candidate> candidates,
                               const MemoryContext* memory = nullptr);

/// Personalized thinking prompt: input part + six-step tagged instruction block.
std::string render_thinking_prompt(const QueryContext& query, std::span<const Candidate> candidates,
                                   const MemoryContext* memory = nullptr);

/// The fixed output-instruction blocks, exposed for tests.
extern const std::string_view kEvalOutputInstruction;
extern const std::string_view kThinkingInstruction;

enum class ParseStatus { ok, repaired, failed };
std::string parse_status_name(ParseStatus s);

struct RankedPrediction {
  std::vector<std::string> option_ids;
  std::string raw_text;
  ParseStatus parse_status = ParseStatus::failed;

  std::optional<std::string> first() const {
    if (option_ids.empty()) return std::nullopt;
    return option_ids.front();
  }
};

inline constexpr std::size_t kMaxPredictionLength = 3;

/// Takes the last well-formed JSON array of strings before the first "#END".
/// Repairs (reported as `repaired`): single or curly quotes, trailing commas,
/// case or bare-letter labels, unknown labels and duplicates dropped, lists
/// longer than three cut. `failed` when nothing usable remains.
RankedPrediction parse_option_array(std::string_view text, std::span<const std::string> offered_labels);

inline constexpr std::array<std::string_view, 6> kThinkingTags = {
    "user experience", "OP summary", "sketch outline", "analysis", "reflection", "answer"};

struct ThinkingTrace {
  std::array<std::optional<std::string>, kThinkingTags.size()> sections;

  const std::optional<std::string>& section(std::string_view tag) const;
  std::vector<std::string> missing() const;
  std::size_t present() const;
  bool complete() const { return present() == kThinkingTags.size(); }
};

/// For each tag, the body of the first balanced pair: the first closing tag
/// matched with the nearest opening tag before it. Tags without such a pair
/// are missing.
ThinkingTrace parse_thinking_trace(std::string_view text);

/// parse_option_array over the <answer> section; failed when it is missing.
RankedPrediction parse_thinking_answer(std::string_view text, std::span<const std::string> offered_labels);

}  // namespace prime
