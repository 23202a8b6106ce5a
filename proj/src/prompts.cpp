// SPDX-License-Identifier: Apache-2.0
#include "prime/prompts.hpp"

#include <algorithm>
#include <cctype>

#include "prime/error.hpp"
#include "prime/text.hpp"

namespace prime {

const std::string_view kEvalOutputInstruction =
    "Output format:\n"
    "Output a valid JSON array of \"option ID\" strings representing the selected replies. "
    "Each element must be a double-quoted string. The response should contain nothing but "
    "the JSON array and end with \"#END\".";

const std::string_view kThinkingInstruction =
    "You are an AI assistant designed with bionics-inspired episodic memory capabilities. Your objective "
    "is to approach the task by emulating human-like episodic recall, drawing from past interactions, "
    "contextual understanding, and nuanced reasoning to deliver informed and thoughtful judgments.\n"
    "\n"
    "Treat the author's past conversations as episodic memories that guide your reasoning and "
    "decision-making throughout the process. Prioritize capturing the user's values and patterns from "
    "past interactions and integrating these into your reasoning.\n"
    "\n"
    "Instructions\n"
    "1. Ingest Author History:\n"
    "   - Leveraging your trained semantic memory, extract and synthesize insights from the author's prior "
    "interactions. Summarize the author's past patterns, preferences, values, and beliefs to establish an "
    "episodic memory.\n"
    "   - Write a concise summary of history conversations within <user experience> tags. This summary "
    "should serve as your episodic memory for later steps.\n"
    "2. Summarize the New OP:\n"
    "   - Review the content of the new OP carefully, identifying salient events, major arguments, core "
    "themes, and the author's explicit and implicit viewpoints.\n"
    "   - Write a concise summary of the new OP within <OP summary> tags.\n"
    "3. Sketch an Outline:\n"
    "   - Combine insights from your episodic memory (<user experience>) with the context from the new OP "
    "(<OP summary>). Conduct reasoning that incorporates the author's past preferences and patterns to "
    "create a strategic outline for how to challenge or respond to the author's viewpoint.\n"
    "   - Highlight the most important points or questions for challenging the author's view and "
    "encapsulate these in a concise outline within <sketch outline> tags.\n"
    "4. Evaluate Candidate Replies:\n"
    "   - Analyze each candidate reply from the provided JSON file in terms of strength, relevance, and "
    "weaknesses. Base your evaluations on your episodic memory, OP reasoning, and the outlined strategy.\n"
    "   - Present this evaluation as a dictionary within <analysis> tags, e.g., {'option A': [analysis], "
    "'option B': [analysis], ...}.\n"
    "5. Reflect and Rank Top Replies:\n"
    "   - Reflect on and integrate all insights to determine the most compelling replies\xE2\x80\x94those "
    "engaging the author's view and providing reasoned, respectful, and novel insights.\n"
    "   - Identify the top three replies by option ID, ranking them from highest to lowest "
    "compellingness. Include your concise reflection within <reflection> tags.\n"
    "6. Answer and Conclude:\n"
    "   - Output your selection as a valid JSON array of strings within <answer> tags, e.g., "
    "[\"option ID\", \"option ID\", \"option ID\"].\n"
    "   - End your response immediately with #END.\n"
    "\n"
    "Output Format:\n"
    "<user experience>[concise user experience summary]</user experience>\n"
    "<OP summary>[concise OP summary]</OP summary>\n"
    "<sketch outline>[concise sketched outline]</sketch outline>\n"
    "<analysis>{'option A': [analysis], 'option B': [analysis], ...}</analysis>\n"
    "<reflection>[concise reflection]</reflection>\n"
    "<answer>[\"option ID\",\"option ID\",\"option ID\"]</answer>\n"
    "#END";

std::string option_label(std::size_t index) {
  if (index >= kMaxCandidates) throw FormatError("candidate label alphabet exhausted");
  return std::string("option ") + static_cast<char>('A' + index);
}

namespace {

std::string render_memory(const MemoryContext& memory) {
  std::string out;
  if (memory.summary) {
    out += "Profile summary of the author:\n";
    out += *memory.summary;
    out += "\n\n";
  }
  if (!memory.items.empty()) {
    out += "Past conversations of the author on the Change-My-View subreddit:\n\n";
    for (std::size_t i = 0; i < memory.items.size(); ++i) {
      const auto& c = memory.items[i];
      out += "[Past conversation " + std::to_string(i + 1) + "]\n";
      out += "OP title: " + c.op_title + "\n";
      out += "OP content: " + c.op_body + "\n";
      out += "Reply by " + c.reply_author + ": " + c.reply_body + "\n";
      out += c.positive() ? "Outcome: this reply received a delta from the author (it changed their view).\n\n"
                          : "Outcome: this reply did not receive a delta from the author.\n\n";
    }
  }
  return out;
}

std::string render_candidates(std::span<const Candidate> candidates) {
  std::string out = "[\n";
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    Json row;
    row["option ID"] = candidates[i].label;
    row["challenger"] = candidates[i].challenger;
    row["reply"] = candidates[i].reply;
    out += "  " + row.dump(-1, ' ', false, Json::error_handler_t::replace);
    out += i + 1 < candidates.size() ? ",\n" : "\n";
  }
  out += "]";
  return out;
}

}  // namespace

std::string render_input_part(const QueryContext& query, std::span<const Candidate> candidates,
                              const MemoryContext* memory) {
  if (candidates.empty()) throw FormatError("cannot render a query with no candidates");
  if (candidates.size() > kMaxCandidates) throw FormatError("more than 26 candidates; label alphabet exhausted");
  std::string out;
  out += "The author, " + query.author +
         ", has engaged with users on the Change-My-View subreddit across various original posts (OPs) "
         "and is seeking alternative opinions to alter their viewpoint.\n\n";
  if (memory && !memory->empty()) out += render_memory(*memory);
  out += "Currently, the author is creating a new OP titled\n";
  out += "\"" + query.op_title + "\"\n";
  out += "with the following content:\n\n";
  out += query.op_body + "\n\n";
  out += "From the \"candidate replies\" JSON file below, select the top 3 replies (using \"option ID\") "
         "that best challenge the author's view. Rank them from most to least compelling.\n\n";
  out += render_candidates(candidates);
  return out;
}

std::string render_eval_prompt(const QueryContext& query, std::span<const Candidate> candidates,
                               const MemoryContext* memory) {
  return render_input_part(query, candidates, memory) + "\n\n" + std::string(kEvalOutputInstruction);
}

std::string render_thinking_prompt(const QueryContext& query, std::span<const Candidate> candidates,
                                   const MemoryContext* memory) {
  return render_input_part(query, candidates, memory) + "\n\n" + std::string(kThinkingInstruction);
}

std::string parse_status_name(ParseStatus s) {
  switch (s) {
    case ParseStatus::ok: return "ok";
    case ParseStatus::repaired: return "repaired";
    case ParseStatus::failed: return "failed";
  }
  return "failed";
}

namespace {

// Returns the index one past the ']' closing the array opened at `open`, or
// npos when the bracket is unbalanced or the array nests.
std::size_t find_array_end(std::string_view s, std::size_t open) {
  char quote = 0;
  for (std::size_t i = open + 1; i < s.size(); ++i) {
    char c = s[i];
    if (quote) {
      if (c == '\\') {
        ++i;
      } else if (c == quote) {
        quote = 0;
      }
      continue;
    }
    if (c == '"' || c == '\'') quote = c;
    else if (c == '[') return std::string_view::npos;
    else if (c == ']') return i + 1;
  }
  return std::string_view::npos;
}

std::optional<std::vector<std::string>> parse_string_array(const std::string& s) {
  try {
    auto j = Json::parse(s);
    if (!j.is_array()) return std::nullopt;
    std::vector<std::string> out;
    for (const auto& e : j) {
      if (!e.is_string()) return std::nullopt;
      out.push_back(e.get<std::string>());
    }
    return out;
  } catch (const Json::exception&) {
    return std::nullopt;
  }
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

std::string repair_array_text(std::string s) {
  replace_all(s, "\xE2\x80\x9C", "\"");  // left double quotation mark
  replace_all(s, "\xE2\x80\x9D", "\"");  // right double quotation mark
  replace_all(s, "\xE2\x80\x98", "'");
  replace_all(s, "\xE2\x80\x99", "'");
  std::string out;
  char quote = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (quote) {
      if (c == '\\' && i + 1 < s.size()) {
        out += c;
        out += s[++i];
        continue;
      }
      if (c == quote) {
        quote = 0;
        out += '"';
      } else if (c == '"') {
        out += "\\\"";
      } else {
        out += c;
      }
      continue;
    }
    if (c == '"' || c == '\'') {
      quote = c;
      out += '"';
    } else if (c == ',') {
      std::size_t j = i + 1;
      while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      if (j < s.size() && s[j] == ']') continue;  // trailing comma
      out += c;
    } else {
      out += c;
    }
  }
  return out;
}

std::optional<std::string> match_label(std::string_view raw, std::span<const std::string> offered, bool& repaired) {
  for (const auto& o : offered)
    if (raw == o) return o;
  auto t = text::trim(raw);
  for (const auto& o : offered) {
    if (t.size() == o.size() && text::contains_icase(t, o)) {
      repaired = true;
      return o;
    }
    // Bare letter "F" for "option F".
    if (t.size() == 1 && o.size() == 8 && std::toupper(static_cast<unsigned char>(t[0])) == o[7]) {
      repaired = true;
      return o;
    }
  }
  return std::nullopt;
}

}  // namespace

RankedPrediction parse_option_array(std::string_view text, std::span<const std::string> offered_labels) {
  RankedPrediction pred;
  pred.raw_text = std::string(text);
  std::string_view region = text.substr(0, std::min(text.size(), text.find("#END")));

  std::optional<std::vector<std::string>> elements;
  bool repaired = false;
  for (std::size_t i = region.size(); i-- > 0;) {
    if (region[i] != '[') continue;
    auto end = find_array_end(region, i);
    if (end == std::string_view::npos) continue;
    std::string candidate(region.substr(i, end - i));
    if ((elements = parse_string_array(candidate))) break;
    if ((elements = parse_string_array(repair_array_text(candidate)))) {
      repaired = true;
      break;
    }
  }
  if (!elements) return pred;

  for (const auto& raw : *elements) {
    auto label = match_label(raw, offered_labels, repaired);
    if (!label) {
      repaired = true;
      continue;
    }
    if (std::find(pred.option_ids.begin(), pred.option_ids.end(), *label) != pred.option_ids.end()) {
      repaired = true;
      continue;
    }
    pred.option_ids.push_back(*label);
  }
  if (pred.option_ids.size() > kMaxPredictionLength) {
    pred.option_ids.resize(kMaxPredictionLength);
    repaired = true;
  }
  if (pred.option_ids.empty())
    pred.parse_status = ParseStatus::failed;
  else
    pred.parse_status = repaired ? ParseStatus::repaired : ParseStatus::ok;
  return pred;
}

const std::optional<std::string>& ThinkingTrace::section(std::string_view tag) const {
  for (std::size_t i = 0; i < kThinkingTags.size(); ++i)
    if (kThinkingTags[i] == tag) return sections[i];
  throw std::out_of_range("unknown thinking tag: " + std::string(tag));
}

std::vector<std::string> ThinkingTrace::missing() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < kThinkingTags.size(); ++i)
    if (!sections[i]) out.emplace_back(kThinkingTags[i]);
  return out;
}

std::size_t ThinkingTrace::present() const {
  return static_cast<std::size_t>(std::count_if(sections.begin(), sections.end(), [](const auto& s) { return s.has_value(); }));
}

ThinkingTrace parse_thinking_trace(std::string_view text) {
  ThinkingTrace trace;
  for (std::size_t i = 0; i < kThinkingTags.size(); ++i) {
    const std::string open = "<" + std::string(kThinkingTags[i]) + ">";
    const std::string close = "</" + std::string(kThinkingTags[i]) + ">";
    auto close_pos = text.find(close);
    if (close_pos == std::string_view::npos) continue;
    auto open_pos = text.rfind(open, close_pos);
    if (open_pos == std::string_view::npos || open_pos + open.size() > close_pos) continue;
    trace.sections[i] = std::string(text.substr(open_pos + open.size(), close_pos - open_pos - open.size()));
  }
  return trace;
}

RankedPrediction parse_thinking_answer(std::string_view text, std::span<const std::string> offered_labels) {
  auto trace = parse_thinking_trace(text);
  const auto& answer = trace.section("answer");
  if (!answer) {
    RankedPrediction p;
    p.raw_text = std::string(text);
    return p;
  }
  auto p = parse_option_array(*answer, offered_labels);
  p.raw_text = std::string(text);
  return p;
}

}  // namespace prime
