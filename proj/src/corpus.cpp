// SPDX-License-Identifier: Apache-2.0
#include "prime/corpus.hpp"

#include <boost/iostreams/device/file.hpp>
#include <boost/iostreams/filter/gzip.hpp>
#include <boost/iostreams/filter/zstd.hpp>
#include <boost/iostreams/filtering_stream.hpp>

#include <algorithm>
#include <fstream>
#include <future>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "prime/error.hpp"
#include "prime/text.hpp"

namespace prime {

namespace {

std::string label_name(Label l) { return l == Label::positive ? "positive" : "negative"; }

Label parse_label(const std::string& s) {
  if (s == "positive") return Label::positive;
  if (s == "negative") return Label::negative;
  throw FormatError("unknown label: " + s);
}

bool conversation_less(const Conversation& a, const Conversation& b) {
  return std::tie(a.created_utc, a.op_id, a.reply_id) < std::tie(b.created_utc, b.op_id, b.reply_id);
}

}  // namespace

Json to_json(const Conversation& c) {
  Json j;
  j["op_id"] = c.op_id;
  j["op_author"] = c.op_author;
  j["op_title"] = c.op_title;
  j["op_body"] = c.op_body;
  j["reply_id"] = c.reply_id;
  j["reply_author"] = c.reply_author;
  j["reply_body"] = c.reply_body;
  j["label"] = label_name(c.label);
  j["created_utc"] = c.created_utc;
  return j;
}

Conversation conversation_from_json(const Json& j) {
  try {
    Conversation c;
    c.op_id = j.at("op_id").get<std::string>();
    c.op_author = j.at("op_author").get<std::string>();
    c.op_title = j.at("op_title").get<std::string>();
    c.op_body = j.at("op_body").get<std::string>();
    c.reply_id = j.at("reply_id").get<std::string>();
    c.reply_author = j.at("reply_author").get<std::string>();
    c.reply_body = j.at("reply_body").get<std::string>();
    c.label = parse_label(j.at("label").get<std::string>());
    c.created_utc = j.at("created_utc").get<std::int64_t>();
    return c;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed conversation record: ") + e.what());
  }
}

Json to_json(const EvalQuery& q) {
  Json j;
  j["query_id"] = q.query_id;
  j["author"] = q.author;
  j["op_title"] = q.op_title;
  j["op_body"] = q.op_body;
  j["positive"] = to_json(q.positive);
  Json pool = Json::array();
  for (const auto& n : q.negative_pool) pool.push_back(to_json(n));
  j["negative_pool"] = std::move(pool);
  return j;
}

EvalQuery eval_query_from_json(const Json& j) {
  try {
    EvalQuery q;
    q.query_id = j.at("query_id").get<std::string>();
    q.author = j.at("author").get<std::string>();
    q.op_title = j.at("op_title").get<std::string>();
    q.op_body = j.at("op_body").get<std::string>();
    q.positive = conversation_from_json(j.at("positive"));
    for (const auto& n : j.at("negative_pool")) q.negative_pool.push_back(conversation_from_json(n));
    return q;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed query record: ") + e.what());
  }
}

namespace corpus {

namespace {

std::string strip_fullname(std::string s) {
  if (s.size() > 3 && s[0] == 't' && s[2] == '_' && s[1] >= '1' && s[1] <= '9') return s.substr(3);
  return s;
}

std::optional<std::string> optional_string(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

std::optional<std::int64_t> parse_time(const Json& j) {
  auto it = j.find("created_utc");
  if (it == j.end()) return std::nullopt;
  if (it->is_number_integer()) return it->get<std::int64_t>();
  if (it->is_number_float()) return static_cast<std::int64_t>(it->get<double>());
  if (it->is_string()) {
    try {
      std::size_t used = 0;
      const auto s = it->get<std::string>();
      std::int64_t v = std::stoll(s, &used);
      if (used != s.size()) return std::nullopt;
      return v;
    } catch (...) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

void read_lines(const std::filesystem::path& path, std::istream& in, IngestResult& out) {
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (text::trim(line).empty()) continue;
      if (auto rec = parse_submission(line))
        out.records.push_back(std::move(*rec));
      else
        ++out.skipped_lines;
    }
  } catch (const std::exception& e) {
    throw IoError("failed reading " + path.string() + ": " + e.what());
  }
}

IngestResult ingest_one(const std::filesystem::path& path) {
  namespace io = boost::iostreams;
  IngestResult result;
  {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("cannot read dump file " + path.string());
  }
  const auto ext = path.extension().string();
  if (ext == ".gz" || ext == ".zst" || ext == ".zstd") {
    io::filtering_istream in;
    if (ext == ".gz")
      in.push(io::gzip_decompressor());
    else
      in.push(io::zstd_decompressor());
    in.push(io::file_source(path.string(), std::ios::binary));
    read_lines(path, in, result);
  } else {
    std::ifstream in(path, std::ios::binary);
    read_lines(path, in, result);
  }
  return result;
}

}  // namespace

std::optional<RawSubmission> parse_submission(std::string_view line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::exception&) {
    return std::nullopt;
  }
  if (!j.is_object()) return std::nullopt;
  RawSubmission r;
  auto id = optional_string(j, "id");
  auto author = optional_string(j, "author");
  auto created = parse_time(j);
  if (!id || id->empty() || !author || !created || *created <= 0) return std::nullopt;
  r.id = strip_fullname(*id);
  r.author = *author;
  r.created_utc = *created;
  if (auto parent = optional_string(j, "parent_id")) {
    r.kind = SubmissionKind::comment;
    r.parent_id = strip_fullname(*parent);
  }
  if (auto link = optional_string(j, "link_id")) r.link_id = strip_fullname(*link);
  r.title = optional_string(j, "title").value_or("");
  if (r.kind == SubmissionKind::post)
    r.body = optional_string(j, "selftext").value_or(optional_string(j, "body").value_or(""));
  else
    r.body = optional_string(j, "body").value_or("");
  return r;
}

IngestResult ingest_dump(const std::vector<std::filesystem::path>& paths) {
  std::vector<std::future<IngestResult>> parts;
  parts.reserve(paths.size());
  for (const auto& p : paths) parts.push_back(std::async(std::launch::async, ingest_one, p));
  IngestResult all;
  for (auto& f : parts) {
    auto r = f.get();
    all.skipped_lines += r.skipped_lines;
    std::move(r.records.begin(), r.records.end(), std::back_inserter(all.records));
  }
  return all;
}

bool is_deleted_marker(std::string_view text) {
  auto t = text::trim(text);
  return t.find("[deleted]") != std::string_view::npos || t.find("[removed]") != std::string_view::npos;
}

FlattenResult flatten_threads(const std::vector<RawSubmission>& submissions) {
  std::unordered_map<std::string, const RawSubmission*> by_id;
  std::unordered_map<std::string, const RawSubmission*> posts;
  for (const auto& s : submissions) {
    by_id.emplace(s.id, &s);
    if (s.kind == SubmissionKind::post) posts.emplace(s.id, &s);
  }

  // Memoized root lookup; an empty string marks "no post reachable".
  std::unordered_map<std::string, std::string> root_of;
  auto find_root = [&](const RawSubmission& start) {
    std::vector<std::string> chain;
    std::unordered_set<std::string> seen;
    const RawSubmission* cur = &start;
    std::string root;
    while (true) {
      if (auto memo = root_of.find(cur->id); memo != root_of.end()) {
        root = memo->second;
        break;
      }
      if (!seen.insert(cur->id).second) break;  // cycle
      chain.push_back(cur->id);
      if (cur->kind == SubmissionKind::post) {
        root = cur->id;
        break;
      }
      auto parent = by_id.find(*cur->parent_id);
      if (parent == by_id.end()) break;
      cur = parent->second;
    }
    for (const auto& id : chain) root_of[id] = root;
    return root;
  };

  FlattenResult out;
  std::unordered_set<std::string> emitted;
  for (const auto& s : submissions) {
    if (s.kind != SubmissionKind::comment) continue;
    if (find_root(s).empty()) {
      ++out.orphan_comments;
      continue;
    }
    auto post_it = posts.find(*s.parent_id);
    if (post_it == posts.end()) continue;  // follow-up, depth >= 2
    if (!emitted.insert(s.id).second) continue;
    const RawSubmission& op = *post_it->second;
    Conversation c{op.id, op.author, op.title, op.body, s.id, s.author, s.body, Label::negative, op.created_utc};
    if (is_deleted_marker(c.op_author) || is_deleted_marker(c.op_title) || is_deleted_marker(c.op_body) ||
        is_deleted_marker(c.reply_author) || is_deleted_marker(c.reply_body)) {
      ++out.dropped_deleted;
      continue;
    }
    out.conversations.push_back(std::move(c));
  }
  std::sort(out.conversations.begin(), out.conversations.end(), conversation_less);
  return out;
}

bool contains_delta_marker(std::string_view text) {
  return text.find("\xCE\x94") != std::string_view::npos ||      // U+0394
         text.find("\xE2\x88\x86") != std::string_view::npos ||  // U+2206
         text.find("&#8710;") != std::string_view::npos || text::contains_icase(text, "!delta");
}

std::vector<Conversation> label_deltas(const std::vector<RawSubmission>& submissions,
                                       const std::vector<Conversation>& conversations,
                                       const DeltaRules& rules) {
  std::unordered_map<std::string, std::vector<const RawSubmission*>> children;
  std::unordered_set<std::string> seen_ids;
  for (const auto& s : submissions) {
    if (s.kind != SubmissionKind::comment || !seen_ids.insert(s.id).second) continue;
    children[*s.parent_id].push_back(&s);
  }

  auto awards = [&](const RawSubmission& c, const std::string& op_author) {
    if (c.author == op_author) return contains_delta_marker(c.body);
    if (rules.bot_account && c.author == *rules.bot_account)
      return contains_delta_marker(c.body) || text::contains_icase(c.body, "delta awarded");
    return false;
  };

  std::vector<Conversation> out = conversations;
  for (auto& conv : out) {
    conv.label = Label::negative;
    std::vector<const RawSubmission*> stack;
    std::unordered_set<std::string> visited{conv.reply_id};
    if (auto it = children.find(conv.reply_id); it != children.end())
      stack.assign(it->second.begin(), it->second.end());
    while (!stack.empty()) {
      const RawSubmission* c = stack.back();
      stack.pop_back();
      if (!visited.insert(c->id).second) continue;
      if (awards(*c, conv.op_author)) {
        conv.label = Label::positive;
        break;
      }
      if (auto it = children.find(c->id); it != children.end())
        stack.insert(stack.end(), it->second.begin(), it->second.end());
    }
  }
  return out;
}

CorpusSplit split_by_time(std::vector<Conversation> conversations, std::int64_t cutoff_utc) {
  CorpusSplit split;
  split.cutoff_utc = cutoff_utc;
  for (auto& c : conversations) (c.created_utc < cutoff_utc ? split.history : split.eval_pool).push_back(std::move(c));
  std::sort(split.history.begin(), split.history.end(), conversation_less);
  std::sort(split.eval_pool.begin(), split.eval_pool.end(), conversation_less);
  return split;
}

std::vector<std::string> select_active_users(const CorpusSplit& split, std::size_t min_history_deltas) {
  std::map<std::string, std::size_t> history_deltas;
  std::set<std::string> eval_deltas;
  for (const auto& c : split.history)
    if (c.positive()) ++history_deltas[c.op_author];
  for (const auto& c : split.eval_pool)
    if (c.positive()) eval_deltas.insert(c.op_author);
  std::vector<std::string> out;
  for (const auto& [author, n] : history_deltas)
    if (n >= min_history_deltas && eval_deltas.count(author)) out.push_back(author);
  return out;
}

QueryBuildResult build_queries(const CorpusSplit& split, const std::vector<std::string>& authors) {
  const std::set<std::string> selected(authors.begin(), authors.end());
  std::map<std::string, std::vector<const Conversation*>> negatives_by_op;
  for (const auto& c : split.eval_pool)
    if (!c.positive() && selected.count(c.op_author)) negatives_by_op[c.op_id].push_back(&c);

  QueryBuildResult out;
  for (const auto& c : split.eval_pool) {
    if (!c.positive() || !selected.count(c.op_author)) continue;
    auto it = negatives_by_op.find(c.op_id);
    if (it == negatives_by_op.end() || it->second.empty()) {
      ++out.dropped_empty_pool;
      continue;
    }
    EvalQuery q{c.op_id + "/" + c.reply_id, c.op_author, c.op_title, c.op_body, c, {}};
    for (const auto* n : it->second) q.negative_pool.push_back(*n);
    out.queries.push_back(std::move(q));
  }
  return out;
}

std::vector<Conversation> history_for(const CorpusSplit& split, const std::vector<std::string>& authors) {
  const std::set<std::string> selected(authors.begin(), authors.end());
  std::vector<Conversation> out;
  for (const auto& c : split.history)
    if (selected.count(c.op_author)) out.push_back(c);
  return out;
}

void write_conversations(const std::filesystem::path& path, const std::vector<Conversation>& rows) {
  std::vector<Json> js;
  js.reserve(rows.size());
  for (const auto& r : rows) js.push_back(to_json(r));
  write_file_atomic(path, to_jsonl(js));
}

std::vector<Conversation> read_conversations(const std::filesystem::path& path) {
  std::vector<Conversation> out;
  for (const auto& j : read_jsonl(path)) out.push_back(conversation_from_json(j));
  return out;
}

void write_queries(const std::filesystem::path& path, const std::vector<EvalQuery>& rows) {
  std::vector<Json> js;
  js.reserve(rows.size());
  for (const auto& r : rows) js.push_back(to_json(r));
  write_file_atomic(path, to_jsonl(js));
}

std::vector<EvalQuery> read_queries(const std::filesystem::path& path) {
  std::vector<EvalQuery> out;
  for (const auto& j : read_jsonl(path)) out.push_back(eval_query_from_json(j));
  return out;
}

}  // namespace corpus
}  // namespace prime
