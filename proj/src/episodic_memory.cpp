// SPDX-License-Identifier: Apache-2.0
#include "prime/episodic_memory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_set>

#include "prime/error.hpp"
#include "prime/semantic_memory.hpp"
#include "prime/text.hpp"

namespace prime {

DocTerms make_doc_terms(const std::vector<std::string>& tokens) {
  DocTerms d;
  d.length = tokens.size();
  for (const auto& t : tokens) ++d.tf[t];
  return d;
}

double bm25_score(const std::vector<std::string>& query_terms, const DocTerms& doc, const IndexStats& stats,
                  const Bm25Params& params) {
  if (stats.doc_count == 0) return 0.0;
  const double n = static_cast<double>(stats.doc_count);
  const double norm = stats.avg_length > 0 ? static_cast<double>(doc.length) / stats.avg_length : 0.0;
  double score = 0.0;
  for (const auto& term : query_terms) {
    auto it = doc.tf.find(term);
    if (it == doc.tf.end()) continue;
    const double tf = static_cast<double>(it->second);
    const double df = static_cast<double>(stats.df(term));
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    score += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm));
  }
  return score;
}

std::string retrieval_text(const Conversation& c) { return c.op_title + "\n" + c.op_body + "\n" + c.reply_body; }

std::string strategy_name(RecallStrategy s) { return s == RecallStrategy::recent ? "recent" : "relevant"; }

RecallStrategy parse_strategy(const std::string& s) {
  if (s == "recent") return RecallStrategy::recent;
  if (s == "relevant") return RecallStrategy::relevant;
  throw ConfigError("unknown recall strategy: " + s);
}

EpisodicStore EpisodicStore::build(const std::vector<Conversation>& history, Bm25Params params) {
  EpisodicStore store;
  store.params_ = params;
  std::unordered_set<std::string> reply_ids;
  for (const auto& c : history) {
    if (!reply_ids.insert(c.reply_id).second) throw FormatError("duplicate reply_id in history: " + c.reply_id);
    store.users_[c.op_author].items.push_back(c);
  }
  for (auto& [user, idx] : store.users_) {
    std::stable_sort(idx.items.begin(), idx.items.end(), [](const Conversation& a, const Conversation& b) {
      return std::tie(a.created_utc, a.op_id, a.reply_id) < std::tie(b.created_utc, b.op_id, b.reply_id);
    });
    std::size_t total = 0;
    for (const auto& c : idx.items) {
      idx.docs.push_back(make_doc_terms(text::tokenize(retrieval_text(c))));
      total += idx.docs.back().length;
      for (const auto& [term, tf] : idx.docs.back().tf) ++idx.stats.doc_freq[term];
    }
    idx.stats.doc_count = idx.items.size();
    idx.stats.avg_length = idx.items.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(idx.items.size());
  }
  return store;
}

RecallResult EpisodicStore::recall(const std::string& user, const std::string& query_text, RecallStrategy strategy,
                                   std::size_t k) const {
  RecallResult out;
  out.strategy = strategy;
  auto it = users_.find(user);
  if (it == users_.end()) {
    out.unknown_user = true;
    return out;
  }
  const UserIndex& idx = it->second;
  const std::size_t take = std::min(k, idx.items.size());
  if (take == 0) return out;

  if (strategy == RecallStrategy::recent) {
    for (std::size_t i = 0; i < take; ++i) out.items.push_back(idx.items[idx.items.size() - 1 - i]);
    return out;
  }

  const auto query = text::tokenize(query_text);
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(idx.items.size());
  for (std::size_t i = 0; i < idx.items.size(); ++i)
    scored.emplace_back(bm25_score(query, idx.docs[i], idx.stats, params_), i);
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    const auto& ca = idx.items[a.second];
    const auto& cb = idx.items[b.second];
    if (ca.created_utc != cb.created_utc) return ca.created_utc > cb.created_utc;
    return ca.reply_id < cb.reply_id;
  });
  for (std::size_t i = 0; i < take; ++i) {
    out.items.push_back(idx.items[scored[i].second]);
    out.scores.push_back(scored[i].first);
  }
  return out;
}

std::vector<std::string> EpisodicStore::users() const {
  std::vector<std::string> out;
  for (const auto& [u, _] : users_) out.push_back(u);
  return out;
}

const std::vector<Conversation>& EpisodicStore::history(const std::string& user) const {
  static const std::vector<Conversation> empty;
  auto it = users_.find(user);
  return it == users_.end() ? empty : it->second.items;
}

const IndexStats& EpisodicStore::stats(const std::string& user) const {
  static const IndexStats empty;
  auto it = users_.find(user);
  return it == users_.end() ? empty : it->second.stats;
}

std::size_t EpisodicStore::size() const {
  std::size_t n = 0;
  for (const auto& [_, idx] : users_) n += idx.items.size();
  return n;
}

namespace {

Json index_json(const std::map<std::string, std::vector<std::size_t>>& lengths,
                const std::map<std::string, const IndexStats*>& stats, const Bm25Params& params) {
  Json j;
  j["format"] = EpisodicStore::kFormat;
  j["bm25"] = {{"k1", params.k1}, {"b", params.b}};
  Json users = Json::object();
  for (const auto& [user, st] : stats) {
    Json u;
    u["doc_count"] = st->doc_count;
    u["avg_length"] = st->avg_length;
    u["doc_lengths"] = lengths.at(user);
    std::map<std::string, std::size_t> sorted(st->doc_freq.begin(), st->doc_freq.end());
    Json df = Json::object();
    for (const auto& [term, n] : sorted) df[term] = n;
    u["doc_freq"] = std::move(df);
    users[user] = std::move(u);
  }
  j["users"] = std::move(users);
  return j;
}

}  // namespace

void EpisodicStore::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::vector<Json> docs;
  std::map<std::string, std::vector<std::size_t>> lengths;
  std::map<std::string, const IndexStats*> stats;
  for (const auto& [user, idx] : users_) {
    for (std::size_t i = 0; i < idx.items.size(); ++i) {
      docs.push_back(to_json(idx.items[i]));
      lengths[user].push_back(idx.docs[i].length);
    }
    stats[user] = &idx.stats;
  }
  write_file_atomic(dir / "docs.jsonl", to_jsonl(docs));
  write_file_atomic(dir / "index.json", dump_pretty(index_json(lengths, stats, params_)));
}

EpisodicStore EpisodicStore::load(const std::filesystem::path& dir) {
  Json index;
  try {
    index = Json::parse(read_file(dir / "index.json"));
  } catch (const Json::exception& e) {
    throw FormatError("bad episodic index: " + std::string(e.what()));
  }
  if (index.value("format", "") != kFormat)
    throw FormatError("episodic store at " + dir.string() + " is not " + std::string(kFormat));
  Bm25Params params{index["bm25"].value("k1", 1.2), index["bm25"].value("b", 0.75)};
  std::vector<Conversation> history;
  for (const auto& j : read_jsonl(dir / "docs.jsonl")) history.push_back(conversation_from_json(j));
  EpisodicStore store = build(history, params);

  std::map<std::string, std::vector<std::size_t>> lengths;
  std::map<std::string, const IndexStats*> stats;
  for (const auto& [user, idx] : store.users_) {
    for (const auto& d : idx.docs) lengths[user].push_back(d.length);
    stats[user] = &idx.stats;
  }
  if (index_json(lengths, stats, params).dump() != index.dump())
    throw FormatError("episodic index at " + dir.string() + " is inconsistent with docs.jsonl");
  return store;
}

RecallResult augment_with_summary(RecallResult result, const ProfileSummary& summary) {
  if (text::trim(summary.text).empty()) throw FormatError("augmentation summary is empty");
  result.augmentation = summary.text;
  return result;
}

}  // namespace prime
