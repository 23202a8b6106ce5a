// SPDX-License-Identifier: Apache-2.0
#include "prime/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <thread>

#include "httplib.h"
#include "prime/error.hpp"
#include "prime/parallel.hpp"
#include "prime/seed.hpp"
#include "prime/text.hpp"

namespace prime {

namespace {

std::vector<double> normalized(std::vector<double> v, const std::string& what) {
  double norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (!(norm > 0) || !std::isfinite(norm)) throw Error("embedding for " + what + " has zero or non-finite norm");
  for (double& x : v) x /= norm;
  return v;
}

}  // namespace

std::vector<double> HashedBowEmbedder::embed(const std::string& text) {
  if (dim_ < 1) throw ConfigError("embedding dimension must be >= 1");
  std::vector<double> v(dim_, 0.0);
  for (const auto& tok : text::tokenize(text)) {
    const auto h = derive_seed(seed_, tok);
    v[h % dim_] += (h >> 63) ? -1.0 : 1.0;
  }
  return v;
}

RemoteEmbedder::RemoteEmbedder(RemoteEmbeddingConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.endpoint.empty()) throw ConfigError("remote embedder needs an endpoint");
  if (cfg_.retries < 1) throw ConfigError("remote embedder retries must be >= 1");
}

std::vector<double> RemoteEmbedder::embed(const std::string& text) {
  const auto url = split_endpoint(cfg_.endpoint, "embeddings");
  const std::string payload = Json{{"model", cfg_.model}, {"input", text}}.dump();
  httplib::Headers headers;
  if (!cfg_.api_key_env.empty())
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()))
      headers.emplace("Authorization", std::string("Bearer ") + key);
  std::string error;
  for (int attempt = 1; attempt <= cfg_.retries; ++attempt) {
    httplib::Client client(url.origin);
    client.set_connection_timeout(cfg_.timeout_s, 0);
    client.set_read_timeout(cfg_.timeout_s, 0);
    auto res = client.Post(url.path, headers, payload, "application/json");
    bool retryable = true;
    if (!res) {
      error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status == 200) {
      try {
        return Json::parse(res->body).at("data").at(0).at("embedding").get<std::vector<double>>();
      } catch (const Json::exception& e) {
        throw ProviderError(std::string("malformed embedding response: ") + e.what());
      }
    } else {
      error = "HTTP " + std::to_string(res->status);
      retryable = res->status == 429 || res->status >= 500;
    }
    if (!retryable) break;
    if (attempt < cfg_.retries)
      std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.backoff_ms * (1LL << (attempt - 1))));
  }
  throw ProviderError("embedding request failed: " + error);
}

Json AuthorIndex::to_json() const {
  Json j;
  j["source"] = source;
  j["dimension"] = dimension;
  Json v = Json::object();
  for (const auto& [a, vec] : vectors) v[a] = vec;
  j["vectors"] = std::move(v);
  return j;
}

std::string author_profile_text(const std::string& author, const std::vector<Conversation>& history) {
  std::vector<const Conversation*> own;
  std::set<std::string> seen;
  for (const auto& c : history)
    if (c.op_author == author && seen.insert(c.op_id).second) own.push_back(&c);
  std::stable_sort(own.begin(), own.end(), [](const Conversation* a, const Conversation* b) {
    return std::tie(a->created_utc, a->op_id) < std::tie(b->created_utc, b->op_id);
  });
  std::vector<std::string> blocks;
  for (const auto* c : own) blocks.push_back(c->op_title + "\n" + c->op_body);
  return text::join(blocks, "\n\n");
}

AuthorIndex build_author_index(const std::vector<std::string>& authors, const std::vector<Conversation>& history,
                               Embedder& embedder, std::size_t parallelism) {
  std::vector<std::vector<double>> vecs(authors.size());
  parallel_for(authors.size(), parallelism, [&](std::size_t i) {
    const auto& a = authors[i];
    const auto profile = author_profile_text(a, history);
    if (profile.empty()) throw Error("author " + a + " has no history to embed");
    std::vector<double> v;
    try {
      v = embedder.embed(profile);
    } catch (const std::exception& e) {
      throw Error("embedding failed for author " + a + ": " + e.what());
    }
    vecs[i] = normalized(std::move(v), "author " + a);
  });
  AuthorIndex index;
  index.source = embedder.name();
  for (std::size_t i = 0; i < authors.size(); ++i) {
    if (index.dimension == 0) index.dimension = vecs[i].size();
    if (vecs[i].size() != index.dimension) throw Error("embedding dimension differs for author " + authors[i]);
    index.vectors[authors[i]] = std::move(vecs[i]);
  }
  return index;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("cosine of vectors with different dimensions");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / std::sqrt(na * nb);
}

std::vector<std::string> rank_similarity(const AuthorIndex& index, const std::string& target) {
  auto it = index.vectors.find(target);
  if (it == index.vectors.end()) throw Error("author " + target + " is not in the author index");
  std::vector<std::pair<double, std::string>> scored;
  for (const auto& [a, v] : index.vectors)
    if (a != target) scored.emplace_back(cosine(it->second, v), a);
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  });
  std::vector<std::string> out;
  for (auto& [_, a] : scored) out.push_back(std::move(a));
  return out;
}

std::string condition_name(ReplacementCondition c) {
  switch (c) {
    case ReplacementCondition::self: return "self";
    case ReplacementCondition::most_similar: return "most_similar";
    case ReplacementCondition::similar: return "similar";
    case ReplacementCondition::mid_range: return "mid_range";
    case ReplacementCondition::dissimilar: return "dissimilar";
  }
  return "self";
}

std::vector<std::size_t> condition_ranks(ReplacementCondition c, std::size_t n) {
  switch (c) {
    case ReplacementCondition::self: return {};
    case ReplacementCondition::most_similar: return {1};
    case ReplacementCondition::similar: return {3, 5};
    case ReplacementCondition::mid_range: return {10, 20};
    case ReplacementCondition::dissimilar:
      if (n < 10) return {n, 0};
      return {n, n - 9};
  }
  return {};
}

std::vector<ReplacementPlan> plan_replacements(const std::string& target, const std::vector<std::string>& ranked) {
  std::vector<ReplacementPlan> plans;
  const std::size_t n = ranked.size();
  for (auto c : kAllConditions) {
    ReplacementPlan p;
    p.target = target;
    p.condition = c;
    if (c == ReplacementCondition::self) {
      p.replacements = {target};
      p.ranks = {0};
    } else {
      for (auto r : condition_ranks(c, n)) {
        if (r < 1 || r > n) {
          const std::size_t needed = c == ReplacementCondition::dissimilar ? 10 : condition_ranks(c, n).back();
          p.unavailable = "needs at least " + std::to_string(needed) + " other authors";
          p.replacements.clear();
          p.ranks.clear();
          break;
        }
        p.replacements.push_back(ranked[r - 1]);
        p.ranks.push_back(r);
      }
    }
    plans.push_back(std::move(p));
  }
  return plans;
}

namespace {

Aggregates mean_of(const std::vector<ReplacementRun>& runs) {
  Aggregates a;
  if (runs.empty()) return a;
  for (const auto& r : runs) {
    a.hit1 += r.overall.hit1;
    a.hit3 += r.overall.hit3;
    a.dcg3 += r.overall.dcg3;
    a.mrr += r.overall.mrr;
  }
  const double n = static_cast<double>(runs.size());
  a.hit1 /= n;
  a.hit3 /= n;
  a.dcg3 /= n;
  a.mrr /= n;
  a.avg = (a.hit1 + a.hit3 + a.dcg3 + a.mrr) / 4.0;
  return a;
}

}  // namespace

ReplacementResult execute_replacement(const EvalConfig& config, const std::vector<ReplacementPlan>& plans,
                                      const std::vector<EvalQuery>& target_queries, Provider& provider,
                                      const MemoryResources& resources) {
  ReplacementResult result;
  for (const auto& plan : plans) {
    if (result.target.empty()) result.target = plan.target;
    ConditionOutcome out;
    out.plan = plan;
    if (plan.unavailable) {
      out.skipped = *plan.unavailable;
      result.conditions.push_back(std::move(out));
      continue;
    }
    for (std::size_t i = 0; i < plan.replacements.size(); ++i) {
      const auto& who = plan.replacements[i];
      try {
        const auto report = run_suite(config, target_queries, provider, resources, who);
        out.runs.push_back({who, plan.ranks[i], report.overall});
      } catch (const ConfigError& e) {
        out.skipped = "missing resources for " + who + ": " + e.what();
        out.runs.clear();
        break;
      }
    }
    out.aggregate = mean_of(out.runs);
    result.conditions.push_back(std::move(out));
  }
  return result;
}

Json replacement_report_json(const EvalConfig& config, const std::vector<ReplacementResult>& results) {
  Json j;
  j["config"] = config.to_json();
  Json targets = Json::array();
  std::map<std::string, std::vector<ReplacementRun>> by_condition;
  for (const auto& r : results) {
    Json conds = Json::array();
    for (const auto& c : r.conditions) {
      Json jc;
      jc["condition"] = condition_name(c.plan.condition);
      Json reps = Json::array();
      for (const auto& run : c.runs) reps.push_back({{"author", run.author}, {"rank", run.rank}, {"overall", run.overall.to_json()}});
      jc["replacements"] = std::move(reps);
      jc["aggregate"] = c.skipped ? Json(nullptr) : c.aggregate.to_json();
      jc["skipped"] = c.skipped ? Json(*c.skipped) : Json(nullptr);
      conds.push_back(std::move(jc));
      if (!c.skipped) by_condition[condition_name(c.plan.condition)].push_back({r.target, 0, c.aggregate});
    }
    targets.push_back({{"target", r.target}, {"conditions", std::move(conds)}});
  }
  j["targets"] = std::move(targets);
  Json series = Json::array();
  for (auto c : kAllConditions) {
    const auto& runs = by_condition[condition_name(c)];
    series.push_back({{"condition", condition_name(c)}, {"targets", runs.size()}, {"aggregate", mean_of(runs).to_json()}});
  }
  j["series"] = std::move(series);
  return j;
}

std::string replacement_csv(const std::vector<ReplacementResult>& results) {
  auto row = [](const std::string& target, const std::string& cond, const Aggregates& a) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), ",%s,%.2f,%.2f,%.2f,%.2f,%.2f\n", cond.c_str(), round2(a.hit1), round2(a.hit3),
                  round2(a.dcg3), round2(a.mrr), round2(a.avg));
    return target + buf;
  };
  std::string out = "target,condition,hit1,hit3,dcg3,mrr,avg\n";
  std::map<std::string, std::vector<ReplacementRun>> by_condition;
  for (const auto& r : results)
    for (const auto& c : r.conditions) {
      if (c.skipped) continue;
      out += row(r.target, condition_name(c.plan.condition), c.aggregate);
      by_condition[condition_name(c.plan.condition)].push_back({r.target, 0, c.aggregate});
    }
  for (auto c : kAllConditions) {
    const auto it = by_condition.find(condition_name(c));
    if (it != by_condition.end()) out += row("ALL", condition_name(c), mean_of(it->second));
  }
  return out;
}

void write_replacement_report(const std::filesystem::path& dir, const EvalConfig& config,
                              const std::vector<ReplacementResult>& results) {
  write_file_atomic(dir / "replacement_report.json", dump_pretty(replacement_report_json(config, results)));
  write_file_atomic(dir / "replacement_series.csv", replacement_csv(results));
}

}  // namespace prime
