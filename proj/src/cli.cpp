// SPDX-License-Identifier: Apache-2.0
#include "prime/cli.hpp"

#include <algorithm>
#include <iostream>
#include <set>

#include "CLI11.hpp"
#include "prime/analysis.hpp"
#include "prime/config.hpp"
#include "prime/corpus.hpp"
#include "prime/difficulty_filter.hpp"
#include "prime/episodic_memory.hpp"
#include "prime/error.hpp"
#include "prime/eval_harness.hpp"
#include "prime/seed.hpp"
#include "prime/semantic_memory.hpp"
#include "prime/text.hpp"
#include "prime/thinking_synthesis.hpp"

namespace prime::cli {

namespace {

namespace fs = std::filesystem;

const std::vector<Objective> kObjectives = {Objective::NTP, Objective::CIG,  Objective::O_FT,
                                             Objective::T_FT, Objective::DPO, Objective::SIMPO};

struct Globals {
  std::string config_path;
  std::string mock_script;
  std::optional<std::size_t> parallelism;
};

struct EvalFlags {
  std::optional<std::string> mode, strategy, objective, semantic_form;
  std::optional<std::size_t> k, runs, negatives;
  std::optional<std::uint64_t> seed;
  std::optional<int> parse_retries;
  bool tsa = false, full_pool = false, same_negatives = false, same_decoding = false;
};

void add_eval_flags(CLI::App* sub, EvalFlags& f) {
  sub->add_option("--mode", f.mode, "non_personalized, em_only, sm_only, dual, prime, em_think_trainfree");
  sub->add_option("--strategy", f.strategy, "Episodic recall: recent or relevant");
  sub->add_option("--k", f.k, "Recalled items");
  sub->add_option("--objective", f.objective, "Adapter objective (NTP, CIG, O-FT, T-FT, DPO, SIMPO)");
  sub->add_option("--semantic-form", f.semantic_form, "parametric or textual");
  sub->add_flag("--tsa", f.tsa, "Prepend the profile summary to recalled items");
  sub->add_option("--runs", f.runs, "Evaluation runs");
  sub->add_option("--negatives", f.negatives, "Negatives per run");
  sub->add_flag("--full-pool", f.full_pool, "Offer every negative instead of sampling");
  sub->add_option("--seed", f.seed, "Master seed");
  sub->add_option("--parse-retries", f.parse_retries, "Re-asks after an unparseable answer (0-2)");
  sub->add_flag("--same-negatives", f.same_negatives, "Reuse run 0's candidate sample in every run");
  sub->add_flag("--same-decoding", f.same_decoding, "Reuse run 0's decoding seed in every run");
}

void apply_eval_flags(const EvalFlags& f, EvalConfig& c) {
  if (f.mode) c.mode = parse_mode(*f.mode);
  if (f.strategy) c.strategy = parse_strategy(*f.strategy);
  if (f.objective) c.objective = parse_objective(*f.objective);
  if (f.semantic_form) {
    if (*f.semantic_form != "parametric" && *f.semantic_form != "textual")
      throw ConfigError("--semantic-form must be parametric or textual");
    c.semantic_form = *f.semantic_form == "parametric" ? SemanticForm::parametric : SemanticForm::textual;
  }
  if (f.k) c.k = *f.k;
  if (f.tsa) c.tsa = true;
  if (f.runs) c.runs = *f.runs;
  if (f.negatives) c.negatives_per_run = *f.negatives;
  if (f.full_pool) c.full_pool = true;
  if (f.seed) c.master_seed = *f.seed;
  if (f.parse_retries) c.parse_retries = *f.parse_retries;
  if (f.same_negatives) c.vary_negatives = false;
  if (f.same_decoding) c.vary_decoding = false;
}

class Context {
 public:
  Context(const Globals& g, std::vector<std::string> args, std::ostream& out, std::ostream& err)
      : args_(std::move(args)), out_(out), err_(err) {
    if (!g.config_path.empty()) {
      if (!fs::exists(g.config_path)) throw ConfigError("config file does not exist: " + g.config_path);
      config = load_engine_config(g.config_path);
    }
    if (!g.mock_script.empty()) {
      if (!fs::exists(g.mock_script)) throw ConfigError("mock script does not exist: " + g.mock_script);
      ProviderSpec spec;
      spec.type = "mock";
      spec.script = g.mock_script;
      config.providers["mock"] = spec;
      config.default_provider = "mock";
    }
    if (g.parallelism) {
      if (*g.parallelism < 1) throw ConfigError("--parallelism must be >= 1");
      config.parallelism = *g.parallelism;
      config.eval.parallelism = config.difficulty.parallelism = config.synthesis.parallelism = *g.parallelism;
    }
  }

  std::shared_ptr<Provider> provider(const std::string& name = "") {
    const std::string key = name.empty() ? config.default_provider : name;
    if (key.empty())
      throw ConfigError("no provider configured; pass --mock <script> or define providers in the config file");
    auto it = providers_.find(key);
    if (it != providers_.end()) return it->second;
    auto spec = config.providers.find(key);
    if (spec == config.providers.end()) throw ConfigError("unknown provider " + key);
    return providers_[key] = make_provider(spec->second);
  }

  void manifest(const fs::path& dir, const std::string& command, Json extra = Json::object()) const {
    const Json cfg = config.to_json();
    Json m;
    m["tool"] = "prime";
    m["version"] = kVersion;
    m["compiler"] = __VERSION__;
    m["command"] = command;
    m["args"] = args_;
    m["config_hash"] = hex64(fnv1a64(cfg.dump()));
    m["seeds"] = {{"eval_master_seed", config.eval.master_seed},
                  {"difficulty_master_seed", config.difficulty.master_seed},
                  {"synthesis_seed", config.synthesis.seed},
                  {"memory_seed", config.memory.seed}};
    m["config"] = cfg;
    for (auto& [k, v] : extra.items()) m[k] = v;
    write_file_atomic(dir / "manifest.json", dump_pretty(m));
  }

  std::ostream& out() { return out_; }
  std::ostream& err() { return err_; }

  EngineConfig config;

 private:
  std::vector<std::string> args_;
  std::ostream& out_;
  std::ostream& err_;
  std::map<std::string, std::shared_ptr<Provider>> providers_;
};

fs::path require_dir(const std::string& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " directory is required");
  if (!fs::is_directory(p)) throw IoError(what + " directory does not exist: " + p);
  return p;
}

fs::path require_file(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("required file does not exist: " + p.string());
  return p;
}

fs::path output_dir(const std::string& flag, const Context& ctx, const std::string& sub) {
  return flag.empty() ? ctx.config.output_dir / sub : fs::path(flag);
}

// Authors of the corpus's evaluation queries, or of its history when it has none.
std::vector<std::string> corpus_authors(const std::vector<EvalQuery>& queries, const std::vector<Conversation>& history) {
  std::set<std::string> s;
  for (const auto& q : queries) s.insert(q.author);
  if (s.empty())
    for (const auto& c : history) s.insert(c.op_author);
  return {s.begin(), s.end()};
}

struct MemoryBundle {
  std::optional<EpisodicStore> store;
  std::unique_ptr<AdapterRegistry> registry;
  std::map<std::string, ProfileSummary> summaries;

  MemoryResources resources() const {
    MemoryResources r;
    r.store = store ? &*store : nullptr;
    r.registry = registry.get();
    r.summaries = summaries.empty() ? nullptr : &summaries;
    return r;
  }
};

MemoryBundle load_memory(const std::string& dir_flag) {
  MemoryBundle m;
  if (dir_flag.empty()) return m;
  const fs::path dir = require_dir(dir_flag, "memory");
  if (fs::exists(dir / "episodic" / "index.json")) m.store = EpisodicStore::load(dir / "episodic");
  if (fs::exists(dir / "base_manifest.json"))
    m.registry = std::make_unique<AdapterRegistry>(dir / "registry", BaseManifest::load(dir / "base_manifest.json"));
  if (fs::exists(dir / "summaries.jsonl"))
    for (const auto& row : read_jsonl(dir / "summaries.jsonl")) {
      auto s = ProfileSummary::from_json(row);
      m.summaries[s.user] = std::move(s);
    }
  return m;
}

// ---------------------------------------------------------------- build-corpus

struct BuildCorpusArgs {
  std::vector<std::string> dumps;
  std::string out;
  std::optional<std::int64_t> cutoff;
  std::optional<std::size_t> min_deltas;
  std::optional<std::string> bot;
};

int cmd_build_corpus(Context& ctx, const BuildCorpusArgs& a) {
  std::vector<fs::path> dumps(a.dumps.begin(), a.dumps.end());
  if (dumps.empty()) dumps = ctx.config.corpus.dumps;
  if (dumps.empty()) throw ConfigError("no dump files given (use --dump or corpus.dumps in the config)");
  for (const auto& d : dumps)
    if (!fs::exists(d)) throw IoError("dump file not found: " + d.string());
  auto& cc = ctx.config.corpus;
  if (a.cutoff) cc.cutoff_utc = *a.cutoff;
  if (a.min_deltas) cc.min_history_deltas = *a.min_deltas;
  if (a.bot) cc.bot_account = *a.bot;
  cc.dumps = dumps;
  const fs::path out = output_dir(a.out, ctx, "corpus");

  const auto ingested = corpus::ingest_dump(dumps);
  auto flat = corpus::flatten_threads(ingested.records);
  auto labeled = corpus::label_deltas(ingested.records, flat.conversations, {cc.bot_account});
  std::size_t positives = 0;
  for (const auto& c : labeled) positives += c.positive();
  const auto split = corpus::split_by_time(std::move(labeled), cc.cutoff_utc);
  const auto authors = corpus::select_active_users(split, cc.min_history_deltas);
  const auto built = corpus::build_queries(split, authors);
  const auto history = corpus::history_for(split, authors);

  corpus::write_conversations(out / "history.jsonl", history);
  corpus::write_queries(out / "eval_queries.jsonl", built.queries);
  Json report;
  report["records"] = ingested.records.size();
  report["skipped_lines"] = ingested.skipped_lines;
  report["conversations"] = flat.conversations.size();
  report["positives"] = positives;
  report["orphan_comments"] = flat.orphan_comments;
  report["dropped_deleted"] = flat.dropped_deleted;
  report["history_conversations"] = split.history.size();
  report["eval_pool_conversations"] = split.eval_pool.size();
  report["cutoff_utc"] = cc.cutoff_utc;
  report["active_authors"] = authors;
  report["queries"] = built.queries.size();
  report["dropped_empty_pool"] = built.dropped_empty_pool;
  report["history_of_active_authors"] = history.size();
  write_file_atomic(out / "corpus_report.json", dump_pretty(report));
  ctx.manifest(out, "build-corpus");
  ctx.out() << "corpus: " << authors.size() << " authors, " << built.queries.size() << " queries, "
            << history.size() << " history conversations -> " << out.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- filter-difficulty

struct FilterArgs {
  std::string corpus, out;
  std::vector<std::string> judges;
  std::optional<std::size_t> runs;
  std::optional<std::uint64_t> seed;
};

int cmd_filter(Context& ctx, const FilterArgs& a) {
  const fs::path in = require_dir(a.corpus, "corpus");
  auto& opts = ctx.config.difficulty;
  if (a.runs) opts.runs = *a.runs;
  if (a.seed) opts.master_seed = *a.seed;
  std::vector<std::string> names = a.judges.empty() ? ctx.config.judges : a.judges;
  if (names.empty()) names.push_back(ctx.config.default_provider);
  ctx.config.judges = names;
  std::vector<Judge> judges;
  for (const auto& n : names) judges.push_back({n.empty() ? "default" : n, ctx.provider(n)});

  const auto queries = corpus::read_queries(require_file(in / "eval_queries.jsonl"));
  const auto history = corpus::read_conversations(require_file(in / "history.jsonl"));
  const auto result = difficulty_filter(queries, judges, opts);
  const fs::path out = output_dir(a.out, ctx, "corpus_filtered");
  std::set<std::string> kept;
  for (const auto& q : result.retained) kept.insert(q.author);
  std::vector<Conversation> kept_history;
  for (const auto& c : history)
    if (kept.count(c.op_author)) kept_history.push_back(c);
  corpus::write_conversations(out / "history.jsonl", kept_history);
  corpus::write_queries(out / "eval_queries.jsonl", result.retained);
  write_file_atomic(out / "filter_report.json", dump_pretty(result.report.to_json()));
  ctx.manifest(out, "filter-difficulty");
  ctx.out() << "difficulty filter: kept " << result.retained.size() << " of " << queries.size() << " queries ("
            << kept.size() << " authors), removed " << result.report.removed_authors.size() << " authors\n";
  return kExitOk;
}

// ---------------------------------------------------------------- memory

struct MemoryWriteArgs {
  std::string corpus, out, summaries = "none", init_adapters = "none", base_manifest, pkr_objective = "T-FT";
  std::vector<std::string> objectives;
};

int cmd_memory_write(Context& ctx, const MemoryWriteArgs& a) {
  const fs::path in = require_dir(a.corpus, "corpus");
  const fs::path out = output_dir(a.out, ctx, "memory");
  const auto history = corpus::read_conversations(require_file(in / "history.jsonl"));
  std::vector<EvalQuery> queries;
  if (fs::exists(in / "eval_queries.jsonl")) queries = corpus::read_queries(in / "eval_queries.jsonl");
  const auto users = corpus_authors(queries, history);
  const auto& mc = ctx.config.memory;
  if (!a.base_manifest.empty()) ctx.config.memory.base_manifest = fs::path(a.base_manifest);

  std::vector<Conversation> own;
  const std::set<std::string> user_set(users.begin(), users.end());
  for (const auto& c : history)
    if (user_set.count(c.op_author)) own.push_back(c);
  const auto store = EpisodicStore::build(own, mc.bm25);
  store.save(out / "episodic");

  std::vector<Objective> objectives;
  for (const auto& o : a.objectives) objectives.push_back(parse_objective(o));
  if (objectives.empty()) objectives = kObjectives;

  std::optional<AdapterRegistry> registry;
  if (mc.base_manifest) {
    const auto manifest = BaseManifest::load(require_file(*mc.base_manifest));
    write_file_atomic(out / "base_manifest.json", dump_pretty(manifest.to_json()));
    registry.emplace(out / "registry", manifest);
  } else if (a.init_adapters != "none" || a.summaries == "pkr") {
    throw ConfigError("adapters need a base manifest (--base-manifest or memory.base_manifest)");
  }
  if (a.init_adapters != "none" && a.init_adapters != "zero")
    throw ConfigError("--init-adapters must be none or zero");

  Json jobs = Json::array();
  Json unavailable = Json::array();
  std::size_t adapters = 0;
  for (const auto& user : users) {
    const auto& h = store.history(user);
    for (auto obj : objectives) {
      JobOptions jo{mc.epochs, mc.rank, mc.alpha, derive_seed(mc.seed, user, objective_name(obj)),
                    ctx.config.eval.negatives_per_run};
      try {
        const auto spec = build_training_job(user, h, obj, jo);
        spec.save(out / "jobs" / text::path_component(user) / objective_name(obj));
        jobs.push_back({{"user", user}, {"objective", objective_name(obj)}, {"job_id", spec.job_id},
                        {"examples", spec.example_count()}});
        if (a.init_adapters == "zero") {
          registry->register_adapter(init_adapter(user, obj, registry->manifest(), mc.rank, mc.alpha, jo.seed), true);
          ++adapters;
        }
      } catch (const ObjectiveUnavailable& e) {
        unavailable.push_back({{"user", user}, {"objective", objective_name(obj)}, {"reason", e.what()}});
      }
    }
  }

  std::vector<Json> summary_rows;
  if (a.summaries == "hsumm" || a.summaries == "pkr") {
    Session base{ctx.provider(), std::nullopt, std::nullopt, 0.0, static_cast<std::int64_t>(mc.seed >> 33), 512, {}};
    for (const auto& user : users) {
      ProfileSummary s;
      if (a.summaries == "hsumm") {
        s = hierarchical_summarize(base, user, store.history(user), mc.hsumm_chunk);
      } else {
        const auto obj = parse_objective(a.pkr_objective);
        if (!registry->contains(user, obj))
          throw ConfigError("PKR needs a " + objective_name(obj) + " adapter for user " + user);
        Session with = base;
        with.adapter = user + "/" + objective_name(obj);
        s = pkr_summarize(with, user);
      }
      summary_rows.push_back(s.to_json());
    }
    write_file_atomic(out / "summaries.jsonl", to_jsonl(summary_rows));
  } else if (a.summaries != "none") {
    throw ConfigError("--summaries must be none, hsumm or pkr");
  }

  Json report;
  report["users"] = users;
  report["episodic_items"] = store.size();
  report["jobs"] = std::move(jobs);
  report["unavailable"] = std::move(unavailable);
  report["adapters_registered"] = adapters;
  report["summaries"] = summary_rows.size();
  write_file_atomic(out / "memory_report.json", dump_pretty(report));
  ctx.manifest(out, "memory write");
  ctx.out() << "memory: " << users.size() << " users, " << store.size() << " episodic items, "
            << report["jobs"].size() << " training jobs, " << adapters << " adapters, " << summary_rows.size()
            << " summaries -> " << out.string() << "\n";
  return kExitOk;
}

int cmd_memory_inspect(Context& ctx, const std::string& dir, const std::string& user) {
  const auto m = load_memory(dir);
  Json j;
  if (m.store) {
    Json users = Json::array();
    for (const auto& u : m.store->users()) {
      if (!user.empty() && u != user) continue;
      const auto& st = m.store->stats(u);
      std::size_t pos = 0;
      for (const auto& c : m.store->history(u)) pos += c.positive();
      users.push_back({{"user", u}, {"items", st.doc_count}, {"positives", pos}, {"avg_length", st.avg_length},
                       {"vocabulary", st.doc_freq.size()}});
    }
    j["episodic"] = std::move(users);
  }
  if (m.registry) {
    Json adapters = Json::array();
    for (const auto& [u, o] : m.registry->list())
      if (user.empty() || u == user) adapters.push_back(u + "/" + objective_name(o));
    j["adapters"] = std::move(adapters);
  }
  Json sums = Json::array();
  for (const auto& [u, s] : m.summaries)
    if (user.empty() || u == user) sums.push_back(s.to_json());
  j["summaries"] = std::move(sums);
  if (!user.empty() && (!m.store || !m.store->has_user(user))) throw Error("memory has no user " + user);
  ctx.out() << dump_pretty(j);
  return kExitOk;
}

// ---------------------------------------------------------------- synthesize

struct SynthArgs {
  std::string corpus, memory, out, adapter_objective = "T-FT", match;
  std::vector<std::string> users;
  bool strict = false;
};

int cmd_synthesize(Context& ctx, const SynthArgs& a) {
  const fs::path in = require_dir(a.corpus, "corpus");
  const auto m = load_memory(a.memory);
  if (!m.registry) throw ConfigError("synthesis needs a memory directory with adapters");
  const auto history = corpus::read_conversations(require_file(in / "history.jsonl"));
  std::vector<EvalQuery> queries;
  if (fs::exists(in / "eval_queries.jsonl")) queries = corpus::read_queries(in / "eval_queries.jsonl");
  auto& opts = ctx.config.synthesis;
  if (a.strict) opts.strict = true;
  if (!a.match.empty()) {
    if (a.match != "rank1" && a.match != "top3") throw ConfigError("--match must be rank1 or top3");
    opts.match = a.match == "rank1" ? MatchRule::rank1 : MatchRule::top3;
  }
  const auto objective = parse_objective(a.adapter_objective);
  const auto users = a.users.empty() ? corpus_authors(queries, history) : a.users;
  const fs::path out = output_dir(a.out, ctx, "synthesis");
  auto provider = ctx.provider();

  Json summary = Json::array();
  std::size_t produced = 0;
  for (const auto& user : users) {
    Json row{{"user", user}};
    try {
      if (!m.registry->contains(user, objective))
        throw ConfigError("no " + objective_name(objective) + " adapter for user " + user);
      Session adapter{provider, user + "/" + objective_name(objective), std::nullopt, 0.0, std::nullopt, 512, {}};
      Session base{provider, std::nullopt, std::nullopt, 0.0, std::nullopt, 512, {}};
      const auto res = run_synthesis(user, history, adapter, base, out / text::path_component(user), opts);
      row["yield"] = res.report.to_json();
      ++produced;
    } catch (const Error& e) {
      row["error"] = e.what();
      ctx.err() << "synthesize: " << user << ": " << e.what() << "\n";
    }
    summary.push_back(std::move(row));
  }
  write_file_atomic(out / "yield_summary.json", dump_pretty(summary));
  ctx.manifest(out, "synthesize");
  ctx.out() << "synthesis: datasets for " << produced << " of " << users.size() << " users -> " << out.string()
            << "\n";
  if (produced == 0 && !users.empty()) throw Error("insufficient synthesis yield for every user");
  return kExitOk;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string corpus, memory, out, label, user;
  bool dry_run = false;
  EvalFlags eval;
};

std::shared_ptr<Provider> dry_run_provider() {
  return std::make_shared<FunctionProvider>([](const CompletionRequest&) -> Completion {
    throw Error("provider called during a dry run");
  });
}

int cmd_evaluate(Context& ctx, const EvaluateArgs& a) {
  const fs::path in = require_dir(a.corpus, "corpus");
  auto& cfg = ctx.config.eval;
  apply_eval_flags(a.eval, cfg);
  if (a.dry_run) cfg.dry_run = true;
  cfg.validate();
  auto queries = corpus::read_queries(require_file(in / "eval_queries.jsonl"));
  if (!a.user.empty())
    std::erase_if(queries, [&](const EvalQuery& q) { return q.author != a.user; });
  const auto m = load_memory(a.memory);
  const auto provider = cfg.dry_run ? dry_run_provider() : ctx.provider();
  auto report = run_suite(cfg, queries, *provider, m.resources());
  report.label = a.label.empty() ? mode_name(cfg.mode) : a.label;
  const fs::path out = output_dir(a.out, ctx, "eval");
  write_report(out, report);
  ctx.manifest(out, "evaluate", Json{{"queries", queries.size()}});
  ctx.out() << format_table({{report.label, report.overall}});
  if (report.provider_errors)
    ctx.err() << "evaluate: " << report.provider_errors << " provider errors (scored zero)\n";
  return kExitOk;
}

// ---------------------------------------------------------------- replace-profile

struct ReplaceArgs {
  std::string corpus, memory, out;
  std::vector<std::string> targets;
  EvalFlags eval;
};

int cmd_replace(Context& ctx, const ReplaceArgs& a) {
  const fs::path in = require_dir(a.corpus, "corpus");
  auto& cfg = ctx.config.eval;
  if (!a.eval.mode) cfg.mode = EvalMode::prime;
  apply_eval_flags(a.eval, cfg);
  if (cfg.mode != EvalMode::prime && cfg.mode != EvalMode::dual)
    throw ConfigError("profile replacement runs in prime or dual mode");
  cfg.validate();
  const auto queries = corpus::read_queries(require_file(in / "eval_queries.jsonl"));
  const auto history = corpus::read_conversations(require_file(in / "history.jsonl"));
  const auto m = load_memory(a.memory);
  const auto authors = corpus_authors(queries, history);
  auto embedder = make_embedder(ctx.config.embedder);
  const auto index = build_author_index(authors, history, *embedder, ctx.config.parallelism);
  const auto targets = a.targets.empty() ? authors : a.targets;
  auto provider = ctx.provider();

  std::vector<ReplacementResult> results;
  for (const auto& t : targets) {
    std::vector<EvalQuery> own;
    for (const auto& q : queries)
      if (q.author == t) own.push_back(q);
    if (own.empty()) throw Error("target " + t + " has no evaluation queries");
    const auto plans = plan_replacements(t, rank_similarity(index, t));
    results.push_back(execute_replacement(cfg, plans, own, *provider, m.resources()));
  }
  const fs::path out = output_dir(a.out, ctx, "replacement");
  write_file_atomic(out / "author_index.json", dump_pretty(index.to_json()));
  write_replacement_report(out, cfg, results);
  ctx.manifest(out, "replace-profile");
  ctx.out() << replacement_csv(results);
  return kExitOk;
}

// ---------------------------------------------------------------- report

int cmd_report(Context& ctx, const std::vector<std::string>& files, const std::string& out_path) {
  if (files.empty()) throw ConfigError("report --compare needs at least one report.json");
  std::vector<std::pair<std::string, Aggregates>> rows;
  for (const auto& f : files) {
    fs::path p = f;
    if (fs::is_directory(p)) p /= "report.json";
    Json j;
    try {
      j = Json::parse(read_file(require_file(p)));
    } catch (const Json::parse_error& e) {
      throw FormatError(p.string() + " is not JSON: " + e.what());
    }
    if (!j.contains("overall")) throw FormatError(p.string() + " is not an evaluation report");
    std::string label = j.value("label", "");
    if (label.empty() && j.contains("config")) label = j["config"].value("mode", p.string());
    rows.emplace_back(label, Aggregates::from_json(j.at("overall")));
  }
  const auto table = format_table(rows);
  if (!out_path.empty()) write_file_atomic(out_path, table);
  ctx.out() << table;
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-memory personalization engine: corpus building, memory, synthesis and evaluation", "prime"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Globals g;
  app.add_option("--config", g.config_path, "Engine configuration (JSON)");
  app.add_option("--mock", g.mock_script, "Use a scripted mock provider as the default provider");
  app.add_option("--parallelism", g.parallelism, "Maximum concurrent provider calls");

  BuildCorpusArgs bc;
  auto* build = app.add_subcommand("build-corpus", "Ingest dumps into a labeled, time-split corpus");
  build->add_option("--dump", bc.dumps, "Dump file (.jsonl, .gz, .zst); repeatable");
  build->add_option("--out", bc.out, "Output corpus directory");
  build->add_option("--cutoff", bc.cutoff, "Split timestamp (UTC seconds)");
  build->add_option("--min-deltas", bc.min_deltas, "Minimum history deltas per author");
  build->add_option("--bot", bc.bot, "Account whose confirmations also award deltas");

  FilterArgs fa;
  auto* filter = app.add_subcommand("filter-difficulty", "Remove queries judges solve without history");
  filter->add_option("--corpus", fa.corpus, "Input corpus directory")->required();
  filter->add_option("--out", fa.out, "Output corpus directory");
  filter->add_option("--judge", fa.judges, "Judge provider name; repeatable");
  filter->add_option("--runs", fa.runs, "Runs per judge");
  filter->add_option("--seed", fa.seed, "Master seed");

  auto* memory = app.add_subcommand("memory", "Instantiate or inspect memories");
  memory->require_subcommand(1);
  MemoryWriteArgs mw;
  auto* mwrite = memory->add_subcommand("write", "Build episodic stores, training jobs, adapters and summaries");
  mwrite->add_option("--corpus", mw.corpus, "Corpus directory")->required();
  mwrite->add_option("--out", mw.out, "Output memory directory");
  mwrite->add_option("--objective", mw.objectives, "Objectives to emit jobs for; repeatable (default all)");
  mwrite->add_option("--summaries", mw.summaries, "none, hsumm or pkr");
  mwrite->add_option("--init-adapters", mw.init_adapters, "none or zero (untrained, identity adapters)");
  mwrite->add_option("--base-manifest", mw.base_manifest, "Base model weight manifest");
  mwrite->add_option("--pkr-objective", mw.pkr_objective, "Adapter objective used for PKR summaries");
  std::string inspect_dir, inspect_user;
  auto* minspect = memory->add_subcommand("inspect", "Print memory statistics as JSON");
  minspect->add_option("--memory", inspect_dir, "Memory directory")->required();
  minspect->add_option("--user", inspect_user, "Restrict to one user");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synthesize", "Personalized-thinking data synthesis");
  synth->add_option("--corpus", sa.corpus, "Corpus directory")->required();
  synth->add_option("--memory", sa.memory, "Memory directory")->required();
  synth->add_option("--out", sa.out, "Output directory");
  synth->add_option("--user", sa.users, "User to synthesize for; repeatable");
  synth->add_option("--adapter-objective", sa.adapter_objective, "Adapter objective for the user model");
  synth->add_option("--match", sa.match, "rank1 or top3");
  synth->add_flag("--strict", sa.strict, "Reject traces missing any tag");

  EvaluateArgs ea;
  auto* eval = app.add_subcommand("evaluate", "Ranking evaluation");
  eval->add_option("--corpus", ea.corpus, "Corpus directory")->required();
  eval->add_option("--memory", ea.memory, "Memory directory");
  eval->add_option("--out", ea.out, "Output directory");
  eval->add_option("--label", ea.label, "Row label in tables");
  eval->add_option("--user", ea.user, "Only this author's queries");
  eval->add_flag("--dry-run", ea.dry_run, "Render prompts and plans without provider calls");
  add_eval_flags(eval, ea.eval);

  ReplaceArgs ra;
  auto* replace = app.add_subcommand("replace-profile", "Profile-replacement faithfulness analysis");
  replace->add_option("--corpus", ra.corpus, "Corpus directory")->required();
  replace->add_option("--memory", ra.memory, "Memory directory")->required();
  replace->add_option("--out", ra.out, "Output directory");
  replace->add_option("--target", ra.targets, "Target author; repeatable (default all)");
  add_eval_flags(replace, ra.eval);

  std::vector<std::string> compare;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Compare evaluation reports");
  report->add_option("--compare", compare, "report.json files or directories")->required();
  report->add_option("--out", report_out, "Also write the table to this file");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    Context ctx(g, args, out, err);
    if (*build) return cmd_build_corpus(ctx, bc);
    if (*filter) return cmd_filter(ctx, fa);
    if (*mwrite) return cmd_memory_write(ctx, mw);
    if (*minspect) return cmd_memory_inspect(ctx, inspect_dir, inspect_user);
    if (*synth) return cmd_synthesize(ctx, sa);
    if (*eval) return cmd_evaluate(ctx, ea);
    if (*replace) return cmd_replace(ctx, ra);
    if (*report) return cmd_report(ctx, compare, report_out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const Json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  err << app.help();
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace prime::cli
