// SPDX-License-Identifier: Apache-2.0
#include "prime/config.hpp"

#include <set>

#include "prime/error.hpp"

namespace prime {

namespace {

// Reads keys from one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown configuration key " + where_ + "." + k);
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string path(const std::string& key) const { return where_ + "." + key; }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    const Json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path(key) + " must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path(key) + " must be an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
          throw ConfigError(path(key) + " must be non-negative");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path(key) + " must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path(key) + " must be a string");
    }
    out = v.get<T>();
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::filesystem::path resolve_existing(const std::filesystem::path& base, const std::string& p,
                                       const std::string& what) {
  std::filesystem::path path = p;
  if (path.is_relative()) path = base / path;
  if (!std::filesystem::exists(path)) throw ConfigError(what + " does not exist: " + path.string());
  return path;
}

ProviderSpec parse_provider(const Json& j, const std::string& name, const std::filesystem::path& base) {
  Section s(j, "providers." + name);
  ProviderSpec p;
  s.get("type", p.type);
  if (p.type == "mock") {
    std::string script;
    s.get("script", script);
    if (script.empty()) throw ConfigError(s.path("script") + " is required for a mock provider");
    p.script = resolve_existing(base, script, "mock script for provider " + name);
  } else if (p.type == "remote") {
    s.get("endpoint", p.remote.endpoint);
    s.get("model", p.remote.model);
    s.get("api_key_env", p.remote.api_key_env);
    s.get("retries", p.remote.retries);
    s.get("backoff_ms", p.remote.backoff_ms);
    s.get("timeout_s", p.remote.timeout_s);
    s.get("adapter_mode", p.remote.adapter_mode);
    if (p.remote.endpoint.empty()) throw ConfigError(s.path("endpoint") + " is required for a remote provider");
  } else {
    throw ConfigError(s.path("type") + " must be \"mock\" or \"remote\"");
  }
  s.get("max_in_flight", p.max_in_flight);
  return p;
}

}  // namespace

EngineConfig parse_engine_config(const Json& j, const std::filesystem::path& base_dir) {
  EngineConfig c;
  Section top(j, "config");
  if (top.has("output_dir")) {
    std::string out;
    top.get("output_dir", out);
    c.output_dir = std::filesystem::path(out).is_relative() ? base_dir / out : std::filesystem::path(out);
  }
  top.get("parallelism", c.parallelism);
  if (c.parallelism < 1) throw ConfigError("config.parallelism must be >= 1");

  if (top.has("providers")) {
    const Json& ps = top.raw("providers");
    if (!ps.is_object()) throw ConfigError("config.providers must be an object");
    for (const auto& [name, spec] : ps.items()) c.providers[name] = parse_provider(spec, name, base_dir);
  }
  top.get("default_provider", c.default_provider);
  if (c.default_provider.empty() && c.providers.size() == 1) c.default_provider = c.providers.begin()->first;
  if (!c.default_provider.empty() && !c.providers.count(c.default_provider))
    throw ConfigError("config.default_provider names unknown provider " + c.default_provider);
  if (top.has("judges")) {
    const Json& js = top.raw("judges");
    if (!js.is_array()) throw ConfigError("config.judges must be a list of provider names");
    for (const auto& n : js) {
      if (!n.is_string() || !c.providers.count(n.get<std::string>()))
        throw ConfigError("config.judges entry " + n.dump() + " is not a configured provider");
      c.judges.push_back(n.get<std::string>());
    }
  }

  if (top.has("embedder")) {
    Section s(top.raw("embedder"), "config.embedder");
    s.get("type", c.embedder.type);
    s.get("dim", c.embedder.dim);
    s.get("seed", c.embedder.seed);
    s.get("endpoint", c.embedder.remote.endpoint);
    s.get("model", c.embedder.remote.model);
    s.get("api_key_env", c.embedder.remote.api_key_env);
    s.get("retries", c.embedder.remote.retries);
    s.get("timeout_s", c.embedder.remote.timeout_s);
    if (c.embedder.type != "hashed_bow" && c.embedder.type != "remote")
      throw ConfigError("config.embedder.type must be \"hashed_bow\" or \"remote\"");
  }

  if (top.has("corpus")) {
    Section s(top.raw("corpus"), "config.corpus");
    if (s.has("dumps")) {
      const Json& ds = s.raw("dumps");
      if (!ds.is_array()) throw ConfigError("config.corpus.dumps must be a list of paths");
      for (const auto& d : ds) {
        if (!d.is_string()) throw ConfigError("config.corpus.dumps entries must be strings");
        c.corpus.dumps.push_back(resolve_existing(base_dir, d.get<std::string>(), "dump file"));
      }
    }
    s.get("cutoff_utc", c.corpus.cutoff_utc);
    s.get("min_history_deltas", c.corpus.min_history_deltas);
    if (s.has("bot_account")) {
      std::string bot;
      s.get("bot_account", bot);
      c.corpus.bot_account = bot;
    }
  }

  if (top.has("memory")) {
    Section s(top.raw("memory"), "config.memory");
    s.get("k", c.memory.k);
    if (s.has("bm25")) {
      Section b(s.raw("bm25"), "config.memory.bm25");
      b.get("k1", c.memory.bm25.k1);
      b.get("b", c.memory.bm25.b);
    }
    s.get("rank", c.memory.rank);
    s.get("alpha", c.memory.alpha);
    s.get("epochs", c.memory.epochs);
    s.get("hsumm_chunk", c.memory.hsumm_chunk);
    s.get("seed", c.memory.seed);
    if (s.has("base_manifest")) {
      std::string m;
      s.get("base_manifest", m);
      c.memory.base_manifest = resolve_existing(base_dir, m, "base manifest");
    }
    if (c.memory.rank < 1) throw ConfigError("config.memory.rank must be >= 1");
  }
  c.eval.k = c.memory.k;

  if (top.has("eval")) {
    Section s(top.raw("eval"), "config.eval");
    if (s.has("mode")) {
      std::string m;
      s.get("mode", m);
      c.eval.mode = parse_mode(m);
    }
    if (s.has("strategy")) {
      std::string m;
      s.get("strategy", m);
      c.eval.strategy = parse_strategy(m);
    }
    if (s.has("objective")) {
      std::string m;
      s.get("objective", m);
      c.eval.objective = parse_objective(m);
    }
    if (s.has("semantic_form")) {
      std::string m;
      s.get("semantic_form", m);
      if (m != "parametric" && m != "textual") throw ConfigError("config.eval.semantic_form must be parametric or textual");
      c.eval.semantic_form = m == "parametric" ? SemanticForm::parametric : SemanticForm::textual;
    }
    s.get("k", c.eval.k);
    s.get("tsa", c.eval.tsa);
    s.get("runs", c.eval.runs);
    s.get("negatives", c.eval.negatives_per_run);
    s.get("full_pool", c.eval.full_pool);
    s.get("max_tokens", c.eval.max_tokens);
    s.get("thinking_max_tokens", c.eval.thinking_max_tokens);
    s.get("temperature", c.eval.temperature);
    s.get("master_seed", c.eval.master_seed);
    s.get("vary_negatives", c.eval.vary_negatives);
    s.get("vary_decoding", c.eval.vary_decoding);
    s.get("parse_retries", c.eval.parse_retries);
  }
  c.eval.parallelism = c.parallelism;

  if (top.has("difficulty")) {
    Section s(top.raw("difficulty"), "config.difficulty");
    s.get("runs", c.difficulty.runs);
    s.get("max_hit1", c.difficulty.max_hit1);
    s.get("max_hit3", c.difficulty.max_hit3);
    s.get("negatives", c.difficulty.negatives);
    s.get("max_tokens", c.difficulty.max_tokens);
    s.get("temperature", c.difficulty.temperature);
    s.get("master_seed", c.difficulty.master_seed);
    s.get("vary_negatives", c.difficulty.vary_negatives);
    s.get("vary_decoding", c.difficulty.vary_decoding);
  }
  c.difficulty.parallelism = c.parallelism;

  if (top.has("synthesis")) {
    Section s(top.raw("synthesis"), "config.synthesis");
    s.get("negatives", c.synthesis.negatives);
    s.get("seed", c.synthesis.seed);
    if (s.has("match")) {
      std::string m;
      s.get("match", m);
      if (m != "rank1" && m != "top3") throw ConfigError("config.synthesis.match must be rank1 or top3");
      c.synthesis.match = m == "rank1" ? MatchRule::rank1 : MatchRule::top3;
    }
    s.get("fast_max_tokens", c.synthesis.fast_max_tokens);
    s.get("proxy_max_tokens", c.synthesis.proxy_max_tokens);
    s.get("proxy_temperature", c.synthesis.proxy_temperature);
    s.get("strict", c.synthesis.strict);
    s.get("include_profile_in_input", c.synthesis.include_profile_in_input);
  }
  c.synthesis.parallelism = c.parallelism;
  c.synthesis.cutoff_utc = c.corpus.cutoff_utc;
  return c;
}

EngineConfig load_engine_config(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_engine_config(j, path.parent_path().empty() ? "." : path.parent_path());
}

Json EngineConfig::to_json() const {
  Json j;
  j["output_dir"] = output_dir.string();
  j["parallelism"] = parallelism;
  Json ps = Json::object();
  for (const auto& [name, p] : providers) {
    Json jp;
    jp["type"] = p.type;
    if (p.type == "mock") {
      jp["script"] = p.script.string();
    } else {
      jp["endpoint"] = p.remote.endpoint;
      jp["model"] = p.remote.model;
      jp["api_key_env"] = p.remote.api_key_env;
      jp["retries"] = p.remote.retries;
      jp["backoff_ms"] = p.remote.backoff_ms;
      jp["timeout_s"] = p.remote.timeout_s;
      jp["adapter_mode"] = p.remote.adapter_mode;
    }
    jp["max_in_flight"] = p.max_in_flight;
    ps[name] = std::move(jp);
  }
  j["providers"] = std::move(ps);
  j["default_provider"] = default_provider;
  j["judges"] = judges;
  j["embedder"] = {{"type", embedder.type}, {"dim", embedder.dim}, {"seed", embedder.seed},
                   {"endpoint", embedder.remote.endpoint}, {"model", embedder.remote.model}};
  Json dumps = Json::array();
  for (const auto& d : corpus.dumps) dumps.push_back(d.string());
  j["corpus"] = {{"dumps", dumps},
                 {"cutoff_utc", corpus.cutoff_utc},
                 {"min_history_deltas", corpus.min_history_deltas},
                 {"bot_account", corpus.bot_account ? Json(*corpus.bot_account) : Json(nullptr)}};
  j["memory"] = {{"k", memory.k},
                 {"bm25", {{"k1", memory.bm25.k1}, {"b", memory.bm25.b}}},
                 {"rank", memory.rank},
                 {"alpha", memory.alpha},
                 {"epochs", memory.epochs},
                 {"hsumm_chunk", memory.hsumm_chunk},
                 {"seed", memory.seed},
                 {"base_manifest", memory.base_manifest ? Json(memory.base_manifest->string()) : Json(nullptr)}};
  j["eval"] = eval.to_json();
  j["difficulty"] = difficulty.to_json();
  j["synthesis"] = synthesis.to_json();
  return j;
}

std::shared_ptr<Provider> make_provider(const ProviderSpec& spec) {
  std::shared_ptr<Provider> inner;
  if (spec.type == "mock")
    inner = MockProvider::from_file(spec.script);
  else
    inner = std::make_shared<RemoteProvider>(spec.remote);
  return std::make_shared<BoundedProvider>(inner, static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, spec.max_in_flight)));
}

std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec) {
  if (spec.type == "remote") return std::make_unique<RemoteEmbedder>(spec.remote);
  return std::make_unique<HashedBowEmbedder>(spec.dim, spec.seed);
}

}  // namespace prime
