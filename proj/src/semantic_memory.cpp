// SPDX-License-Identifier: Apache-2.0
#include "prime/semantic_memory.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <set>

#include "prime/error.hpp"
#include "prime/eval_harness.hpp"
#include "prime/seed.hpp"
#include "prime/text.hpp"

namespace prime {

std::string objective_name(Objective o) {
  switch (o) {
    case Objective::NTP: return "NTP";
    case Objective::CIG: return "CIG";
    case Objective::O_FT: return "O-FT";
    case Objective::T_FT: return "T-FT";
    case Objective::DPO: return "DPO";
    case Objective::SIMPO: return "SIMPO";
  }
  return "T-FT";
}

Objective parse_objective(const std::string& s) {
  for (auto o : {Objective::NTP, Objective::CIG, Objective::O_FT, Objective::T_FT, Objective::DPO, Objective::SIMPO})
    if (objective_name(o) == s) return o;
  throw ConfigError("unknown objective: " + s);
}

BaseManifest BaseManifest::from_json(const Json& j) {
  BaseManifest m;
  try {
    m.model = j.value("model", "");
    for (const auto& [name, shape] : j.at("weights").items()) {
      auto dims = shape.get<std::vector<std::int64_t>>();
      if (dims.size() != 2 || dims[0] < 1 || dims[1] < 1)
        throw FormatError("manifest weight " + name + " must have shape [d_out, d_in]");
      m.weights[name] = dims;
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed base manifest: ") + e.what());
  }
  return m;
}

BaseManifest BaseManifest::load(const std::filesystem::path& path) {
  try {
    return from_json(Json::parse(read_file(path)));
  } catch (const Json::parse_error& e) {
    throw FormatError("base manifest " + path.string() + " is not JSON: " + e.what());
  }
}

Json BaseManifest::to_json() const {
  Json j;
  j["model"] = model;
  Json w = Json::object();
  for (const auto& [name, dims] : weights) w[name] = dims;
  j["weights"] = std::move(w);
  return j;
}

std::string lora_a_name(const std::string& weight) { return weight + ".lora_A"; }
std::string lora_b_name(const std::string& weight) { return weight + ".lora_B"; }

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::vector<std::string> AdapterRef::targets() const {
  std::set<std::string> out;
  for (const auto& [name, _] : tensors.tensors()) {
    if (ends_with(name, ".lora_A")) out.insert(name.substr(0, name.size() - 7));
    if (ends_with(name, ".lora_B")) out.insert(name.substr(0, name.size() - 7));
  }
  return {out.begin(), out.end()};
}

void validate_adapter(const AdapterRef& adapter, const BaseManifest* manifest) {
  const std::string who = "adapter " + adapter.id();
  if (adapter.rank < 1) throw FormatError(who + ": rank must be >= 1");
  if (adapter.user.empty()) throw FormatError("adapter user must be nonempty");
  for (const auto& [name, _] : adapter.tensors.tensors())
    if (!ends_with(name, ".lora_A") && !ends_with(name, ".lora_B"))
      throw FormatError(who + ": unexpected tensor " + name);
  const auto targets = adapter.targets();
  if (targets.empty()) throw FormatError(who + ": no LoRA pairs");
  for (const auto& w : targets) {
    if (!adapter.tensors.contains(lora_a_name(w)) || !adapter.tensors.contains(lora_b_name(w)))
      throw FormatError(who + ": unpaired LoRA tensors for " + w);
    const Tensor& a = adapter.tensors.get(lora_a_name(w));
    const Tensor& b = adapter.tensors.get(lora_b_name(w));
    if (a.shape.size() != 2 || b.shape.size() != 2) throw FormatError(who + ": LoRA tensors for " + w + " must be 2-D");
    if (a.rows() != adapter.rank || b.cols() != adapter.rank)
      throw FormatError(who + ": LoRA pair for " + w + " does not have rank " + std::to_string(adapter.rank));
    if (manifest) {
      auto it = manifest->weights.find(w);
      if (it == manifest->weights.end()) throw FormatError(who + ": base manifest has no weight " + w);
      if (b.rows() != it->second[0] || a.cols() != it->second[1])
        throw FormatError(who + ": B*A for " + w + " is " + std::to_string(b.rows()) + "x" + std::to_string(a.cols()) +
                          ", base weight is " + std::to_string(it->second[0]) + "x" + std::to_string(it->second[1]));
    }
  }
}

TensorArchive merge_adapter(const TensorArchive& base, const AdapterRef& adapter) {
  validate_adapter(adapter);
  TensorArchive out = base;
  const double scale = adapter.scale();
  for (const auto& w : adapter.targets()) {
    if (!out.contains(w)) throw FormatError("adapter " + adapter.id() + " targets missing base tensor " + w);
    Tensor& weight = out.get_mut(w);
    const Tensor& a = adapter.tensors.get(lora_a_name(w));
    const Tensor& b = adapter.tensors.get(lora_b_name(w));
    if (weight.shape.size() != 2 || weight.rows() != b.rows() || weight.cols() != a.cols())
      throw FormatError("adapter " + adapter.id() + " does not compose with base tensor " + w);
    const std::int64_t r = adapter.rank;
    for (std::int64_t i = 0; i < weight.rows(); ++i) {
      for (std::int64_t j = 0; j < weight.cols(); ++j) {
        double acc = 0.0;
        for (std::int64_t k = 0; k < r; ++k) acc += static_cast<double>(b.at(i, k)) * static_cast<double>(a.at(k, j));
        if (acc != 0.0) weight.at(i, j) = static_cast<float>(static_cast<double>(weight.at(i, j)) + scale * acc);
      }
    }
  }
  return out;
}

AdapterRef init_adapter(const std::string& user, Objective objective, const BaseManifest& manifest, int rank,
                        double alpha, std::uint64_t seed) {
  if (rank < 1) throw ConfigError("adapter rank must be >= 1");
  AdapterRef ref;
  ref.user = user;
  ref.objective = objective;
  ref.rank = rank;
  ref.alpha = alpha;
  ref.provenance = "init:" + hex64(derive_seed(seed, user, objective_name(objective)));
  for (const auto& [name, dims] : manifest.weights) {
    SeededRng rng(derive_seed(seed, user, objective_name(objective), name));
    Tensor a = Tensor::zeros({rank, dims[1]});
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[1]));
    for (auto& v : a.data) v = static_cast<float>((2.0 * rng.unit() - 1.0) * bound);
    ref.tensors.insert(lora_a_name(name), std::move(a));
    ref.tensors.insert(lora_b_name(name), Tensor::zeros({dims[0], rank}));
  }
  return ref;
}

// ---------------------------------------------------------------- registry

AdapterRegistry::AdapterRegistry(std::filesystem::path root, BaseManifest manifest)
    : root_(std::move(root)), manifest_(std::move(manifest)) {}

std::filesystem::path AdapterRegistry::slot(const std::string& user, Objective objective) const {
  return root_ / text::path_component(user) / objective_name(objective);
}

void AdapterRegistry::register_adapter(const AdapterRef& adapter, bool replace) {
  validate_adapter(adapter, &manifest_);
  std::unique_lock lock(mu_);
  const auto dir = slot(adapter.user, adapter.objective);
  if (std::filesystem::exists(dir / "meta.json") && !replace)
    throw Error("adapter " + adapter.id() + " already registered; pass replace to overwrite");
  Json meta;
  meta["user"] = adapter.user;
  meta["objective"] = objective_name(adapter.objective);
  meta["rank"] = adapter.rank;
  meta["alpha"] = adapter.alpha;
  meta["provenance"] = adapter.provenance;
  meta["targets"] = adapter.targets();
  adapter.tensors.save(dir / "adapter.tensors");
  write_file_atomic(dir / "meta.json", dump_pretty(meta));
}

bool AdapterRegistry::contains(const std::string& user, Objective objective) const {
  std::shared_lock lock(mu_);
  const auto dir = slot(user, objective);
  return std::filesystem::exists(dir / "meta.json") && std::filesystem::exists(dir / "adapter.tensors");
}

AdapterRef AdapterRegistry::fetch(const std::string& user, Objective objective) const {
  std::shared_lock lock(mu_);
  const auto dir = slot(user, objective);
  if (!std::filesystem::exists(dir / "meta.json"))
    throw Error("no adapter registered for " + user + "/" + objective_name(objective));
  AdapterRef ref;
  try {
    auto meta = Json::parse(read_file(dir / "meta.json"));
    ref.user = meta.at("user").get<std::string>();
    ref.objective = parse_objective(meta.at("objective").get<std::string>());
    ref.rank = meta.at("rank").get<int>();
    ref.alpha = meta.at("alpha").get<double>();
    ref.provenance = meta.value("provenance", "");
  } catch (const Json::exception& e) {
    throw FormatError("malformed adapter meta.json in " + dir.string() + ": " + e.what());
  }
  ref.tensors = TensorArchive::load(dir / "adapter.tensors");
  validate_adapter(ref, &manifest_);
  return ref;
}

std::vector<std::pair<std::string, Objective>> AdapterRegistry::list() const {
  std::shared_lock lock(mu_);
  std::vector<std::pair<std::string, Objective>> out;
  if (!std::filesystem::exists(root_)) return out;
  for (const auto& user_dir : std::filesystem::directory_iterator(root_)) {
    if (!user_dir.is_directory()) continue;
    for (const auto& obj_dir : std::filesystem::directory_iterator(user_dir.path())) {
      const auto meta_path = obj_dir.path() / "meta.json";
      if (!std::filesystem::exists(meta_path)) continue;
      try {
        auto meta = Json::parse(read_file(meta_path));
        out.emplace_back(meta.at("user").get<std::string>(), parse_objective(meta.at("objective").get<std::string>()));
      } catch (const std::exception&) {
        continue;
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------- training jobs

namespace {

std::string io_header(const Conversation& c) {
  return "\"author\": " + c.op_author + ". \"title\": " + c.op_title + ". \"body\": " + c.op_body;
}

std::string cig_input(const Conversation& c) {
  return "For the topic \"" + c.op_title + "\", the author \"" + c.op_author + "\" states:";
}

std::string oft_input(const Conversation& c) {
  return "The author, \"" + c.op_author +
         "\", has engaged with users on the Change-My-View subreddit across various original posts (OPs). "
         "Based on the author's preference and engagement patterns, generate a persuasive response that is "
         "highly likely to change their viewpoint on the following post. \"title\": " +
         c.op_title + ". \"body\": " + c.op_body;
}

std::string preference_input(const Conversation& c) {
  return "\"author\": " + c.op_author + ". \"title\": " + c.op_title + "\n\"body\": " + c.op_body;
}

std::string reply_output(const std::string& reply) { return "\"reply\": " + reply; }

}  // namespace

Json TrainingJobSpec::job_json() const {
  Json j;
  j["job_id"] = job_id;
  j["user"] = user;
  j["objective"] = objective_name(objective);
  j["format"] = is_preference(objective) ? "preference" : "supervised";
  j["example_count"] = example_count();
  j["hyperparameters"] = {{"epochs", hyper.epochs}, {"rank", hyper.rank}, {"alpha", hyper.alpha}, {"seed", hyper.seed}};
  return j;
}

std::vector<Json> TrainingJobSpec::example_rows() const {
  std::vector<Json> rows;
  for (const auto& e : examples) rows.push_back(Json{{"input", e.input}, {"output", e.output}});
  for (const auto& p : preferences) rows.push_back(Json{{"input", p.input}, {"chosen", p.chosen}, {"rejected", p.rejected}});
  return rows;
}

void TrainingJobSpec::save(const std::filesystem::path& dir) const {
  write_file_atomic(dir / "job.json", dump_pretty(job_json()));
  write_file_atomic(dir / "examples.jsonl", to_jsonl(example_rows()));
}

TrainingJobSpec build_training_job(const std::string& user, const std::vector<Conversation>& history,
                                   Objective objective, const JobOptions& options) {
  std::vector<Conversation> own;
  for (const auto& c : history)
    if (c.op_author == user) own.push_back(c);
  const std::string name = objective_name(objective);
  if (own.empty()) throw ObjectiveUnavailable("objective " + name + " unavailable for user " + user + ": no history");
  std::stable_sort(own.begin(), own.end(), [](const Conversation& a, const Conversation& b) {
    return std::tie(a.created_utc, a.op_id, a.reply_id) < std::tie(b.created_utc, b.op_id, b.reply_id);
  });

  TrainingJobSpec spec;
  spec.user = user;
  spec.objective = objective;
  spec.hyper = options;
  spec.job_id = hex64(derive_seed("job", user, name, options.seed));

  // One engagement per OP for the input-only objectives.
  std::vector<const Conversation*> ops;
  std::set<std::string> seen_ops;
  for (const auto& c : own)
    if (seen_ops.insert(c.op_id).second) ops.push_back(&c);

  const auto queries = corpus::build_queries(CorpusSplit{{}, own, 0}, {user}).queries;

  switch (objective) {
    case Objective::NTP:
      for (const auto* c : ops) spec.examples.push_back({io_header(*c), io_header(*c)});
      break;
    case Objective::CIG:
      for (const auto* c : ops) spec.examples.push_back({cig_input(*c), c->op_body});
      break;
    case Objective::O_FT:
      for (const auto& c : own)
        if (c.positive()) spec.examples.push_back({oft_input(c), reply_output(c.reply_body)});
      if (spec.examples.empty())
        throw ObjectiveUnavailable("objective O-FT unavailable for user " + user + ": no positive reply");
      break;
    case Objective::T_FT:
      for (const auto& q : queries) {
        const auto set = sample_candidates(q, options.negatives_per_example, derive_seed(options.seed, q.query_id));
        QueryContext ctx{q.author, q.op_title, q.op_body};
        spec.examples.push_back({render_eval_prompt(ctx, set.candidates), "[\"" + set.gold_label + "\"]"});
      }
      if (spec.examples.empty())
        throw ObjectiveUnavailable("objective T-FT unavailable for user " + user +
                                   ": no positive reply with same-OP negatives");
      break;
    case Objective::DPO:
    case Objective::SIMPO:
      for (const auto& q : queries) {
        SeededRng rng(derive_seed(options.seed, q.query_id, "rejected"));
        const auto& neg = q.negative_pool[rng.below(q.negative_pool.size())];
        spec.preferences.push_back(
            {preference_input(q.positive), reply_output(q.positive.reply_body), reply_output(neg.reply_body)});
      }
      if (spec.preferences.empty())
        throw ObjectiveUnavailable("objective " + name + " unavailable for user " + user +
                                   ": no positive reply with a same-OP negative");
      break;
  }
  return spec;
}

// ---------------------------------------------------------------- textual memory

std::string summary_method_name(SummaryMethod m) { return m == SummaryMethod::HSumm ? "HSumm" : "PKR"; }

Json ProfileSummary::to_json() const {
  Json j;
  j["user"] = user;
  j["method"] = summary_method_name(method);
  j["source_span"] = source_span;
  j["text"] = text;
  return j;
}

ProfileSummary ProfileSummary::from_json(const Json& j) {
  ProfileSummary s;
  try {
    s.user = j.at("user").get<std::string>();
    const auto m = j.at("method").get<std::string>();
    if (m != "HSumm" && m != "PKR") throw FormatError("unknown summary method " + m);
    s.method = m == "HSumm" ? SummaryMethod::HSumm : SummaryMethod::PKR;
    s.source_span = j.value("source_span", std::size_t{0});
    s.text = j.at("text").get<std::string>();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed profile summary: ") + e.what());
  }
  if (text::trim(s.text).empty()) throw FormatError("profile summary for " + s.user + " is empty");
  return s;
}

std::string render_chunk_summary_prompt(const std::string& user, std::span<const Conversation> chunk) {
  std::string out = "Below are past conversations from the Change-My-View subreddit in which the author \"" + user +
                    "\" wrote the original post. Summarize what they reveal about the author: values, beliefs, "
                    "recurring topics, and which kinds of replies changed the author's view.\n\n";
  for (std::size_t i = 0; i < chunk.size(); ++i) {
    const auto& c = chunk[i];
    out += "[Conversation " + std::to_string(i + 1) + "]\n";
    out += "OP title: " + c.op_title + "\nOP content: " + c.op_body + "\n";
    out += "Reply by " + c.reply_author + ": " + c.reply_body + "\n";
    out += c.positive() ? "Outcome: received a delta.\n\n" : "Outcome: no delta.\n\n";
  }
  out += "Concise summary:";
  return out;
}

std::string render_fold_prompt(const std::string& user, const std::string& previous, const std::string& next) {
  return "Merge the two profile summaries of the author \"" + user +
         "\" into one concise, updated profile. The second summary covers more recent conversations.\n\n"
         "Earlier summary:\n" +
         previous + "\n\nRecent summary:\n" + next + "\n\nUpdated summary:";
}

std::string render_pkr_prompt(const std::string& user) {
  return "You have been trained on the engagement history of the author \"" + user +
         "\" on the Change-My-View subreddit. Write a concise profile summary of this author: their values, "
         "beliefs, preferences, and the kinds of arguments that tend to change their view.\n\nProfile summary:";
}

namespace {

std::string checked_text(const Completion& c, const std::string& what) {
  if (!c.ok()) throw ProviderError(what + " failed: " + c.error);
  auto t = text::trim(c.text);
  if (t.empty()) throw ProviderError(what + " returned an empty completion");
  return std::string(t);
}

}  // namespace

ProfileSummary hierarchical_summarize(const Session& session, const std::string& user,
                                      const std::vector<Conversation>& history, std::size_t chunk_size) {
  if (chunk_size < 1) throw ConfigError("chunk_size must be >= 1");
  if (history.empty()) throw Error("nothing to summarize for user " + user);
  std::vector<Conversation> ordered = history;
  std::stable_sort(ordered.begin(), ordered.end(), [](const Conversation& a, const Conversation& b) {
    return std::tie(a.created_utc, a.op_id, a.reply_id) < std::tie(b.created_utc, b.op_id, b.reply_id);
  });
  std::optional<std::string> running;
  std::size_t chunk_index = 0;
  for (std::size_t start = 0; start < ordered.size(); start += chunk_size, ++chunk_index) {
    const std::size_t len = std::min(chunk_size, ordered.size() - start);
    std::span<const Conversation> chunk(ordered.data() + start, len);
    const std::string where = "HSumm chunk " + std::to_string(chunk_index) + " for " + user;
    std::string chunk_summary = checked_text(session.ask(render_chunk_summary_prompt(user, chunk)), where);
    if (!running)
      running = std::move(chunk_summary);
    else
      running = checked_text(session.ask(render_fold_prompt(user, *running, chunk_summary)), where + " (fold)");
  }
  return ProfileSummary{user, *running, SummaryMethod::HSumm, ordered.size()};
}

ProfileSummary pkr_summarize(const Session& session_with_adapter, const std::string& user) {
  if (!session_with_adapter.adapter) throw ConfigError("PKR requires a session with the user's adapter active");
  auto c = session_with_adapter.ask(render_pkr_prompt(user));
  return ProfileSummary{user, checked_text(c, "PKR for " + user), SummaryMethod::PKR, 0};
}

}  // namespace prime
