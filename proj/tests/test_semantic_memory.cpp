// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <set>

#include "prime/error.hpp"
#include "prime/prompts.hpp"
#include "prime/seed.hpp"
#include "prime/semantic_memory.hpp"
#include "prime/text.hpp"

namespace fs = std::filesystem;
using namespace prime;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("prime_semantic_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor random_tensor(SeededRng& rng, std::int64_t rows, std::int64_t cols) {
  Tensor t = Tensor::zeros({rows, cols});
  for (auto& v : t.data) v = static_cast<float>(rng.unit() * 2.0 - 1.0);
  return t;
}

BaseManifest manifest() {
  BaseManifest m;
  m.model = "tiny";
  m.weights["layers.0.q_proj"] = {6, 5};
  m.weights["layers.0.v_proj"] = {4, 7};
  return m;
}

TensorArchive random_base(SeededRng& rng) {
  TensorArchive base;
  base.insert("layers.0.q_proj", random_tensor(rng, 6, 5));
  base.insert("layers.0.v_proj", random_tensor(rng, 4, 7));
  base.insert("embed", random_tensor(rng, 3, 3));
  return base;
}

AdapterRef random_adapter(SeededRng& rng, int rank, double alpha, bool both = true) {
  AdapterRef a;
  a.user = "u";
  a.rank = rank;
  a.alpha = alpha;
  a.tensors.insert(lora_a_name("layers.0.q_proj"), random_tensor(rng, rank, 5));
  a.tensors.insert(lora_b_name("layers.0.q_proj"), random_tensor(rng, 6, rank));
  if (both) {
    a.tensors.insert(lora_a_name("layers.0.v_proj"), random_tensor(rng, rank, 7));
    a.tensors.insert(lora_b_name("layers.0.v_proj"), random_tensor(rng, 4, rank));
  }
  return a;
}

// Dense oracle: materialize B*A, scale, then add.
Tensor dense_merge(const Tensor& w, const Tensor& a, const Tensor& b, double scale) {
  Tensor out = w;
  std::vector<double> delta(static_cast<std::size_t>(w.rows() * w.cols()), 0.0);
  for (std::int64_t k = 0; k < a.rows(); ++k)
    for (std::int64_t i = 0; i < b.rows(); ++i)
      for (std::int64_t j = 0; j < a.cols(); ++j)
        delta[static_cast<std::size_t>(i * w.cols() + j)] += static_cast<double>(b.at(i, k)) * a.at(k, j);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(out.data[i] + scale * delta[i]);
  return out;
}

Conversation conv(const std::string& op, const std::string& user, const std::string& reply, bool positive,
                  std::int64_t t) {
  Conversation c;
  c.op_id = op;
  c.op_author = user;
  c.op_title = "title of " + op;
  c.op_body = "body of " + op;
  c.reply_id = reply;
  c.reply_author = "ch_" + reply;
  c.reply_body = "reply text " + reply;
  c.label = positive ? Label::positive : Label::negative;
  c.created_utc = t;
  return c;
}

std::vector<Conversation> history() {
  std::vector<Conversation> h;
  for (int op = 0; op < 4; ++op) {
    const std::string id = "op" + std::to_string(op);
    for (int r = 0; r < 3; ++r)
      h.push_back(conv(id, "u", id + "r" + std::to_string(r), r == 1 && op != 3, 1000 - op * 10));
  }
  h.push_back(conv("other", "v", "otherr0", true, 5));
  return h;
}

}  // namespace

TEST(Merge, ZeroBIsIdentity) {
  SeededRng rng(11);
  auto base = random_base(rng);
  auto a = init_adapter("u", Objective::T_FT, manifest(), 4, 16.0, 99);
  auto merged = merge_adapter(base, a);
  EXPECT_EQ(merged.get("embed").data, base.get("embed").data);
  for (const char* w : {"layers.0.q_proj", "layers.0.v_proj"})
    for (std::size_t i = 0; i < base.get(w).data.size(); ++i)
      EXPECT_NEAR(merged.get(w).data[i], base.get(w).data[i], 1e-7);
}

TEST(Merge, MatchesDenseOracleForSeveralRanks) {
  for (int rank : {1, 2, 4}) {
    for (std::uint64_t trial = 0; trial < 5; ++trial) {
      SeededRng rng(derive_seed(std::string("merge"), std::uint64_t(rank), trial));
      auto base = random_base(rng);
      auto adapter = random_adapter(rng, rank, 1.0 + 31.0 * rng.unit(), trial % 2 == 0);
      auto merged = merge_adapter(base, adapter);
      for (const auto& w : adapter.targets()) {
        auto want = dense_merge(base.get(w), adapter.tensors.get(lora_a_name(w)), adapter.tensors.get(lora_b_name(w)),
                                adapter.scale());
        for (std::size_t i = 0; i < want.data.size(); ++i)
          EXPECT_NEAR(merged.get(w).data[i], want.data[i], 1e-6) << w << " rank " << rank;
      }
      EXPECT_EQ(merged.get("embed"), base.get("embed"));
      if (trial % 2) EXPECT_EQ(merged.get("layers.0.v_proj"), base.get("layers.0.v_proj"));
    }
  }
}

TEST(Merge, LinearInAlpha) {
  SeededRng rng(5);
  auto base = random_base(rng);
  auto adapter = random_adapter(rng, 2, 4.0);
  auto one = merge_adapter(base, adapter);
  adapter.alpha = 12.0;
  auto three = merge_adapter(base, adapter);
  for (const auto& w : adapter.targets()) {
    const auto& b0 = base.get(w).data;
    for (std::size_t i = 0; i < b0.size(); ++i) {
      const double d1 = static_cast<double>(one.get(w).data[i]) - b0[i];
      const double d3 = static_cast<double>(three.get(w).data[i]) - b0[i];
      EXPECT_NEAR(d3, 3.0 * d1, 1e-6);
    }
  }
}

TEST(Merge, RejectsMismatchedShapes) {
  SeededRng rng(2);
  auto base = random_base(rng);
  AdapterRef bad;
  bad.user = "u";
  bad.rank = 2;
  bad.tensors.insert(lora_a_name("layers.0.q_proj"), random_tensor(rng, 2, 4));
  bad.tensors.insert(lora_b_name("layers.0.q_proj"), random_tensor(rng, 6, 2));
  EXPECT_THROW(merge_adapter(base, bad), FormatError);
  auto m = manifest();
  EXPECT_THROW(validate_adapter(bad, &m), FormatError);
  AdapterRef unpaired;
  unpaired.user = "u";
  unpaired.rank = 2;
  unpaired.tensors.insert(lora_a_name("layers.0.q_proj"), random_tensor(rng, 2, 5));
  EXPECT_THROW(validate_adapter(unpaired), FormatError);
  AdapterRef missing_base = random_adapter(rng, 2, 4.0);
  TensorArchive small;
  small.insert("layers.0.q_proj", random_tensor(rng, 6, 5));
  EXPECT_THROW(merge_adapter(small, missing_base), FormatError);
}

TEST(InitAdapter, DeterministicAndBounded) {
  auto a = init_adapter("u", Objective::DPO, manifest(), 3, 8.0, 1);
  auto b = init_adapter("u", Objective::DPO, manifest(), 3, 8.0, 1);
  auto c = init_adapter("w", Objective::DPO, manifest(), 3, 8.0, 1);
  EXPECT_EQ(a.tensors, b.tensors);
  EXPECT_NE(a.tensors, c.tensors);
  const auto& qa = a.tensors.get(lora_a_name("layers.0.q_proj"));
  EXPECT_EQ(qa.shape, (std::vector<std::int64_t>{3, 5}));
  for (float v : qa.data) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(5.0));
  for (float v : a.tensors.get(lora_b_name("layers.0.v_proj")).data) EXPECT_EQ(v, 0.0f);
}

TEST(Registry, RegisterFetchListAndReplace) {
  auto dir = temp_dir("registry");
  AdapterRegistry reg(dir, manifest());
  auto a = init_adapter("u/../x", Objective::T_FT, manifest(), 2, 16.0, 1);
  reg.register_adapter(a);
  EXPECT_TRUE(reg.contains("u/../x", Objective::T_FT));
  EXPECT_FALSE(reg.contains("u/../x", Objective::DPO));
  EXPECT_TRUE(fs::exists(dir / text::path_component("u/../x") / "T-FT" / "meta.json"));
  auto back = reg.fetch("u/../x", Objective::T_FT);
  EXPECT_EQ(back.tensors, a.tensors);
  EXPECT_EQ(back.rank, 2);
  EXPECT_EQ(back.provenance, a.provenance);
  EXPECT_THROW(reg.register_adapter(a), Error);
  reg.register_adapter(a, true);
  reg.register_adapter(init_adapter("b", Objective::NTP, manifest(), 2, 16.0, 1));
  auto listed = reg.list();
  ASSERT_EQ(listed.size(), 2u);
  EXPECT_EQ(listed[0].first, "b");
  EXPECT_THROW(reg.fetch("nobody", Objective::T_FT), Error);
  AdapterRef wrong = init_adapter("c", Objective::NTP, manifest(), 2, 16.0, 1);
  wrong.tensors.insert(lora_a_name("unknown"), Tensor::zeros({2, 3}));
  wrong.tensors.insert(lora_b_name("unknown"), Tensor::zeros({3, 2}));
  EXPECT_THROW(reg.register_adapter(wrong), FormatError);
}

TEST(TrainingJob, SupervisedObjectivesUseOwnOpsOnly) {
  auto h = history();
  auto ntp = build_training_job("u", h, Objective::NTP);
  ASSERT_EQ(ntp.examples.size(), 4u);
  EXPECT_EQ(ntp.examples[0].input, "\"author\": u. \"title\": title of op3. \"body\": body of op3");
  EXPECT_EQ(ntp.examples[0].input, ntp.examples[0].output);
  auto cig = build_training_job("u", h, Objective::CIG);
  ASSERT_EQ(cig.examples.size(), 4u);
  EXPECT_EQ(cig.examples[1].input, "For the topic \"title of op2\", the author \"u\" states:");
  EXPECT_EQ(cig.examples[1].output, "body of op2");
  auto oft = build_training_job("u", h, Objective::O_FT);
  ASSERT_EQ(oft.examples.size(), 3u);
  EXPECT_EQ(oft.examples[0].output, "\"reply\": reply text op2r1");
  for (const auto& e : oft.examples) EXPECT_EQ(e.input.find("other"), std::string::npos);
}

TEST(TrainingJob, TaskFineTuningTargetsGoldLabel) {
  auto h = history();
  JobOptions opt;
  opt.seed = 4;
  auto job = build_training_job("u", h, Objective::T_FT, opt);
  ASSERT_EQ(job.examples.size(), 3u);
  for (const auto& e : job.examples) {
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < 26; ++i) labels.push_back(option_label(i));
    auto pred = parse_option_array(e.output, labels);
    ASSERT_EQ(pred.option_ids.size(), 1u);
    const auto label_pos = e.input.find("\"option ID\":\"" + pred.option_ids[0] + "\"");
    ASSERT_NE(label_pos, std::string::npos);
    const auto line_end = e.input.find('\n', label_pos);
    EXPECT_NE(e.input.substr(label_pos, line_end - label_pos).find("r1\""), std::string::npos);
  }
  EXPECT_EQ(build_training_job("u", h, Objective::T_FT, opt).job_json().dump(), job.job_json().dump());
}

TEST(TrainingJob, PreferencePairsAndUnavailable) {
  auto h = history();
  auto dpo = build_training_job("u", h, Objective::DPO);
  ASSERT_EQ(dpo.preferences.size(), 3u);
  for (const auto& p : dpo.preferences) {
    EXPECT_NE(p.chosen, p.rejected);
    EXPECT_NE(p.chosen.find("r1"), std::string::npos);
    EXPECT_EQ(p.rejected.find("r1"), std::string::npos);
    EXPECT_EQ(p.input.rfind("\"author\": u. \"title\": ", 0), 0u);
  }
  EXPECT_EQ(build_training_job("u", h, Objective::SIMPO).job_json()["format"], "preference");
  std::vector<Conversation> lonely = {conv("solo", "z", "solor0", true, 1)};
  EXPECT_THROW(build_training_job("z", lonely, Objective::T_FT), ObjectiveUnavailable);
  EXPECT_THROW(build_training_job("z", lonely, Objective::DPO), ObjectiveUnavailable);
  EXPECT_THROW(build_training_job("nobody", h, Objective::NTP), ObjectiveUnavailable);
  EXPECT_NO_THROW(build_training_job("z", lonely, Objective::NTP));
}

TEST(TrainingJob, SavesJobAndExamples) {
  auto dir = temp_dir("job");
  auto job = build_training_job("u", history(), Objective::DPO);
  job.save(dir);
  auto j = Json::parse(read_file(dir / "job.json"));
  EXPECT_EQ(j["example_count"], 3);
  EXPECT_EQ(j["objective"], "DPO");
  auto rows = read_jsonl(dir / "examples.jsonl");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_TRUE(rows[0].contains("chosen"));
  EXPECT_TRUE(rows[0].contains("rejected"));
}

TEST(Summaries, HierarchicalCallCountAndOrder) {
  std::atomic<int> chunks{0}, folds{0};
  auto provider = std::make_shared<FunctionProvider>([&](const CompletionRequest& req) {
    Completion c;
    if (req.user_text.find("Updated summary:") != std::string::npos) {
      ++folds;
      c.text = "folded";
    } else {
      ++chunks;
      c.text = "chunk";
    }
    return c;
  });
  Session s;
  s.provider = provider;
  auto h = history();
  auto summary = hierarchical_summarize(s, "u", h, 5);
  EXPECT_EQ(chunks.load(), 3);
  EXPECT_EQ(folds.load(), 2);
  EXPECT_EQ(summary.text, "folded");
  EXPECT_EQ(summary.method, SummaryMethod::HSumm);
  EXPECT_EQ(summary.source_span, h.size());
}

TEST(Summaries, HierarchicalNamesFailingChunk) {
  std::atomic<int> calls{0};
  auto provider = std::make_shared<FunctionProvider>([&](const CompletionRequest&) {
    Completion c;
    if (++calls == 2) {
      c.finish_reason = FinishReason::error;
      c.error = "boom";
    } else {
      c.text = "ok";
    }
    return c;
  });
  Session s;
  s.provider = provider;
  try {
    hierarchical_summarize(s, "u", history(), 4);
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_NE(std::string(e.what()).find("chunk 1"), std::string::npos);
  }
}

TEST(Summaries, PkrRequiresAdapter) {
  auto provider = std::make_shared<FunctionProvider>([](const CompletionRequest& req) {
    Completion c;
    c.text = req.adapter ? "profile for " + *req.adapter : "";
    return c;
  });
  Session s;
  s.provider = provider;
  EXPECT_THROW(pkr_summarize(s, "u"), ConfigError);
  s.adapter = "u/T-FT";
  auto p = pkr_summarize(s, "u");
  EXPECT_EQ(p.text, "profile for u/T-FT");
  EXPECT_EQ(p.method, SummaryMethod::PKR);
  auto round = ProfileSummary::from_json(p.to_json());
  EXPECT_EQ(round.text, p.text);
  EXPECT_THROW(ProfileSummary::from_json(Json{{"user", "u"}, {"method", "PKR"}, {"text", " "}}), FormatError);
}
