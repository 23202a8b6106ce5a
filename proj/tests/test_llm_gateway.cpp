// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "prime/error.hpp"
#include "prime/llm_gateway.hpp"

using namespace prime;

namespace {

class LocalServer {
 public:
  explicit LocalServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/chat/completions", handler);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

std::string chat_response(const std::string& content, const std::string& reason = "stop") {
  Json j;
  j["choices"] = Json::array({Json{{"message", {{"role", "assistant"}, {"content", content}}}, {"finish_reason", reason}}});
  j["usage"] = {{"prompt_tokens", 7}, {"completion_tokens", 2}};
  return j.dump();
}

int unused_port() {
  httplib::Server probe;
  int port = probe.bind_to_any_port("127.0.0.1");
  return port;
}

}  // namespace

TEST(Validate, RejectsBadLimits) {
  CompletionRequest r;
  r.max_tokens = 0;
  EXPECT_THROW(validate(r), ConfigError);
  r.max_tokens = 1;
  r.temperature = -0.1;
  EXPECT_THROW(validate(r), ConfigError);
}

TEST(MockProvider, FirstMatchingRuleWinsWithGroups) {
  MockProvider mock({{"pick (\\w+)", "chose $1", std::nullopt}, {"pick", "never", std::nullopt}}, "fallback");
  CompletionRequest r;
  r.user_text = "please pick banana now";
  EXPECT_EQ(mock.complete(r).text, "chose banana");
  r.user_text = "nothing";
  EXPECT_EQ(mock.complete(r).text, "fallback");
}

TEST(MockProvider, AdapterRulesAndSystemText) {
  MockProvider mock({{"q", "adapted", std::string("^u1/")}, {"SYS\nq", "plain", std::nullopt}}, "");
  CompletionRequest r;
  r.user_text = "q";
  r.system = "SYS";
  EXPECT_EQ(mock.complete(r).text, "plain");
  r.adapter = "u1/T-FT";
  EXPECT_EQ(mock.complete(r).text, "adapted");
  r.adapter = "u2/T-FT";
  EXPECT_EQ(mock.complete(r).text, "plain");
}

TEST(MockProvider, TruncatesAndStops) {
  MockProvider mock({}, "one two three four #END tail");
  CompletionRequest r;
  r.max_tokens = 2;
  auto c = mock.complete(r);
  EXPECT_EQ(c.text, "one two");
  EXPECT_EQ(c.finish_reason, FinishReason::length);
  r.max_tokens = 100;
  r.stop = {"#END"};
  c = mock.complete(r);
  EXPECT_EQ(c.text, "one two three four ");
  EXPECT_EQ(c.finish_reason, FinishReason::stop);
}

TEST(MockProvider, ScriptParsingRejectsUnknownKeys) {
  auto ok = MockProvider::from_json(Json::parse(R"({"rules":[{"pattern":"a","response":"b"}],"default":"d"})"));
  CompletionRequest r;
  r.user_text = "zzz";
  EXPECT_EQ(ok->complete(r).text, "d");
  EXPECT_THROW(MockProvider::from_json(Json::parse(R"({"rulez":[]})")), ConfigError);
  EXPECT_THROW(MockProvider::from_json(Json::parse(R"([{"pattern":"a","response":"b","x":1}])")), ConfigError);
  EXPECT_THROW(MockProvider::from_json(Json::parse(R"([{"pattern":"(","response":"b"}])")), ConfigError);
}

TEST(SplitEndpoint, AppendsVersionOnce) {
  auto a = split_endpoint("http://h:1", "chat/completions");
  EXPECT_EQ(a.origin, "http://h:1");
  EXPECT_EQ(a.path, "/v1/chat/completions");
  auto b = split_endpoint("https://h/api/v1/", "embeddings");
  EXPECT_EQ(b.origin, "https://h");
  EXPECT_EQ(b.path, "/api/v1/embeddings");
}

TEST(RemoteProvider, RequestBodyCarriesAdapterAndSeed) {
  RemoteConfig cfg{"http://x", "base-model", "", 1, 1, 1, "model"};
  RemoteProvider p(cfg);
  CompletionRequest r;
  r.user_text = "hi";
  r.adapter = "u/T-FT";
  r.seed = 5;
  auto body = p.request_body(r);
  EXPECT_EQ(body["model"], "u/T-FT");
  EXPECT_EQ(body["seed"], 5);
  cfg.adapter_mode = "field";
  auto body2 = RemoteProvider(cfg).request_body(r);
  EXPECT_EQ(body2["model"], "base-model");
  EXPECT_EQ(body2["adapter"], "u/T-FT");
  cfg.adapter_mode = "other";
  EXPECT_THROW(RemoteProvider{cfg}, ConfigError);
}

TEST(RemoteProvider, SucceedsAndSendsKeyFromEnvironment) {
  std::string seen_auth;
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    auto body = Json::parse(req.body);
    res.set_content(chat_response("echo " + body["messages"][0]["content"].get<std::string>()), "application/json");
  });
  ::setenv("PRIME_TEST_KEY", "sekrit", 1);
  RemoteProvider p({server.endpoint(), "m", "PRIME_TEST_KEY", 3, 1, 5, "model"});
  CompletionRequest r;
  r.user_text = "hello";
  auto c = p.complete(r);
  EXPECT_TRUE(c.ok()) << c.error;
  EXPECT_EQ(c.text, "echo hello");
  EXPECT_EQ(c.usage.prompt_tokens, 7u);
  EXPECT_EQ(c.attempts, 1);
  EXPECT_EQ(seen_auth, "Bearer sekrit");
}

TEST(RemoteProvider, RetriesServerErrors) {
  std::atomic<int> calls{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    if (++calls < 3) {
      res.status = 503;
      return;
    }
    res.set_content(chat_response("finally", "length"), "application/json");
  });
  RemoteProvider p({server.endpoint(), "m", "", 3, 1, 5, "model"});
  CompletionRequest r;
  r.user_text = "x";
  auto c = p.complete(r);
  EXPECT_EQ(calls.load(), 3);
  EXPECT_EQ(c.attempts, 3);
  EXPECT_EQ(c.text, "finally");
  EXPECT_EQ(c.finish_reason, FinishReason::length);
}

TEST(RemoteProvider, ClientErrorsDoNotRetry) {
  std::atomic<int> calls{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 400;
  });
  RemoteProvider p({server.endpoint(), "m", "", 3, 1, 5, "model"});
  CompletionRequest r;
  auto c = p.complete(r);
  EXPECT_EQ(calls.load(), 1);
  EXPECT_FALSE(c.ok());
  EXPECT_NE(c.error.find("400"), std::string::npos);
}

TEST(RemoteProvider, UnreachableEndpointFailsAfterRetries) {
  RemoteProvider p({"http://127.0.0.1:" + std::to_string(unused_port()), "m", "", 3, 1, 1, "model"});
  CompletionRequest r;
  auto c = p.complete(r);
  EXPECT_FALSE(c.ok());
  EXPECT_EQ(c.attempts, 3);
  EXPECT_NE(c.error.find("transport"), std::string::npos);
}

TEST(BoundedProvider, CapsConcurrency) {
  std::atomic<int> live{0}, peak{0};
  auto inner = std::make_shared<FunctionProvider>([&](const CompletionRequest&) {
    int now = ++live;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --live;
    return Completion{};
  });
  BoundedProvider bounded(inner, 2);
  std::vector<std::thread> ts;
  for (int i = 0; i < 8; ++i) ts.emplace_back([&] { bounded.complete(CompletionRequest{}); });
  for (auto& t : ts) t.join();
  EXPECT_LE(peak.load(), 2);
}

TEST(Session, PrefixAndAdapterFlowIntoRequest) {
  auto counting = std::make_shared<CountingProvider>(std::make_shared<FunctionProvider>([](const CompletionRequest& r) {
    Completion c;
    c.text = r.user_text + "|" + r.adapter.value_or("-");
    return c;
  }));
  Session s;
  s.provider = counting;
  s.prefix = "PROFILE";
  s.adapter = "u/NTP";
  EXPECT_EQ(s.ask("Q").text, "PROFILE\n\nQ|u/NTP");
  EXPECT_EQ(counting->calls(), 1u);
  Session empty;
  EXPECT_THROW(empty.ask("Q"), ConfigError);
}
