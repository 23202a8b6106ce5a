// SPDX-License-Identifier: Apache-2.0
#include "prime/llm_gateway.hpp"

#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "prime/error.hpp"
#include "prime/text.hpp"

namespace prime {

std::string finish_reason_name(FinishReason r) {
  switch (r) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
  }
  return "error";
}

void validate(const CompletionRequest& req) {
  if (req.max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  if (req.temperature < 0) throw ConfigError("temperature must be >= 0");
}

bool apply_stop(std::string& text, const std::vector<std::string>& stop) {
  std::size_t cut = std::string::npos;
  for (const auto& s : stop) {
    if (s.empty()) continue;
    cut = std::min(cut, text.find(s));
  }
  if (cut == std::string::npos) return false;
  text.resize(cut);
  return true;
}

// ---------------------------------------------------------------- mock

MockProvider::MockProvider(std::vector<MockRule> rules, std::string default_response)
    : default_response_(std::move(default_response)) {
  for (auto& r : rules) {
    try {
      Compiled c{std::regex(r.pattern), std::move(r.response), std::nullopt};
      if (r.adapter) c.adapter = std::regex(*r.adapter);
      rules_.push_back(std::move(c));
    } catch (const std::regex_error& e) {
      throw ConfigError("invalid mock pattern '" + r.pattern + "': " + e.what());
    }
  }
}

std::shared_ptr<MockProvider> MockProvider::from_json(const Json& j) {
  const Json* rules = &j;
  std::string fallback;
  if (j.is_object()) {
    for (const auto& [k, v] : j.items())
      if (k != "rules" && k != "default") throw ConfigError("unknown mock script key: " + k);
    rules = &j.at("rules");
    fallback = j.value("default", "");
  }
  if (!rules->is_array()) throw ConfigError("mock script must be a list of rules");
  std::vector<MockRule> out;
  for (const auto& r : *rules) {
    for (const auto& [k, v] : r.items())
      if (k != "pattern" && k != "response" && k != "adapter") throw ConfigError("unknown mock rule key: " + k);
    MockRule m{r.at("pattern").get<std::string>(), r.at("response").get<std::string>(), std::nullopt};
    if (r.contains("adapter")) m.adapter = r.at("adapter").get<std::string>();
    out.push_back(std::move(m));
  }
  return std::make_shared<MockProvider>(std::move(out), std::move(fallback));
}

std::shared_ptr<MockProvider> MockProvider::from_file(const std::filesystem::path& path) {
  try {
    return from_json(Json::parse(read_file(path)));
  } catch (const Json::exception& e) {
    throw ConfigError("bad mock script " + path.string() + ": " + e.what());
  }
}

Completion MockProvider::complete(const CompletionRequest& req) {
  validate(req);
  const auto start = std::chrono::steady_clock::now();
  const std::string prompt = req.system ? *req.system + "\n" + req.user_text : req.user_text;
  std::string text = default_response_;
  for (const auto& rule : rules_) {
    if (rule.adapter && (!req.adapter || !std::regex_search(*req.adapter, *rule.adapter))) continue;
    std::smatch m;
    if (std::regex_search(prompt, m, rule.pattern)) {
      text = m.format(rule.response);
      break;
    }
  }
  Completion c;
  c.finish_reason = FinishReason::stop;
  bool truncated = false;
  text = text::truncate_tokens(text, static_cast<std::size_t>(req.max_tokens), truncated);
  bool stopped = apply_stop(text, req.stop);
  if (truncated && !stopped) c.finish_reason = FinishReason::length;
  c.text = std::move(text);
  c.usage = {text::count_tokens(prompt), text::count_tokens(c.text)};
  c.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return c;
}

// ---------------------------------------------------------------- remote

SplitUrl split_endpoint(const std::string& endpoint, std::string_view route) {
  auto scheme = endpoint.find("://");
  std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
  auto slash = endpoint.find('/', host_start);
  SplitUrl out;
  out.origin = slash == std::string::npos ? endpoint : endpoint.substr(0, slash);
  std::string base = slash == std::string::npos ? "" : endpoint.substr(slash);
  while (!base.empty() && base.back() == '/') base.pop_back();
  if (base.size() < 3 || base.compare(base.size() - 3, 3, "/v1") != 0) base += "/v1";
  out.path = base + "/" + std::string(route);
  return out;
}

RemoteProvider::RemoteProvider(RemoteConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.endpoint.empty()) throw ConfigError("remote provider needs an endpoint");
  if (cfg_.retries < 1) throw ConfigError("remote provider retries must be >= 1");
  if (cfg_.adapter_mode != "model" && cfg_.adapter_mode != "field")
    throw ConfigError("adapter_mode must be 'model' or 'field'");
}

Json RemoteProvider::request_body(const CompletionRequest& req) const {
  Json body;
  body["model"] = (req.adapter && cfg_.adapter_mode == "model") ? *req.adapter : cfg_.model;
  Json messages = Json::array();
  if (req.system) messages.push_back({{"role", "system"}, {"content", *req.system}});
  messages.push_back({{"role", "user"}, {"content", req.user_text}});
  body["messages"] = std::move(messages);
  body["max_tokens"] = req.max_tokens;
  body["temperature"] = req.temperature;
  if (req.seed) body["seed"] = *req.seed;
  if (!req.stop.empty()) body["stop"] = req.stop;
  if (req.adapter && cfg_.adapter_mode == "field") body["adapter"] = *req.adapter;
  return body;
}

Completion RemoteProvider::complete(const CompletionRequest& req) {
  validate(req);
  const auto start = std::chrono::steady_clock::now();
  const auto url = split_endpoint(cfg_.endpoint, "chat/completions");
  const std::string payload = request_body(req).dump();
  httplib::Headers headers;
  if (!cfg_.api_key_env.empty()) {
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()))
      headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  Completion out;
  out.finish_reason = FinishReason::error;
  for (int attempt = 1; attempt <= cfg_.retries; ++attempt) {
    out.attempts = attempt;
    httplib::Client client(url.origin);
    client.set_connection_timeout(cfg_.timeout_s, 0);
    client.set_read_timeout(cfg_.timeout_s, 0);
    auto res = client.Post(url.path, headers, payload, "application/json");
    bool retryable = true;
    if (!res) {
      out.error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status == 200) {
      try {
        auto j = Json::parse(res->body);
        const auto& choice = j.at("choices").at(0);
        out.text = choice.at("message").at("content").get<std::string>();
        const auto reason = choice.value("finish_reason", "stop");
        out.finish_reason = reason == "length" ? FinishReason::length : FinishReason::stop;
        if (j.contains("usage")) {
          out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
          out.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
        }
        out.error.clear();
        break;
      } catch (const Json::exception& e) {
        out.error = std::string("malformed response: ") + e.what();
        retryable = false;
      }
    } else {
      out.error = "HTTP " + std::to_string(res->status);
      retryable = res->status == 429 || res->status >= 500;
    }
    if (!retryable) break;
    if (attempt < cfg_.retries)
      std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.backoff_ms * (1LL << (attempt - 1))));
  }
  if (!out.error.empty()) out.finish_reason = FinishReason::error;
  out.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ---------------------------------------------------------------- wrappers

BoundedProvider::BoundedProvider(std::shared_ptr<Provider> inner, std::ptrdiff_t max_in_flight)
    : inner_(std::move(inner)), slots_(std::clamp<std::ptrdiff_t>(max_in_flight, 1, 1024)) {}

Completion BoundedProvider::complete(const CompletionRequest& req) {
  slots_.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{slots_};
  return inner_->complete(req);
}

CompletionRequest Session::make_request(const std::string& user_text) const {
  CompletionRequest r;
  r.user_text = prefix ? *prefix + "\n\n" + user_text : user_text;
  r.max_tokens = max_tokens;
  r.temperature = temperature;
  r.seed = seed;
  r.adapter = adapter;
  r.stop = stop;
  return r;
}

Completion Session::ask(const std::string& user_text) const {
  if (!provider) throw ConfigError("session has no provider");
  return provider->complete(make_request(user_text));
}

}  // namespace prime
