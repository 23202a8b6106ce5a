// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <regex>
#include <semaphore>
#include <string>
#include <vector>

#include "prime/json_io.hpp"

namespace prime {

struct CompletionRequest {
  std::optional<std::string> system;
  std::string user_text;
  int max_tokens = 512;
  double temperature = 0.0;
  std::optional<std::int64_t> seed;
  /// Adapter identifier ("<user>/<objective>") for multi-adapter backends.
  std::optional<std::string> adapter;
  std::vector<std::string> stop;
};

enum class FinishReason { stop, length, error };

struct Usage {
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

struct Completion {
  std::string text;
  FinishReason finish_reason = FinishReason::stop;
  Usage usage;
  double latency_ms = 0.0;
  int attempts = 1;
  std::string error;

  bool ok() const { return finish_reason != FinishReason::error; }
};

std::string finish_reason_name(FinishReason r);

/// Throws ConfigError on max_tokens < 1 or negative temperature.
void validate(const CompletionRequest& req);

/// Completion provider. Implementations must be safe to call concurrently.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual Completion complete(const CompletionRequest& req) = 0;
};

/// Cuts text at the earliest stop sequence. Returns true when one was found.
bool apply_stop(std::string& text, const std::vector<std::string>& stop);

struct MockRule {
  std::string pattern;
  std::string response;
  /// Optional regex that must match the request's adapter id. A rule with an
  /// adapter pattern never matches a request without an adapter.
  std::optional<std::string> adapter;
};

/// Deterministic offline provider: the first rule whose regex matches the
/// system text + user text wins; "$1"-style groups expand in the response.
/// Responses are cut to max_tokens whitespace tokens (finish_reason=length).
class MockProvider : public Provider {
 public:
  MockProvider(std::vector<MockRule> rules, std::string default_response);

  /// Loads a JSON list of {pattern, response[, adapter]} rules, or an object
  /// {"rules": [...], "default": "..."}.
  static std::shared_ptr<MockProvider> from_file(const std::filesystem::path& path);
  static std::shared_ptr<MockProvider> from_json(const Json& j);

  Completion complete(const CompletionRequest& req) override;

 private:
  struct Compiled {
    std::regex pattern;
    std::string response;
    std::optional<std::regex> adapter;
  };
  std::vector<Compiled> rules_;
  std::string default_response_;
};

/// Programmatic provider for tests and tooling.
class FunctionProvider : public Provider {
 public:
  using Fn = std::function<Completion(const CompletionRequest&)>;
  explicit FunctionProvider(Fn fn) : fn_(std::move(fn)) {}
  Completion complete(const CompletionRequest& req) override { return fn_(req); }

 private:
  Fn fn_;
};

struct RemoteConfig {
  /// Base URL, e.g. "http://127.0.0.1:8000". "/v1/chat/completions" is appended.
  std::string endpoint;
  std::string model;
  /// Name of the environment variable holding the API key; never the key itself.
  std::string api_key_env;
  int retries = 3;
  int backoff_ms = 200;
  int timeout_s = 120;
  /// "model": the adapter id replaces the model name (vLLM-style LoRA serving);
  /// "field": the adapter id is sent as an extra "adapter" request field.
  std::string adapter_mode = "model";
};

struct SplitUrl {
  std::string origin;
  std::string path;
};

/// Splits a base URL into origin and "<base path>/v1/<route>"; a trailing
/// "/v1" on the base is not duplicated.
SplitUrl split_endpoint(const std::string& endpoint, std::string_view route);

/// OpenAI-compatible chat-completions client. Transport errors and 5xx/429
/// responses retry with exponential backoff; after `retries` attempts the
/// result has finish_reason=error.
class RemoteProvider : public Provider {
 public:
  explicit RemoteProvider(RemoteConfig cfg);
  Completion complete(const CompletionRequest& req) override;

  Json request_body(const CompletionRequest& req) const;

 private:
  RemoteConfig cfg_;
};

/// Caps the number of in-flight requests to an inner provider.
class BoundedProvider : public Provider {
 public:
  BoundedProvider(std::shared_ptr<Provider> inner, std::ptrdiff_t max_in_flight);
  Completion complete(const CompletionRequest& req) override;

 private:
  std::shared_ptr<Provider> inner_;
  std::counting_semaphore<1024> slots_;
};

/// Counts calls. Used to verify resumability and dry runs.
class CountingProvider : public Provider {
 public:
  explicit CountingProvider(std::shared_ptr<Provider> inner) : inner_(std::move(inner)) {}
  Completion complete(const CompletionRequest& req) override {
    ++calls_;
    return inner_->complete(req);
  }
  std::size_t calls() const { return calls_.load(); }

 private:
  std::shared_ptr<Provider> inner_;
  std::atomic<std::size_t> calls_{0};
};

/// A provider plus the per-session settings that make it a particular model
/// variant: optional active adapter and optional textual prefix (a profile
/// summary prepended to every query).
struct Session {
  std::shared_ptr<Provider> provider;
  std::optional<std::string> adapter;
  std::optional<std::string> prefix;
  double temperature = 0.0;
  std::optional<std::int64_t> seed;
  int max_tokens = 512;
  std::vector<std::string> stop;

  CompletionRequest make_request(const std::string& user_text) const;
  Completion ask(const std::string& user_text) const;
};

}  // namespace prime
