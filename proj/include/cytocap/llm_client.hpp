#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>

#include "cytocap/errors.hpp"

namespace cytocap {

struct GenerationRequest {
  std::string system_prompt;
  std::string user_prompt;
  int max_tokens = 256;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  std::string item_id;  // for error reporting only
};

struct GenerationResponse {
  std::string text;
  std::string finish_reason;
  double latency_ms = 0.0;
  std::string provider;
  int retries = 0;
};

struct HttpStatusError : Error {
  HttpStatusError(int status, const std::string& body)
      : Error("HTTP status " + std::to_string(status) + ": " + body.substr(0, 200)), status(status) {}
  int status;
};
struct TimeoutError : Error {
  using Error::Error;
};
struct TransportError : Error {
  using Error::Error;
};
struct MalformedResponseError : Error {
  using Error::Error;
};
// Raised after the retry budget is spent; carries the last underlying failure.
struct RetryBudgetExhausted : RetryableError {
  RetryBudgetExhausted(const std::string& last_error, std::string item_id, int attempts)
      : RetryableError("retry budget exhausted after " + std::to_string(attempts) + " attempts: " + last_error,
                       std::move(item_id)),
        attempts(attempts) {}
  int attempts;
};

class TextGenerator {
 public:
  virtual ~TextGenerator() = default;
  virtual GenerationResponse complete(const GenerationRequest& request) = 0;
  virtual std::string provider() const = 0;
};

// Pure function of (request, seed). The default responder is a template
// expansion keyed by the prompt hash; callers may install their own.
class StubClient final : public TextGenerator {
 public:
  using Responder = std::function<std::string(const GenerationRequest&, const std::string& prompt_hash)>;

  StubClient() = default;
  explicit StubClient(Responder responder) : responder_(std::move(responder)) {}

  GenerationResponse complete(const GenerationRequest& request) override;
  std::string provider() const override { return "stub"; }

  static std::string prompt_hash(const GenerationRequest& request);

 private:
  Responder responder_;
};

struct HttpClientConfig {
  std::string endpoint = "http://127.0.0.1:8000/v1/chat/completions";
  std::string model = "placeholder-model";
  double timeout_s = 30.0;
  int max_retries = 3;
  double backoff_initial_ms = 200.0;
  double backoff_multiplier = 2.0;
  std::string api_key_env;  // name of the environment variable holding the key
  int max_in_flight = 4;
};

// Chat-completions client: one POST per call, retries on transport errors,
// timeouts, 429 and 5xx with exponential backoff. Other 4xx fail at once.
class HttpClient final : public TextGenerator {
 public:
  explicit HttpClient(HttpClientConfig config);

  GenerationResponse complete(const GenerationRequest& request) override;
  std::string provider() const override { return "http:" + config_.model; }
  const HttpClientConfig& config() const noexcept { return config_; }

  // Request body for the given request (exposed for tests).
  std::string request_body(const GenerationRequest& request) const;
  static GenerationResponse parse_response(const std::string& body);

 private:
  GenerationResponse attempt(const GenerationRequest& request);

  HttpClientConfig config_;
  std::string scheme_host_port_;
  std::string path_;
  std::mutex mutex_;
  std::condition_variable slots_cv_;
  int in_flight_ = 0;
};

std::unique_ptr<TextGenerator> make_stub_client();

}  // namespace cytocap
