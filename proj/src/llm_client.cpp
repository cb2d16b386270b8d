#include "cytocap/llm_client.hpp"

#include <cstdlib>
#include <regex>
#include <thread>

#include "cytocap/hash.hpp"
#include "httplib.h"
#include "json.hpp"

namespace cytocap {

using nlohmann::json;

std::string StubClient::prompt_hash(const GenerationRequest& request) {
  return sha256_hex(request.system_prompt + '\x1f' + request.user_prompt + '\x1f' + std::to_string(request.seed));
}

GenerationResponse StubClient::complete(const GenerationRequest& request) {
  if (request.max_tokens <= 0) throw PreconditionError("max_tokens must be positive");
  const auto start = std::chrono::steady_clock::now();
  const std::string h = prompt_hash(request);
  GenerationResponse out;
  if (responder_) {
    out.text = responder_(request, h);
  } else {
    out.text = "Stub response " + h.substr(0, 12) + ".";
  }
  out.finish_reason = "stop";
  out.provider = provider();
  out.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::unique_ptr<TextGenerator> make_stub_client() { return std::make_unique<StubClient>(); }

HttpClient::HttpClient(HttpClientConfig config) : config_(std::move(config)) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.endpoint, m, url)) {
    throw ValidationError("endpoint must be an http(s) URL: '" + config_.endpoint + "'");
  }
  scheme_host_port_ = m[1];
  path_ = m[2].matched ? m[2].str() : "/";
  if (config_.max_retries < 0) throw ValidationError("max_retries must be >= 0");
  if (config_.max_in_flight < 1) throw ValidationError("max_in_flight must be >= 1");
  if (config_.timeout_s <= 0) throw ValidationError("timeout must be positive");
}

std::string HttpClient::request_body(const GenerationRequest& request) const {
  json messages = json::array();
  if (!request.system_prompt.empty()) messages.push_back({{"role", "system"}, {"content", request.system_prompt}});
  messages.push_back({{"role", "user"}, {"content", request.user_prompt}});
  json body = {{"model", config_.model},
               {"messages", messages},
               {"max_tokens", request.max_tokens},
               {"temperature", request.temperature},
               {"seed", request.seed},
               {"stream", false}};
  return body.dump();
}

GenerationResponse HttpClient::parse_response(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw MalformedResponseError(std::string("response is not JSON: ") + e.what());
  }
  try {
    const auto& choice = j.at("choices").at(0);
    GenerationResponse out;
    out.text = choice.at("message").at("content").get<std::string>();
    if (choice.contains("finish_reason") && choice["finish_reason"].is_string()) {
      out.finish_reason = choice["finish_reason"].get<std::string>();
    }
    return out;
  } catch (const json::exception& e) {
    throw MalformedResponseError(std::string("response lacks choices[0].message.content: ") + e.what());
  }
}

GenerationResponse HttpClient::attempt(const GenerationRequest& request) {
  httplib::Client client(scheme_host_port_);
  const auto secs = static_cast<time_t>(config_.timeout_s);
  const auto usecs = static_cast<time_t>((config_.timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  auto res = client.Post(path_, headers, request_body(request), "application/json");
  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout) {
      throw TimeoutError("request timed out: " + httplib::to_string(err));
    }
    throw TransportError("request failed: " + httplib::to_string(err));
  }
  if (res->status < 200 || res->status >= 300) throw HttpStatusError(res->status, res->body);
  return parse_response(res->body);
}

GenerationResponse HttpClient::complete(const GenerationRequest& request) {
  if (request.max_tokens <= 0) throw PreconditionError("max_tokens must be positive");
  {
    std::unique_lock lock(mutex_);
    slots_cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
    ++in_flight_;
  }
  struct Release {
    HttpClient* self;
    ~Release() {
      {
        std::lock_guard lock(self->mutex_);
        --self->in_flight_;
      }
      self->slots_cv_.notify_one();
    }
  } release{this};

  const auto start = std::chrono::steady_clock::now();
  double backoff = config_.backoff_initial_ms;
  std::string last_error;
  for (int attempt_no = 0; attempt_no <= config_.max_retries; ++attempt_no) {
    try {
      auto out = attempt(request);
      out.retries = attempt_no;
      out.provider = provider();
      out.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      return out;
    } catch (const HttpStatusError& e) {
      if (e.status != 429 && e.status < 500) throw;
      last_error = e.what();
    } catch (const TimeoutError& e) {
      last_error = e.what();
    } catch (const TransportError& e) {
      last_error = e.what();
    }
    if (attempt_no < config_.max_retries) {
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(backoff));
      backoff *= config_.backoff_multiplier;
    }
  }
  throw RetryBudgetExhausted(last_error, request.item_id, config_.max_retries + 1);
}

}  // namespace cytocap
