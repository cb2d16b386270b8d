#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "cytocap/llm_client.hpp"
#include "doctest.h"
#include "httplib.h"
#include "json.hpp"

using namespace cytocap;
using nlohmann::json;

namespace {

std::string fixture_payload() {
  std::ifstream in(std::string(CYTOCAP_FIXTURES_DIR) + "/llm/chat_response.json");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Local chat-completions mock on an ephemeral port.
struct MockServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  explicit MockServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server.Post("/v1/chat/completions", std::move(handler));
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~MockServer() {
    server.stop();
    thread.join();
  }
  HttpClientConfig config() const {
    HttpClientConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    c.model = "mock-model";
    c.timeout_s = 2.0;
    c.backoff_initial_ms = 1.0;
    return c;
  }
};

GenerationRequest request() {
  GenerationRequest r;
  r.system_prompt = "sys";
  r.user_prompt = "Provide a caption for this microscopy image.";
  r.seed = 3;
  r.item_id = "item-1";
  return r;
}

}  // namespace

TEST_CASE("stub client is pure") {
  StubClient stub;
  const auto a = stub.complete(request());
  CHECK(a.text == stub.complete(request()).text);
  CHECK(a.provider == "stub");
  CHECK_FALSE(a.text.empty());
  auto other = request();
  other.seed = 4;
  CHECK(stub.complete(other).text != a.text);
  other = request();
  other.user_prompt += " ";
  CHECK(StubClient::prompt_hash(other) != StubClient::prompt_hash(request()));
  other = request();
  other.system_prompt = "x";
  CHECK(StubClient::prompt_hash(other) != StubClient::prompt_hash(request()));
  other = request();
  other.item_id = "another";  // not part of the prompt
  CHECK(StubClient::prompt_hash(other) == StubClient::prompt_hash(request()));

  StubClient custom([](const GenerationRequest& r, const std::string& h) { return r.user_prompt + "|" + h; });
  CHECK(custom.complete(request()).text == request().user_prompt + "|" + StubClient::prompt_hash(request()));
  auto bad = request();
  bad.max_tokens = 0;
  CHECK_THROWS_AS(stub.complete(bad), PreconditionError);
}

TEST_CASE("http client configuration") {
  HttpClientConfig c;
  c.endpoint = "ftp://example";
  CHECK_THROWS_AS(HttpClient{c}, ValidationError);
  c.endpoint = "http://127.0.0.1:1/x";
  c.max_in_flight = 0;
  CHECK_THROWS_AS(HttpClient{c}, ValidationError);
  c.max_in_flight = 1;
  HttpClient client(c);
  const json body = json::parse(client.request_body(request()));
  CHECK(body["model"] == c.model);
  CHECK(body["messages"][0]["role"] == "system");
  CHECK(body["messages"][1]["content"] == request().user_prompt);
  CHECK(body["seed"] == 3);
  CHECK(body["stream"] == false);
  CHECK(body.dump().find("Bearer") == std::string::npos);
}

TEST_CASE("parse_response") {
  const auto r = HttpClient::parse_response(fixture_payload());
  CHECK(r.text == "Layer IV of area hOc1 is broad.\nLayer II is thin.");
  CHECK(r.finish_reason == "stop");
  CHECK_THROWS_AS(HttpClient::parse_response("{not json"), MalformedResponseError);
  CHECK_THROWS_AS(HttpClient::parse_response(R"({"choices": []})"), MalformedResponseError);
  CHECK_THROWS_AS(HttpClient::parse_response(R"({"choices": [{"message": {}}]})"), MalformedResponseError);
}

TEST_CASE("http against mock server") {
  std::atomic<int> calls{0};
  std::string seen_auth, seen_body;
  std::mutex seen_mutex;
  MockServer mock([&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    {
      std::lock_guard lock(seen_mutex);
      seen_auth = req.get_header_value("Authorization");
      seen_body = req.body;
    }
    res.set_content(fixture_payload(), "application/json");
  });
  auto cfg = mock.config();
  cfg.api_key_env = "CYTOCAP_TEST_KEY";
  ::setenv("CYTOCAP_TEST_KEY", "secret-123", 1);
  HttpClient client(cfg);
  const auto r = client.complete(request());
  CHECK(r.text == HttpClient::parse_response(fixture_payload()).text);
  CHECK(r.retries == 0);
  CHECK(r.provider == "http:mock-model");
  CHECK(calls == 1);
  CHECK(seen_auth == "Bearer secret-123");
  CHECK(json::parse(seen_body)["messages"][1]["content"] == request().user_prompt);
  ::unsetenv("CYTOCAP_TEST_KEY");
}

TEST_CASE("retry contract") {
  std::atomic<int> calls{0};
  int fail_first = 3;
  int status = 500;
  MockServer mock([&](const httplib::Request&, httplib::Response& res) {
    if (calls++ < fail_first) {
      res.status = status;
      res.set_content("busy", "text/plain");
      return;
    }
    res.set_content(fixture_payload(), "application/json");
  });

  SUBCASE("500 three times then 200") {
    HttpClient client(mock.config());
    const auto r = client.complete(request());
    CHECK(r.retries == 3);
    CHECK(calls == 4);
    CHECK(r.text.find("Layer IV") == 0);
  }
  SUBCASE("429 is retried") {
    status = 429;
    fail_first = 1;
    HttpClient client(mock.config());
    CHECK(client.complete(request()).retries == 1);
  }
  SUBCASE("budget exhausted") {
    fail_first = 100;
    HttpClient client(mock.config());
    try {
      client.complete(request());
      FAIL("expected RetryBudgetExhausted");
    } catch (const RetryBudgetExhausted& e) {
      CHECK(e.attempts == 4);
      CHECK(e.item_id == "item-1");
    }
    CHECK(calls == 4);
  }
  SUBCASE("client errors are not retried") {
    status = 400;
    HttpClient client(mock.config());
    CHECK_THROWS_AS(client.complete(request()), HttpStatusError);
    CHECK(calls == 1);
  }
}

TEST_CASE("malformed and slow responses") {
  std::atomic<int> calls{0};
  std::atomic<bool> slow{false};
  MockServer mock([&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    if (slow) {
      std::this_thread::sleep_for(std::chrono::milliseconds(600));
    }
    res.set_content(R"({"unexpected": true})", "application/json");
  });
  auto cfg = mock.config();
  {
    HttpClient client(cfg);
    CHECK_THROWS_AS(client.complete(request()), MalformedResponseError);
    CHECK(calls == 1);
  }
  slow = true;
  cfg.timeout_s = 0.2;
  cfg.max_retries = 1;
  HttpClient client(cfg);
  try {
    client.complete(request());
    FAIL("expected RetryBudgetExhausted");
  } catch (const RetryBudgetExhausted& e) {
    CHECK(std::string(e.what()).find("timed out") != std::string::npos);
  }
}

TEST_CASE("max in flight") {
  std::atomic<int> active{0}, peak{0};
  MockServer mock([&](const httplib::Request&, httplib::Response& res) {
    const int now = ++active;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(40));
    --active;
    res.set_content(fixture_payload(), "application/json");
  });
  auto cfg = mock.config();
  cfg.max_in_flight = 2;
  HttpClient client(cfg);
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int i = 0; i < 6; ++i) {
    threads.emplace_back([&] {
      if (!client.complete(request()).text.empty()) ++ok;
    });
  }
  for (auto& t : threads) t.join();
  CHECK(ok == 6);
  CHECK(peak <= 2);
  CHECK(peak >= 1);
}
