#pragma once

#include <chrono>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <vector>

#include "drift/backends.hpp"

namespace drift {

struct HttpResponse {
  int status = 0;  // 0 means the request never got a response
  std::string body;
  std::string error;
};

// Moves one POST over the wire. Swappable so tests can replay recorded
// exchanges without a network.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& base_url, const std::string& path,
                            const std::map<std::string, std::string>& headers, const std::string& body) = 0;
};

// cpp-httplib client.
class HttplibTransport : public HttpTransport {
 public:
  explicit HttplibTransport(std::chrono::milliseconds timeout = std::chrono::seconds(60)) : timeout_(timeout) {}
  HttpResponse post(const std::string& base_url, const std::string& path, const std::map<std::string, std::string>& headers,
                    const std::string& body) override;

 private:
  std::chrono::milliseconds timeout_;
};

// Serves recorded responses in order and keeps the request bodies it saw.
class ReplayTransport : public HttpTransport {
 public:
  explicit ReplayTransport(std::vector<HttpResponse> responses);
  // Fixture file: JSON array of {"status": int, "body": string|object}.
  static std::shared_ptr<ReplayTransport> from_fixture(const std::string& path);

  HttpResponse post(const std::string& base_url, const std::string& path, const std::map<std::string, std::string>& headers,
                    const std::string& body) override;

  std::vector<std::string> requests() const;
  std::size_t remaining() const;

 private:
  mutable std::mutex mu_;
  std::deque<HttpResponse> responses_;
  std::vector<std::string> requests_;
};

struct EndpointConfig {
  std::string base_url;
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env = "DRIFT_API_KEY";
  int attempts = 3;
  std::chrono::milliseconds backoff{500};  // doubled after each failed attempt
  std::size_t max_in_flight = 4;
};

// Request body in chat-completions shape.
std::string render_chat_request(const EndpointConfig& endpoint, const std::string& system, const History& history,
                                const SamplerConfig& sampler);

// choices[0].message.content; BackendError when absent.
std::string extract_reply(const std::string& body);

// POST with retries on transport failures, 429 and 5xx. Reads the API key
// from the environment first and throws ConfigError if it is unset.
std::string http_generate(const EndpointConfig& endpoint, HttpTransport& transport, const std::string& system,
                          const History& history, const SamplerConfig& sampler);

// Chat-completions backend. Supports SPR only (no attention access, no
// second pass).
class HttpBackend : public ChatBackend {
 public:
  HttpBackend(EndpointConfig endpoint, std::shared_ptr<HttpTransport> transport = nullptr);

  std::string name() const override { return "http"; }
  BackendCapabilities capabilities() const override { return {false, false, false}; }
  GenerationResult generate(const GenerationRequest& request) const override;

 private:
  EndpointConfig endpoint_;
  std::shared_ptr<HttpTransport> transport_;
  mutable std::counting_semaphore<64> in_flight_;
};

}  // namespace drift
