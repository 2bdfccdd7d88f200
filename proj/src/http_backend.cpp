#include "drift/http_backend.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "drift/errors.hpp"

namespace drift {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

HttpResponse HttplibTransport::post(const std::string& base_url, const std::string& path,
                                    const std::map<std::string, std::string>& headers, const std::string& body) {
  httplib::Client client(base_url);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  client.set_connection_timeout(secs.count(), 0);
  client.set_read_timeout(secs.count(), 0);
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  auto res = client.Post(path, h, body, "application/json");
  HttpResponse out;
  if (!res) {
    out.error = httplib::to_string(res.error());
    return out;
  }
  out.status = res->status;
  out.body = res->body;
  return out;
}

ReplayTransport::ReplayTransport(std::vector<HttpResponse> responses) : responses_(responses.begin(), responses.end()) {}

std::shared_ptr<ReplayTransport> ReplayTransport::from_fixture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open HTTP fixture " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("HTTP fixture is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_array()) throw ConfigError("HTTP fixture must be a JSON array");
  std::vector<HttpResponse> rs;
  for (const auto& e : j) {
    HttpResponse r;
    r.status = e.value("status", 0);
    if (e.contains("body")) r.body = e.at("body").is_string() ? e.at("body").get<std::string>() : e.at("body").dump();
    r.error = e.value("error", std::string());
    rs.push_back(std::move(r));
  }
  return std::make_shared<ReplayTransport>(std::move(rs));
}

HttpResponse ReplayTransport::post(const std::string&, const std::string&, const std::map<std::string, std::string>&,
                                   const std::string& body) {
  std::lock_guard lock(mu_);
  requests_.push_back(body);
  if (responses_.empty()) return HttpResponse{0, {}, "replay fixture exhausted"};
  HttpResponse r = responses_.front();
  responses_.pop_front();
  return r;
}

std::vector<std::string> ReplayTransport::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

std::size_t ReplayTransport::remaining() const {
  std::lock_guard lock(mu_);
  return responses_.size();
}

std::string render_chat_request(const EndpointConfig& endpoint, const std::string& system, const History& history,
                                const SamplerConfig& sampler) {
  ojson messages = ojson::array();
  if (!system.empty()) messages.push_back({{"role", "system"}, {"content", system}});
  for (const auto& m : history) {
    if (m.role == Role::system) throw DomainError("system messages belong in the system segment");
    messages.push_back({{"role", m.role == Role::user ? "user" : "assistant"}, {"content", m.text}});
  }
  ojson body;
  body["model"] = endpoint.model;
  body["messages"] = std::move(messages);
  body["temperature"] = sampler.temperature;
  body["top_p"] = sampler.nucleus_p;
  return body.dump();
}

std::string extract_reply(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error&) {
    throw BackendError("malformed response: not JSON");
  }
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw BackendError("malformed response: content is not a string");
    return content.get<std::string>();
  } catch (const json::exception&) {
    throw BackendError("malformed response: missing choices[0].message.content");
  }
}

std::string http_generate(const EndpointConfig& endpoint, HttpTransport& transport, const std::string& system,
                          const History& history, const SamplerConfig& sampler) {
  const char* key = std::getenv(endpoint.api_key_env.c_str());
  if (key == nullptr || *key == '\0') throw ConfigError("environment variable " + endpoint.api_key_env + " is not set");
  if (endpoint.base_url.empty()) throw ConfigError("HTTP backend needs a base_url");
  if (endpoint.attempts < 1) throw ConfigError("HTTP backend needs at least one attempt");
  const std::string body = render_chat_request(endpoint, system, history, sampler);
  const std::map<std::string, std::string> headers{{"Authorization", std::string("Bearer ") + key}};

  auto delay = endpoint.backoff;
  std::string last;
  for (int attempt = 1; attempt <= endpoint.attempts; ++attempt) {
    const HttpResponse r = transport.post(endpoint.base_url, endpoint.path, headers, body);
    if (r.status >= 200 && r.status < 300) return extract_reply(r.body);
    const bool transient = r.status == 0 || r.status == 429 || r.status >= 500;
    last = r.status == 0 ? "network failure: " + r.error : "HTTP status " + std::to_string(r.status);
    if (!transient) throw BackendError(last);
    if (attempt < endpoint.attempts) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
  throw BackendError(last + " after " + std::to_string(endpoint.attempts) + " attempts");
}

HttpBackend::HttpBackend(EndpointConfig endpoint, std::shared_ptr<HttpTransport> transport)
    : endpoint_(std::move(endpoint)),
      transport_(transport ? std::move(transport) : std::make_shared<HttplibTransport>()),
      in_flight_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(endpoint_.max_in_flight, 1, 64))) {}

GenerationResult HttpBackend::generate(const GenerationRequest& request) const {
  check_supports(request.intervention);
  in_flight_.acquire();
  struct Release {
    std::counting_semaphore<64>& s;
    ~Release() { s.release(); }
  } release{in_flight_};
  GenerationResult r;
  r.text = http_generate(endpoint_, *transport_, request.system, request.history, request.sampler);
  r.tokens = Tokenizer::split(r.text).size();
  return r;
}

}  // namespace drift
