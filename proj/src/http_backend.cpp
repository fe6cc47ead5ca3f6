#include "fader/http_backend.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cstdlib>

#include "fader/errors.hpp"

namespace fader {

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw ConfigError("http backend requires a base_url");
  if (config_.model.empty()) throw ConfigError("http backend requires a model name");
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
  }
}

std::string HttpBackend::complete(const std::string& system, const std::string& user,
                                  std::uint64_t seed) const {
  nlohmann::json body;
  body["model"] = config_.model;
  body["messages"] = nlohmann::json::array({
      {{"role", "system"}, {"content", system}},
      {{"role", "user"}, {"content", user}},
  });
  body["temperature"] = config_.temperature;
  // Many servers cap the seed at 2^31.
  body["seed"] = seed & 0x7fffffffULL;

  // httplib clients are not thread-safe; one per call keeps the backend shareable.
  httplib::Client client(config_.base_url);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  auto res = client.Post(config_.path, headers, body.dump(), "application/json");
  if (!res) {
    throw BackendError("request to " + config_.base_url + " failed: " + httplib::to_string(res.error()),
                       true);
  }
  if (res->status == 429 || res->status >= 500) {
    throw BackendError("HTTP " + std::to_string(res->status) + " from " + config_.base_url, true);
  }
  if (res->status != 200) {
    throw BackendError("HTTP " + std::to_string(res->status) + " from " + config_.base_url + ": " +
                           res->body.substr(0, 200),
                       false);
  }
  try {
    const auto reply = nlohmann::json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    throw BackendError(std::string("malformed chat-completions reply: ") + ex.what(), false);
  }
}

}  // namespace fader
