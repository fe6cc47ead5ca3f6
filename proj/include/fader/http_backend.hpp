#pragma once

#include <chrono>
#include <string>

#include "fader/llmgen.hpp"

namespace fader {

struct HttpBackendConfig {
  // e.g. "http://localhost:8000" or "https://api.example.com"; requests go to
  // base_url + path.
  std::string base_url;
  std::string path = "/v1/chat/completions";
  std::string model;
  // Name of the environment variable holding the bearer token; empty for none.
  std::string api_key_env = "FADER_API_KEY";
  double temperature = 0.0;
  std::chrono::seconds timeout{120};
};

// Chat-completions style JSON over HTTP:
//   POST {"model","messages":[{"role":"system",..},{"role":"user",..}],
//         "temperature","seed"}
//   -> {"choices":[{"message":{"content": ...}}]}
// 429 and 5xx responses and connection failures are retryable.
class HttpBackend final : public LlmBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);

  std::string name() const override { return "http:" + config_.model; }
  bool deterministic() const override { return false; }
  std::string complete(const std::string& system, const std::string& user,
                       std::uint64_t seed) const override;

  const HttpBackendConfig& config() const noexcept { return config_; }

 private:
  HttpBackendConfig config_;
  std::string api_key_;
};

}  // namespace fader
