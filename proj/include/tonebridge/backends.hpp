/**
 * Copyright (C) The tonebridge authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef TONEBRIDGE_BACKENDS_HPP
#define TONEBRIDGE_BACKENDS_HPP

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include "tonebridge/audio.hpp"
#include "tonebridge/digest.hpp"
#include "tonebridge/error.hpp"
#include "tonebridge/eval/types.hpp"

namespace tonebridge {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Wire-level value types

enum class Role { system, user, assistant };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

struct ChatMessage {
  Role role = Role::user;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

inline json to_json(const std::vector<ChatMessage>& messages) {
  json arr = json::array();
  for (const auto& m : messages)
    arr.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
  return arr;
}

/// Sorted keys, no whitespace, UTF-8 passed through.
inline std::string canonical_dump(const json& j) {
  return j.dump(-1, ' ', false, json::error_handler_t::strict);
}

struct LlmParams {
  double temperature = 0.7;
  int max_tokens = 256;

  bool operator==(const LlmParams&) const = default;
};

enum class EmbedModality { image, video, audio };

inline std::string_view to_string(EmbedModality m) {
  switch (m) {
    case EmbedModality::image: return "image";
    case EmbedModality::video: return "video";
    case EmbedModality::audio: return "audio";
  }
  return "image";
}

/// Music backend reply before audio decoding.
struct MusicPayload {
  Bytes wav;
  int sample_rate = 0;
  std::optional<double> duration_s;
};

// ---------------------------------------------------------------------------
// Configuration and errors

enum class BackendKind { captioner, llm, music, embedder, classifier };

inline std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::captioner: return "captioner";
    case BackendKind::llm: return "llm";
    case BackendKind::music: return "music";
    case BackendKind::embedder: return "embedder";
    case BackendKind::classifier: return "classifier";
  }
  return "captioner";
}

inline std::optional<BackendKind> parse_backend_kind(std::string_view s) {
  for (auto k : {BackendKind::captioner, BackendKind::llm, BackendKind::music,
                 BackendKind::embedder, BackendKind::classifier})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

/// `base_url` of "mock://" selects the in-process mock. `protocol` is
/// "native" (the /v1 routes) or, for llm only, "openai".
struct BackendConfig {
  BackendConfig() = default;
  explicit BackendConfig(BackendKind k) : kind(k) {}

  BackendKind kind = BackendKind::captioner;
  std::string base_url = "mock://";
  std::string auth_env_var;
  double timeout_s = 60.0;
  std::string model_name;
  std::string protocol = "native";

  bool is_mock() const { return base_url.rfind("mock://", 0) == 0; }
};

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path_prefix;
};

inline std::optional<ParsedUrl> parse_base_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[A-Za-z0-9.\-]+|https?://\[[0-9A-Fa-f:]+\])(:[0-9]{1,5})?(/[^\s?#]*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) return std::nullopt;
  ParsedUrl out;
  out.scheme_host_port = m[1].str() + m[2].str();
  out.path_prefix = m[3].str();
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  return out;
}

inline void validate(const BackendConfig& c) {
  if (!(c.timeout_s > 0.0))
    fail(ErrorCode::config_error, std::string(to_string(c.kind)) + ": timeout must be positive");
  if (!c.is_mock() && !parse_base_url(c.base_url))
    fail(ErrorCode::config_error,
         std::string(to_string(c.kind)) + ": invalid base_url '" + c.base_url + "'");
  if (c.protocol != "native" && !(c.protocol == "openai" && c.kind == BackendKind::llm))
    fail(ErrorCode::config_error,
         std::string(to_string(c.kind)) + ": unsupported protocol '" + c.protocol + "'");
}

enum class BackendErrorKind { transport, http_status, malformed_response, timeout };

inline std::string_view to_string(BackendErrorKind k) {
  switch (k) {
    case BackendErrorKind::transport: return "transport";
    case BackendErrorKind::http_status: return "http_status";
    case BackendErrorKind::malformed_response: return "malformed_response";
    case BackendErrorKind::timeout: return "timeout";
  }
  return "transport";
}

class BackendError : public Error {
 public:
  BackendError(BackendErrorKind kind, const std::string& detail, bool retryable)
      : Error(ErrorCode::backend_unavailable, std::string(to_string(kind)) + ": " + detail),
        kind_(kind),
        retryable_(retryable) {}

  BackendErrorKind kind() const noexcept { return kind_; }
  bool retryable() const noexcept { return retryable_; }

  BackendError with_stage(std::string stage) const {
    BackendError copy = *this;
    copy.set_stage(std::move(stage));
    return copy;
  }

  /// Same error with `prefix` put in front of the message.
  BackendError with_context(const std::string& prefix) const {
    auto d = detail().substr(to_string(kind_).size() + 2);
    BackendError copy(kind_, prefix + d, retryable_);
    copy.set_stage(stage());
    return copy;
  }

  static BackendError malformed(const std::string& detail) {
    return {BackendErrorKind::malformed_response, detail, false};
  }
  static BackendError status(int code, const std::string& body) {
    bool retry = code >= 500 || code == 429 || code == 408;
    return {BackendErrorKind::http_status,
            "HTTP " + std::to_string(code) + (body.empty() ? "" : ": " + body.substr(0, 200)), retry};
  }

 private:
  BackendErrorKind kind_;
  bool retryable_;
};

/// Delays between attempts; attempts = backoff.size() + 1.
struct RetryPolicy {
  std::vector<double> backoff_s = {0.5, 2.0};
};

template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  for (std::size_t attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const BackendError& e) {
      if (!e.retryable() || attempt >= policy.backoff_s.size()) throw;
      std::this_thread::sleep_for(std::chrono::duration<double>(policy.backoff_s[attempt]));
    }
  }
}

// ---------------------------------------------------------------------------
// Backend interfaces. Implementations are immutable after construction and
// safe for concurrent use.

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual std::string caption(std::span<const std::uint8_t> image, std::string_view format) const = 0;
  virtual std::string id() const = 0;
};

class Llm {
 public:
  virtual ~Llm() = default;
  virtual std::string chat(const std::vector<ChatMessage>& messages, const LlmParams& params) const = 0;
  virtual std::string id() const = 0;
};

class MusicBackend {
 public:
  virtual ~MusicBackend() = default;
  virtual MusicPayload generate(std::string_view prompt, double duration_s) const = 0;
  virtual std::string id() const = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual EmbeddingVector embed(EmbedModality modality, std::span<const std::uint8_t> payload) const = 0;
  virtual std::string id() const = 0;
};

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual LabelDistribution classify(std::span<const std::uint8_t> audio) const = 0;
  virtual std::string id() const = 0;
};

inline void check_chat_request(const std::vector<ChatMessage>& messages) {
  require(!messages.empty(), "chat requires at least one message");
  require(messages.front().role == Role::system, "first chat message must have role system");
  for (const auto& m : messages) {
    try {
      (void)json(m.content).dump(-1, ' ', false, json::error_handler_t::strict);
    } catch (const json::exception&) {
      fail(ErrorCode::invalid_argument, "chat message content is not valid UTF-8");
    }
  }
}

// ---------------------------------------------------------------------------
// Deterministic mocks: pure functions of the request bytes.

namespace mock {

inline constexpr int kMusicSampleRate = 32000;
inline constexpr std::size_t kEmbeddingDim = 16;

inline const std::vector<std::string>& classifier_labels() {
  static const std::vector<std::string> labels = {"blues", "classical", "country", "disco", "hiphop",
                                                  "jazz",  "metal",     "pop",     "reggae", "rock"};
  return labels;
}

inline std::string caption(std::span<const std::uint8_t> image) {
  return "mock caption " + hex8(sha256(image));
}

inline std::string chat(const std::vector<ChatMessage>& messages) {
  check_chat_request(messages);
  return "mock: " + hex8(sha256(canonical_dump(to_json(messages))));
}

inline double music_frequency(std::string_view prompt) {
  return 220.0 + static_cast<double>(digest_u64(sha256(prompt)) % 440);
}

inline AudioClip music_clip(std::string_view prompt, double duration_s) {
  return sine_clip(music_frequency(prompt), duration_s, kMusicSampleRate);
}

/// Uniform draws in [-1, 1) from an mt19937_64 seeded by the payload digest.
inline std::vector<double> seeded_uniform(std::span<const std::uint8_t> payload, std::size_t n) {
  std::mt19937_64 gen(digest_u64(sha256(payload)));
  std::vector<double> out(n);
  for (auto& x : out) x = static_cast<double>(gen() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
  return out;
}

inline EmbeddingVector embed(std::span<const std::uint8_t> payload) {
  auto v = seeded_uniform(payload, kEmbeddingDim);
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) v[0] = norm = 1.0;
  for (double& x : v) x /= norm;
  return EmbeddingVector(std::move(v));
}

inline LabelDistribution classify(std::span<const std::uint8_t> audio) {
  auto logits = seeded_uniform(audio, classifier_labels().size());
  double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& l : logits) sum += (l = std::exp(3.0 * (l - peak)));
  for (double& l : logits) l /= sum;
  return {std::move(logits), classifier_labels()};
}

class MockCaptioner final : public Captioner {
 public:
  std::string caption(std::span<const std::uint8_t> image, std::string_view) const override {
    require(!image.empty(), "image payload must be non-empty");
    return mock::caption(image);
  }
  std::string id() const override { return "mock-captioner"; }
};

class MockLlm final : public Llm {
 public:
  std::string chat(const std::vector<ChatMessage>& messages, const LlmParams&) const override {
    check_chat_request(messages);
    return mock::chat(messages);
  }
  std::string id() const override { return "mock-llm"; }
};

class MockMusic final : public MusicBackend {
 public:
  MusicPayload generate(std::string_view prompt, double duration_s) const override {
    require(duration_s > 0.0, "duration must be positive");
    return {encode_wav(music_clip(prompt, duration_s)), kMusicSampleRate, duration_s};
  }
  std::string id() const override { return "mock-music"; }
};

class MockEmbedder final : public Embedder {
 public:
  EmbeddingVector embed(EmbedModality, std::span<const std::uint8_t> payload) const override {
    require(!payload.empty(), "embedding payload must be non-empty");
    return mock::embed(payload);
  }
  std::string id() const override { return "mock-embedder"; }
};

class MockClassifier final : public Classifier {
 public:
  LabelDistribution classify(std::span<const std::uint8_t> audio) const override {
    decode_wav(audio);
    return mock::classify(audio);
  }
  std::string id() const override { return "mock-classifier"; }
};

}  // namespace mock

// ---------------------------------------------------------------------------
// Response schema validation. Nothing partially parsed leaves these.

namespace wire {

inline const json& field(const json& body, const char* name, json::value_t type) {
  if (!body.is_object()) throw BackendError::malformed("response body is not a JSON object");
  auto it = body.find(name);
  if (it == body.end()) throw BackendError::malformed(std::string("response missing '") + name + "'");
  bool ok = it->type() == type ||
            (type == json::value_t::number_float && it->is_number()) ||
            (type == json::value_t::number_integer && it->is_number_integer());
  if (!ok) throw BackendError::malformed(std::string("response field '") + name + "' has wrong type");
  return *it;
}

inline Bytes base64_field(const json& body, const char* name) {
  auto decoded = base64_decode(field(body, name, json::value_t::string).get_ref<const std::string&>());
  if (!decoded) throw BackendError::malformed(std::string("response field '") + name + "' is not base64");
  return std::move(*decoded);
}

inline std::string parse_caption(const json& body) {
  return field(body, "caption", json::value_t::string).get<std::string>();
}

inline std::string parse_chat(const json& body) {
  return field(body, "content", json::value_t::string).get<std::string>();
}

inline std::string parse_openai_chat(const json& body) {
  const auto& choices = field(body, "choices", json::value_t::array);
  if (choices.empty()) throw BackendError::malformed("response has no choices");
  const auto& message = field(choices.front(), "message", json::value_t::object);
  return field(message, "content", json::value_t::string).get<std::string>();
}

inline MusicPayload parse_music(const json& body) {
  MusicPayload out;
  out.wav = base64_field(body, "audio");
  if (out.wav.empty()) throw BackendError::malformed("response audio is empty");
  out.sample_rate = field(body, "sample_rate", json::value_t::number_integer).get<int>();
  if (body.contains("duration_s"))
    out.duration_s = field(body, "duration_s", json::value_t::number_float).get<double>();
  return out;
}

inline EmbeddingVector parse_embedding(const json& body) {
  const auto& vec = field(body, "vector", json::value_t::array);
  auto dim = field(body, "dim", json::value_t::number_integer).get<long long>();
  if (dim <= 0 || static_cast<std::size_t>(dim) != vec.size())
    throw BackendError::malformed("embedding dim " + std::to_string(dim) + " does not match vector length " +
                                  std::to_string(vec.size()));
  std::vector<double> values;
  values.reserve(vec.size());
  for (const auto& x : vec) {
    if (!x.is_number()) throw BackendError::malformed("embedding vector has a non-numeric entry");
    values.push_back(x.get<double>());
    if (!std::isfinite(values.back())) throw BackendError::malformed("embedding vector has a non-finite entry");
  }
  return EmbeddingVector(std::move(values));
}

inline LabelDistribution parse_labels(const json& body) {
  LabelDistribution out;
  for (const auto& p : field(body, "distribution", json::value_t::array)) {
    if (!p.is_number()) throw BackendError::malformed("distribution has a non-numeric entry");
    out.probs.push_back(p.get<double>());
  }
  for (const auto& l : field(body, "labels", json::value_t::array)) {
    if (!l.is_string()) throw BackendError::malformed("labels has a non-string entry");
    out.labels.push_back(l.get<std::string>());
  }
  if (auto problem = distribution_problem(out); !problem.empty()) throw BackendError::malformed(problem);
  return out;
}

}  // namespace wire

// ---------------------------------------------------------------------------
// HTTP clients for the uniform /v1 protocol.

/// SO_REUSEADDR only. httplib also sets SO_REUSEPORT by default, which lets a
/// second server silently share an occupied port.
inline void exclusive_socket_options(socket_t sock) {
  int yes = 1;
  ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
}

class HttpTransport {
 public:
  HttpTransport(BackendConfig config, RetryPolicy retry) : config_(std::move(config)), retry_(std::move(retry)) {
    validate(config_);
    url_ = *parse_base_url(config_.base_url);
    if (!config_.auth_env_var.empty()) {
      const char* secret = std::getenv(config_.auth_env_var.c_str());
      if (secret == nullptr)
        fail(ErrorCode::config_error, std::string(to_string(config_.kind)) + ": environment variable " +
                                          config_.auth_env_var + " is not set");
      token_ = secret;
    }
  }

  json post(const std::string& route, const json& body) const {
    return with_retries(retry_, [&] { return post_once(route, body); });
  }

  const BackendConfig& config() const { return config_; }
  std::string id() const {
    std::string s = std::string(to_string(config_.kind)) + "@" + config_.base_url;
    if (!config_.model_name.empty()) s += "#" + config_.model_name;
    return s;
  }

 private:
  json post_once(const std::string& route, const json& body) const {
    httplib::Client client(url_.scheme_host_port);
    auto whole = std::chrono::duration<double>(config_.timeout_s);
    auto secs = std::chrono::duration_cast<std::chrono::microseconds>(whole);
    client.set_connection_timeout(secs);
    client.set_read_timeout(secs);
    client.set_write_timeout(secs);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

    auto start = std::chrono::steady_clock::now();
    auto res = client.Post(url_.path_prefix + route, headers, body.dump(), "application/json");
    if (!res) {
      double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                       (res.error() == httplib::Error::Read && elapsed >= 0.9 * config_.timeout_s);
      if (timed_out)
        throw BackendError(BackendErrorKind::timeout,
                           route + " timed out after " + std::to_string(config_.timeout_s) + " s", true);
      throw BackendError(BackendErrorKind::transport, route + ": " + httplib::to_string(res.error()), true);
    }
    if (res->status < 200 || res->status >= 300) throw BackendError::status(res->status, res->body);
    try {
      return json::parse(res->body);
    } catch (const json::parse_error&) {
      throw BackendError::malformed(route + ": response is not JSON");
    }
  }

  BackendConfig config_;
  RetryPolicy retry_;
  ParsedUrl url_;
  std::string token_;
};

class HttpCaptioner final : public Captioner {
 public:
  HttpCaptioner(BackendConfig c, RetryPolicy r) : http_(std::move(c), std::move(r)) {}
  std::string caption(std::span<const std::uint8_t> image, std::string_view format) const override {
    require(!image.empty(), "image payload must be non-empty");
    return wire::parse_caption(
        http_.post("/v1/caption", {{"image", base64_encode(image)}, {"format", std::string(format)}}));
  }
  std::string id() const override { return http_.id(); }

 private:
  HttpTransport http_;
};

class HttpLlm final : public Llm {
 public:
  HttpLlm(BackendConfig c, RetryPolicy r) : http_(std::move(c), std::move(r)) {}
  std::string chat(const std::vector<ChatMessage>& messages, const LlmParams& params) const override {
    check_chat_request(messages);
    json body = {{"messages", to_json(messages)},
                 {"temperature", params.temperature},
                 {"max_tokens", params.max_tokens}};
    if (!http_.config().model_name.empty()) body["model"] = http_.config().model_name;
    if (http_.config().protocol == "openai")
      return wire::parse_openai_chat(http_.post("/v1/chat/completions", body));
    return wire::parse_chat(http_.post("/v1/chat", body));
  }
  std::string id() const override { return http_.id(); }

 private:
  HttpTransport http_;
};

class HttpMusic final : public MusicBackend {
 public:
  HttpMusic(BackendConfig c, RetryPolicy r) : http_(std::move(c), std::move(r)) {}
  MusicPayload generate(std::string_view prompt, double duration_s) const override {
    require(duration_s > 0.0, "duration must be positive");
    return wire::parse_music(http_.post("/v1/music", {{"prompt", std::string(prompt)}, {"duration_s", duration_s}}));
  }
  std::string id() const override { return http_.id(); }

 private:
  HttpTransport http_;
};

class HttpEmbedder final : public Embedder {
 public:
  HttpEmbedder(BackendConfig c, RetryPolicy r) : http_(std::move(c), std::move(r)) {}
  EmbeddingVector embed(EmbedModality modality, std::span<const std::uint8_t> payload) const override {
    require(!payload.empty(), "embedding payload must be non-empty");
    return wire::parse_embedding(http_.post(
        "/v1/embed", {{"modality", std::string(to_string(modality))}, {"payload", base64_encode(payload)}}));
  }
  std::string id() const override { return http_.id(); }

 private:
  HttpTransport http_;
};

class HttpClassifier final : public Classifier {
 public:
  HttpClassifier(BackendConfig c, RetryPolicy r) : http_(std::move(c), std::move(r)) {}
  LabelDistribution classify(std::span<const std::uint8_t> audio) const override {
    decode_wav(audio);
    return wire::parse_labels(http_.post("/v1/labels", {{"audio", base64_encode(audio)}}));
  }
  std::string id() const override { return http_.id(); }

 private:
  HttpTransport http_;
};

// ---------------------------------------------------------------------------

/// Any member may be null when the command does not need that backend.
struct BackendSet {
  std::shared_ptr<const Captioner> captioner;
  std::shared_ptr<const Llm> llm;
  std::shared_ptr<const MusicBackend> music;
  std::shared_ptr<const Embedder> embedder;
  std::shared_ptr<const Classifier> classifier;

  static BackendSet mocks() {
    return {std::make_shared<mock::MockCaptioner>(), std::make_shared<mock::MockLlm>(),
            std::make_shared<mock::MockMusic>(), std::make_shared<mock::MockEmbedder>(),
            std::make_shared<mock::MockClassifier>()};
  }
};

inline BackendSet make_backends(const std::map<BackendKind, BackendConfig>& configs,
                                const RetryPolicy& retry = {}) {
  BackendSet set;
  for (const auto& [kind, cfg] : configs) {
    validate(cfg);
    bool m = cfg.is_mock();
    switch (kind) {
      case BackendKind::captioner:
        set.captioner = m ? std::shared_ptr<const Captioner>(std::make_shared<mock::MockCaptioner>())
                          : std::make_shared<HttpCaptioner>(cfg, retry);
        break;
      case BackendKind::llm:
        set.llm = m ? std::shared_ptr<const Llm>(std::make_shared<mock::MockLlm>())
                    : std::make_shared<HttpLlm>(cfg, retry);
        break;
      case BackendKind::music:
        set.music = m ? std::shared_ptr<const MusicBackend>(std::make_shared<mock::MockMusic>())
                      : std::make_shared<HttpMusic>(cfg, retry);
        break;
      case BackendKind::embedder:
        set.embedder = m ? std::shared_ptr<const Embedder>(std::make_shared<mock::MockEmbedder>())
                         : std::make_shared<HttpEmbedder>(cfg, retry);
        break;
      case BackendKind::classifier:
        set.classifier = m ? std::shared_ptr<const Classifier>(std::make_shared<mock::MockClassifier>())
                           : std::make_shared<HttpClassifier>(cfg, retry);
        break;
    }
  }
  return set;
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_BACKENDS_HPP
