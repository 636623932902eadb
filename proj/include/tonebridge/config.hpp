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
#ifndef TONEBRIDGE_CONFIG_HPP
#define TONEBRIDGE_CONFIG_HPP

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "tonebridge/backends.hpp"
#include "tonebridge/error.hpp"
#include "tonebridge/templates.hpp"

namespace tonebridge {

inline constexpr std::size_t kDefaultUploadCap = 64u * 1024u * 1024u;

/// Everything a command or the service needs. Backend credentials are only
/// ever named (auth_env_var), never stored.
struct AppConfig {
  std::map<BackendKind, BackendConfig> backends;
  std::filesystem::path workspace_dir = "workspace";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_concurrent_jobs = 2;
  std::size_t max_upload_bytes = kDefaultUploadCap;
  std::string cors_origin = "*";
  std::optional<std::filesystem::path> template_dir;
  std::string frame_decoder_command;
  RetryPolicy retry;
  LlmParams llm;

  std::filesystem::path resolved_template_dir() const { return template_dir ? *template_dir : default_template_dir(); }

  /// Every kind configured as the in-process mock.
  static AppConfig all_mocks() {
    AppConfig c;
    for (auto k : {BackendKind::captioner, BackendKind::llm, BackendKind::music, BackendKind::embedder,
                   BackendKind::classifier})
      c.backends[k] = BackendConfig{k};
    return c;
  }
};

namespace detail {

inline void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) fail(ErrorCode::config_error, where + ": unknown key '" + key + "'");
}

}  // namespace detail

inline AppConfig parse_config(const json& j, const std::filesystem::path& base_dir = {}) {
  if (!j.is_object()) fail(ErrorCode::config_error, "config must be a JSON object");
  detail::reject_unknown_keys(j,
                              {"backends", "workspace_dir", "host", "port", "max_concurrent_jobs", "max_upload_bytes",
                               "cors_origin", "template_dir", "frame_decoder_command", "retry_backoff_s", "llm"},
                              "config");
  AppConfig c;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  try {
    if (j.contains("backends")) {
      for (const auto& [name, b] : j.at("backends").items()) {
        auto kind = parse_backend_kind(name);
        if (!kind) fail(ErrorCode::config_error, "unknown backend kind '" + name + "'");
        detail::reject_unknown_keys(b, {"base_url", "auth_env_var", "timeout_s", "model_name", "protocol"},
                                    "backends." + name);
        BackendConfig bc{*kind};
        bc.base_url = b.value("base_url", bc.base_url);
        bc.auth_env_var = b.value("auth_env_var", "");
        bc.timeout_s = b.value("timeout_s", bc.timeout_s);
        bc.model_name = b.value("model_name", "");
        bc.protocol = b.value("protocol", bc.protocol);
        validate(bc);
        c.backends[*kind] = bc;
      }
    }
    if (j.contains("workspace_dir")) c.workspace_dir = resolve(j.at("workspace_dir").get<std::string>());
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.max_concurrent_jobs = j.value("max_concurrent_jobs", c.max_concurrent_jobs);
    c.max_upload_bytes = j.value("max_upload_bytes", c.max_upload_bytes);
    c.cors_origin = j.value("cors_origin", c.cors_origin);
    if (j.contains("template_dir")) c.template_dir = resolve(j.at("template_dir").get<std::string>());
    c.frame_decoder_command = j.value("frame_decoder_command", "");
    if (j.contains("retry_backoff_s")) c.retry.backoff_s = j.at("retry_backoff_s").get<std::vector<double>>();
    if (j.contains("llm")) {
      detail::reject_unknown_keys(j.at("llm"), {"temperature", "max_tokens"}, "llm");
      c.llm.temperature = j.at("llm").value("temperature", c.llm.temperature);
      c.llm.max_tokens = j.at("llm").value("max_tokens", c.llm.max_tokens);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::config_error, e.what());
  }
  if (c.max_concurrent_jobs == 0) fail(ErrorCode::config_error, "max_concurrent_jobs must be positive");
  if (c.port < 0 || c.port > 65535) fail(ErrorCode::config_error, "port out of range");
  for (double d : c.retry.backoff_s)
    if (!(d >= 0.0)) fail(ErrorCode::config_error, "retry_backoff_s entries must be non-negative");
  return c;
}

inline AppConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::config_error, path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

inline void require_backends(const AppConfig& c, std::initializer_list<BackendKind> kinds, const std::string& command) {
  for (auto k : kinds)
    if (!c.backends.count(k))
      fail(ErrorCode::config_error, command + " requires a " + std::string(to_string(k)) + " backend");
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_CONFIG_HPP
