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
#ifndef TONEBRIDGE_MOCK_SERVER_HPP
#define TONEBRIDGE_MOCK_SERVER_HPP

#include <httplib.h>
#include <json.hpp>

#include <functional>
#include <string>

#include "tonebridge/backends.hpp"

namespace tonebridge {

/// Serves the five /v1 routes backed by the deterministic mocks.
class MockBackendServer {
 public:
  MockBackendServer() {
    server_.set_socket_options(exclusive_socket_options);
    install_routes();
  }

  httplib::Server& server() { return server_; }

  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  int bind_any(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  bool is_running() const { return server_.is_running(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  using Handler = std::function<json(const json&)>;

  void route(const std::string& path, Handler handler) {
    server_.Post(path, [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        json body = json::parse(req.body);
        if (!body.is_object()) throw Error(ErrorCode::invalid_argument, "request body must be an object");
        res.set_content(handler(body).dump(), "application/json");
      } catch (const json::exception& e) {
        res.status = 400;
        res.set_content(json{{"error", e.what()}}.dump(), "application/json");
      } catch (const Error& e) {
        res.status = 400;
        res.set_content(json{{"error", e.what()}}.dump(), "application/json");
      }
    });
  }

  static Bytes b64_request(const json& body, const char* name) {
    auto decoded = base64_decode(body.at(name).get<std::string>());
    if (!decoded) throw Error(ErrorCode::invalid_argument, std::string(name) + " is not base64");
    return std::move(*decoded);
  }

  void install_routes() {
    route("/v1/caption", [](const json& body) {
      Bytes image = b64_request(body, "image");
      body.at("format").get<std::string>();
      return json{{"caption", mock::MockCaptioner{}.caption(image, "")}};
    });
    route("/v1/chat", [](const json& body) {
      std::vector<ChatMessage> messages;
      for (const auto& m : body.at("messages")) {
        auto role = m.at("role").get<std::string>();
        Role r = role == "system" ? Role::system : role == "assistant" ? Role::assistant : Role::user;
        if (role != "system" && role != "user" && role != "assistant")
          throw Error(ErrorCode::invalid_argument, "unknown role " + role);
        messages.push_back({r, m.at("content").get<std::string>()});
      }
      return json{{"content", mock::MockLlm{}.chat(messages, {})}};
    });
    route("/v1/music", [](const json& body) {
      auto prompt = body.at("prompt").get<std::string>();
      double duration = body.at("duration_s").get<double>();
      require(!prompt.empty(), "prompt must be non-blank");
      auto payload = mock::MockMusic{}.generate(prompt, duration);
      return json{{"audio", base64_encode(payload.wav)},
                  {"sample_rate", payload.sample_rate},
                  {"duration_s", duration}};
    });
    route("/v1/embed", [](const json& body) {
      auto modality = body.at("modality").get<std::string>();
      if (modality != "image" && modality != "video" && modality != "audio")
        throw Error(ErrorCode::invalid_argument, "unknown modality " + modality);
      auto v = mock::MockEmbedder{}.embed(EmbedModality::image, b64_request(body, "payload"));
      return json{{"vector", v.values}, {"dim", v.dim()}};
    });
    route("/v1/labels", [](const json& body) {
      auto d = mock::MockClassifier{}.classify(b64_request(body, "audio"));
      return json{{"distribution", d.probs}, {"labels", d.labels}};
    });
  }

  httplib::Server server_;
};

}  // namespace tonebridge

#endif  // TONEBRIDGE_MOCK_SERVER_HPP
