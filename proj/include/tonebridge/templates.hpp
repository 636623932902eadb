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
#ifndef TONEBRIDGE_TEMPLATES_HPP
#define TONEBRIDGE_TEMPLATES_HPP

#include <json.hpp>

#include <array>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tonebridge/backends.hpp"
#include "tonebridge/error.hpp"

#ifndef TONEBRIDGE_DEFAULT_TEMPLATE_DIR
#define TONEBRIDGE_DEFAULT_TEMPLATE_DIR "templates"
#endif

namespace tonebridge {

enum class TemplateId { video_aggregate, bridge_image, bridge_video };

inline constexpr std::array<TemplateId, 3> kAllTemplates = {
    TemplateId::video_aggregate, TemplateId::bridge_image, TemplateId::bridge_video};

inline std::string_view to_string(TemplateId id) {
  switch (id) {
    case TemplateId::video_aggregate: return "video_aggregate";
    case TemplateId::bridge_image: return "bridge_image";
    case TemplateId::bridge_video: return "bridge_video";
  }
  return "video_aggregate";
}

inline std::size_t expected_few_shot_count(TemplateId id) {
  return id == TemplateId::video_aggregate ? 0 : 2;
}

struct FewShotPair {
  std::string user;
  std::string assistant;

  bool operator==(const FewShotPair&) const = default;
};

struct PromptTemplate {
  TemplateId id = TemplateId::video_aggregate;
  std::string system_text;
  std::vector<FewShotPair> few_shot;

  bool operator==(const PromptTemplate&) const = default;
};

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_error, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Directory lookup order: explicit argument, $TONEBRIDGE_TEMPLATE_DIR, the
/// source tree's templates/.
inline std::filesystem::path default_template_dir() {
  if (const char* env = std::getenv("TONEBRIDGE_TEMPLATE_DIR"); env && *env) return env;
  return TONEBRIDGE_DEFAULT_TEMPLATE_DIR;
}

/// The three chat templates, one `<id>.json` file each:
///   {"id": ..., "system": ..., "few_shot": [{"user": ..., "assistant": ...}]}
class TemplateStore {
 public:
  static TemplateStore load(const std::filesystem::path& dir = default_template_dir()) {
    TemplateStore store;
    for (auto id : kAllTemplates) {
      auto path = dir / (std::string(to_string(id)) + ".json");
      PromptTemplate t;
      t.id = id;
      try {
        auto j = json::parse(read_text_file(path));
        if (j.at("id").get<std::string>() != to_string(id))
          fail(ErrorCode::config_error, path.string() + ": id does not match file name");
        t.system_text = j.at("system").get<std::string>();
        for (const auto& pair : j.at("few_shot"))
          t.few_shot.push_back({pair.at("user").get<std::string>(), pair.at("assistant").get<std::string>()});
      } catch (const json::exception& e) {
        fail(ErrorCode::config_error, path.string() + ": " + e.what());
      }
      if (t.system_text.empty()) fail(ErrorCode::config_error, path.string() + ": empty system text");
      if (t.few_shot.size() != expected_few_shot_count(id))
        fail(ErrorCode::config_error, path.string() + ": expected " +
                                          std::to_string(expected_few_shot_count(id)) + " few-shot pairs");
      for (const auto& p : t.few_shot)
        if (p.user.empty() || p.assistant.empty())
          fail(ErrorCode::config_error, path.string() + ": empty few-shot message");
      store.templates_[static_cast<std::size_t>(id)] = std::move(t);
    }
    return store;
  }

  const PromptTemplate& get(TemplateId id) const { return templates_[static_cast<std::size_t>(id)]; }

 private:
  std::array<PromptTemplate, 3> templates_;
};

}  // namespace tonebridge

#endif  // TONEBRIDGE_TEMPLATES_HPP
