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
#ifndef TONEBRIDGE_PROMPT_BRIDGE_HPP
#define TONEBRIDGE_PROMPT_BRIDGE_HPP

#include <optional>
#include <string>
#include <vector>

#include "tonebridge/backends.hpp"
#include "tonebridge/captioning.hpp"
#include "tonebridge/templates.hpp"

namespace tonebridge {

enum class Modality { image, video };

inline std::string_view to_string(Modality m) { return m == Modality::image ? "image" : "video"; }

inline constexpr std::size_t kMaxPromptChars = 200;

struct MusicPrompt {
  std::string text;
  bool length_violation = false;
  std::string source_caption_digest;
  bool user_prompt_used = false;
};

struct LengthCheck {
  std::string text;
  bool violated = false;
};

namespace detail {

/// Byte offsets of each UTF-8 code point start, plus the end offset.
inline std::vector<std::size_t> codepoint_offsets(std::string_view s) {
  std::vector<std::size_t> at;
  for (std::size_t i = 0; i < s.size(); ++i)
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) at.push_back(i);
  at.push_back(s.size());
  return at;
}

}  // namespace detail

/// Length is counted in code points. Over-long text is cut before the last
/// whitespace at or before `max_chars`, or hard-cut when there is none.
inline LengthCheck enforce_length(std::string_view text, std::size_t max_chars = kMaxPromptChars) {
  require(!is_blank(text), "enforce_length requires non-blank text");
  require(max_chars > 0, "max_chars must be positive");
  auto at = detail::codepoint_offsets(text);
  std::size_t chars = at.size() - 1;
  if (chars <= max_chars) return {std::string(text), false};

  for (std::size_t p = max_chars + 1; p-- > 0;) {
    unsigned char c = static_cast<unsigned char>(text[at[p]]);
    if (std::isspace(c)) {
      auto cut = text.substr(0, at[p]);
      auto end = cut.find_last_not_of(" \t\n\r\f\v");
      if (end != std::string_view::npos) return {std::string(cut.substr(0, end + 1)), true};
      break;
    }
  }
  return {std::string(text.substr(0, at[max_chars])), true};
}

inline TemplateId bridge_template_for(Modality m) {
  return m == Modality::image ? TemplateId::bridge_image : TemplateId::bridge_video;
}

/// [system] + few-shot pairs in table order + final user message. A user
/// prompt goes on its own line after the caption.
inline std::vector<ChatMessage> render_bridge_messages(const Caption& caption,
                                                       const std::optional<std::string>& user_prompt,
                                                       Modality modality, const TemplateStore& templates) {
  require(!is_blank(caption.text), "caption must be non-blank");
  const auto& t = templates.get(bridge_template_for(modality));
  std::vector<ChatMessage> messages{{Role::system, t.system_text}};
  for (const auto& pair : t.few_shot) {
    messages.push_back({Role::user, pair.user});
    messages.push_back({Role::assistant, pair.assistant});
  }
  std::string final_user = caption.text;
  if (user_prompt) final_user += "\nUser prompt: " + *user_prompt;
  messages.push_back({Role::user, std::move(final_user)});
  return messages;
}

inline MusicPrompt transform_caption(const Caption& caption, const std::optional<std::string>& user_prompt,
                                     const Llm& llm, Modality modality, const TemplateStore& templates,
                                     const LlmParams& params = {}) {
  auto reply = trim(llm.chat(render_bridge_messages(caption, user_prompt, modality, templates), params));
  if (reply.empty()) fail(ErrorCode::empty_caption, "bridging LLM returned a blank prompt");
  auto enforced = enforce_length(reply);
  return {std::move(enforced.text), enforced.violated, caption.digest(), user_prompt.has_value()};
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_PROMPT_BRIDGE_HPP
