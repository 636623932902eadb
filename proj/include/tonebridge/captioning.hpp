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
#ifndef TONEBRIDGE_CAPTIONING_HPP
#define TONEBRIDGE_CAPTIONING_HPP

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "tonebridge/backends.hpp"
#include "tonebridge/digest.hpp"
#include "tonebridge/error.hpp"
#include "tonebridge/media.hpp"
#include "tonebridge/templates.hpp"

namespace tonebridge {

namespace fs = std::filesystem;

struct Frame {
  std::size_t index = 0;
  Bytes image;
  std::optional<double> timestamp;
};

enum class CaptionSource { image, frame, video_aggregate };

inline std::string_view to_string(CaptionSource s) {
  switch (s) {
    case CaptionSource::image: return "image";
    case CaptionSource::frame: return "frame";
    case CaptionSource::video_aggregate: return "video_aggregate";
  }
  return "image";
}

struct Caption {
  std::string text;
  CaptionSource source = CaptionSource::image;
  std::optional<std::size_t> frame_index;
  std::vector<std::string> parent_captions;

  /// Hex SHA-256 of the text.
  std::string digest() const { return sha256_hex(text); }

  bool operator==(const Caption&) const = default;
};

inline bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

inline std::string trim(std::string_view s) {
  auto first = s.find_first_not_of(" \t\n\r\f\v");
  if (first == std::string_view::npos) return {};
  auto last = s.find_last_not_of(" \t\n\r\f\v");
  return std::string(s.substr(first, last - first + 1));
}

// ---------------------------------------------------------------------------
// Frame sources

/// Frames named frame_<%06d>.png; lexicographic order is frame order.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::size_t total_frames() const = 0;
  virtual Frame read(std::size_t index) const = 0;
  /// Stable content digest over every frame, in order.
  virtual std::string digest() const = 0;
};

class DirectoryFrameSource : public FrameSource {
 public:
  explicit DirectoryFrameSource(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    if (!fs::is_directory(dir_, ec)) fail(ErrorCode::decode_error, dir_.string() + " is not a frame directory");
    static const std::regex name(R"(frame_[0-9]{6}\.png)");
    for (const auto& entry : fs::directory_iterator(dir_, ec)) {
      auto fname = entry.path().filename().string();
      if (entry.is_regular_file() && std::regex_match(fname, name)) files_.push_back(entry.path());
    }
    if (ec) fail(ErrorCode::decode_error, "cannot enumerate " + dir_.string() + ": " + ec.message());
    std::sort(files_.begin(), files_.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    if (files_.empty()) fail(ErrorCode::decode_error, dir_.string() + " contains no frame_NNNNNN.png files");
  }

  std::size_t total_frames() const override { return files_.size(); }

  Frame read(std::size_t index) const override {
    require(index < files_.size(), "frame index out of range");
    Frame f;
    f.index = index;
    try {
      auto text = read_text_file(files_[index]);
      f.image.assign(text.begin(), text.end());
    } catch (const Error&) {
      fail(ErrorCode::decode_error, "cannot read " + files_[index].string());
    }
    if (f.image.empty()) fail(ErrorCode::decode_error, files_[index].string() + " is empty");
    return f;
  }

  std::string digest() const override {
    std::string joined;
    for (std::size_t i = 0; i < files_.size(); ++i) joined += sha256_hex(read(i).image);
    return sha256_hex(joined);
  }

  const std::vector<fs::path>& files() const { return files_; }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
};

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out.push_back(c);
  }
  return out + "'";
}

/// Substitutes {input}, {output_dir} and {frames} (shell-quoted) into the
/// command template.
inline std::string render_decoder_command(std::string tmpl, const fs::path& input, const fs::path& output_dir,
                                          std::size_t frames) {
  auto replace_all = [&](const std::string& key, const std::string& value) {
    for (auto at = tmpl.find(key); at != std::string::npos; at = tmpl.find(key, at + value.size()))
      tmpl.replace(at, key.size(), value);
  };
  replace_all("{input}", shell_quote(input.string()));
  replace_all("{output_dir}", shell_quote(output_dir.string()));
  replace_all("{frames}", std::to_string(frames));
  return tmpl;
}

/// Runs an external frame extractor into `work_dir`, then reads its output as
/// a directory source. Video containers are never parsed in-process.
class ExternalDecoderFrameSource : public FrameSource {
 public:
  ExternalDecoderFrameSource(const std::string& command_template, const fs::path& input, const fs::path& work_dir,
                             std::size_t frame_count) {
    if (command_template.empty()) fail(ErrorCode::decode_error, "no frame decoder command configured");
    if (!fs::exists(input)) fail(ErrorCode::decode_error, input.string() + " does not exist");
    fs::create_directories(work_dir);
    auto cmd = render_decoder_command(command_template, input, work_dir, frame_count);
    int rc = std::system(cmd.c_str());
    if (rc != 0) fail(ErrorCode::decode_error, "frame decoder exited with status " + std::to_string(rc));
    inner_ = std::make_unique<DirectoryFrameSource>(work_dir);
  }

  std::size_t total_frames() const override { return inner_->total_frames(); }
  Frame read(std::size_t index) const override { return inner_->read(index); }
  std::string digest() const override { return inner_->digest(); }

 private:
  std::unique_ptr<DirectoryFrameSource> inner_;
};

// ---------------------------------------------------------------------------
// Operations

/// Uniform indices floor(i*T/k) for i in [0, k), k = min(n, T).
inline std::vector<std::size_t> sample_indices(std::size_t total, std::size_t n) {
  require(total >= 1, "frame source has no frames");
  require(n >= 1, "frame count must be positive");
  std::size_t k = std::min(n, total);
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i * total / k;
  return idx;
}

inline std::vector<Frame> sample_frames(const FrameSource& source, std::size_t n) {
  std::vector<Frame> frames;
  for (auto i : sample_indices(source.total_frames(), n)) frames.push_back(source.read(i));
  return frames;
}

inline Caption caption_image(std::span<const std::uint8_t> image, const Captioner& captioner) {
  auto info = decode_image_info(image);
  auto text = trim(captioner.caption(image, to_string(info.format)));
  if (text.empty()) fail(ErrorCode::empty_caption, "captioner returned a blank caption");
  return {std::move(text), CaptionSource::image, std::nullopt, {}};
}

/// Fans out one call per frame; results come back in frame order.
inline std::vector<Caption> caption_frames(const std::vector<Frame>& frames, const Captioner& captioner,
                                           bool concurrent = true) {
  require(!frames.empty(), "caption_frames requires at least one frame");
  auto one = [&captioner](const Frame& f) {
    try {
      Caption c = caption_image(f.image, captioner);
      c.source = CaptionSource::frame;
      c.frame_index = f.index;
      return c;
    } catch (const BackendError& e) {
      throw e.with_context("frame " + std::to_string(f.index) + ": ");
    } catch (const Error& e) {
      throw Error(e.code(), "frame " + std::to_string(f.index) + ": " + e.detail());
    }
  };
  std::vector<Caption> out;
  out.reserve(frames.size());
  if (!concurrent || frames.size() == 1) {
    for (const auto& f : frames) out.push_back(one(f));
    return out;
  }
  std::vector<std::future<Caption>> pending;
  for (const auto& f : frames) pending.push_back(std::async(std::launch::async, one, std::cref(f)));
  // Drain every future before rethrowing so no task outlives `frames`.
  std::exception_ptr first_error;
  for (auto& p : pending) {
    try {
      out.push_back(p.get());
    } catch (...) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

inline std::vector<ChatMessage> render_aggregation_messages(const std::vector<Caption>& frame_captions,
                                                            const TemplateStore& templates) {
  std::string joined;
  for (std::size_t i = 0; i < frame_captions.size(); ++i) {
    if (i) joined += '\n';
    joined += frame_captions[i].text;
  }
  return {{Role::system, templates.get(TemplateId::video_aggregate).system_text}, {Role::user, joined}};
}

/// Exactly one LLM call, whatever the caption count.
inline Caption aggregate_captions(const std::vector<Caption>& frame_captions, const Llm& llm,
                                  const TemplateStore& templates, const LlmParams& params = {}) {
  require(!frame_captions.empty(), "aggregate_captions requires at least one caption");
  for (const auto& c : frame_captions) require(c.source == CaptionSource::frame, "aggregate_captions takes frame captions");
  auto text = trim(llm.chat(render_aggregation_messages(frame_captions, templates), params));
  if (text.empty()) fail(ErrorCode::empty_caption, "aggregation LLM returned a blank caption");
  Caption c{std::move(text), CaptionSource::video_aggregate, std::nullopt, {}};
  for (const auto& f : frame_captions) c.parent_captions.push_back(f.digest());
  return c;
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_CAPTIONING_HPP
