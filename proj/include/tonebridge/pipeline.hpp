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
#ifndef TONEBRIDGE_PIPELINE_HPP
#define TONEBRIDGE_PIPELINE_HPP

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tonebridge/audio.hpp"
#include "tonebridge/backends.hpp"
#include "tonebridge/captioning.hpp"
#include "tonebridge/music.hpp"
#include "tonebridge/prompt_bridge.hpp"
#include "tonebridge/templates.hpp"

namespace tonebridge {

inline constexpr std::size_t kDefaultFrameCount = 8;
inline constexpr double kDefaultDurationSeconds = 10.0;

struct MediaInput {
  Modality kind = Modality::image;
  Bytes image;
  std::shared_ptr<const FrameSource> frames;
  std::optional<std::string> user_prompt;
  double requested_duration = kDefaultDurationSeconds;

  static MediaInput from_image(Bytes bytes, std::optional<std::string> prompt = {},
                               double duration = kDefaultDurationSeconds) {
    return {Modality::image, std::move(bytes), nullptr, normalize(std::move(prompt)), duration};
  }
  static MediaInput from_frames(std::shared_ptr<const FrameSource> source, std::optional<std::string> prompt = {},
                                double duration = kDefaultDurationSeconds) {
    return {Modality::video, {}, std::move(source), normalize(std::move(prompt)), duration};
  }

  /// Blank user text counts as no user prompt.
  static std::optional<std::string> normalize(std::optional<std::string> prompt) {
    if (prompt && is_blank(*prompt)) return std::nullopt;
    return prompt;
  }
};

struct PipelineOptions {
  std::size_t frame_count = kDefaultFrameCount;
  bool bypass_bridge = false;
  LlmParams llm_params;
  bool concurrent_frames = true;
};

struct StageRecord {
  std::string stage;
  std::string input;
  std::string output;
  std::string backend_id;
  json flags = json::object();
  /// Not part of the canonical trace.
  double wall_time_ms = 0.0;
};

/// Immutable provenance of one job. Stage order: caption+, aggregate (video
/// only), bridge (unless bypassed), music.
struct PipelineTrace {
  std::string job_id;
  std::string input_digest;
  std::string input_kind;
  std::vector<StageRecord> stages;
  bool bridging_bypassed = false;
  bool prompt_overridden = false;
  std::optional<std::string> parent_job_id;

  std::size_t count(std::string_view stage) const {
    return static_cast<std::size_t>(
        std::count_if(stages.begin(), stages.end(), [&](const StageRecord& s) { return s.stage == stage; }));
  }

  std::vector<std::string> stage_names() const {
    std::vector<std::string> names;
    for (const auto& s : stages) names.push_back(s.stage);
    return names;
  }

  json to_json() const {
    json stage_list = json::array();
    for (const auto& s : stages)
      stage_list.push_back({{"stage", s.stage},
                            {"input", s.input},
                            {"output", s.output},
                            {"backend_id", s.backend_id},
                            {"flags", s.flags}});
    json j = {{"format", "tonebridge-trace/1"},
              {"job_id", job_id},
              {"input_digest", input_digest},
              {"input_kind", input_kind},
              {"stages", stage_list},
              {"bridging_bypassed", bridging_bypassed},
              {"prompt_overridden", prompt_overridden}};
    if (parent_job_id) j["parent_job_id"] = *parent_job_id;
    return j;
  }

  /// Sorted keys, two-space indent, trailing newline.
  std::string canonical() const { return to_json().dump(2, ' ', false, json::error_handler_t::strict) + "\n"; }

  static PipelineTrace from_json(const json& j) {
    PipelineTrace t;
    t.job_id = j.at("job_id").get<std::string>();
    t.input_digest = j.at("input_digest").get<std::string>();
    t.input_kind = j.at("input_kind").get<std::string>();
    t.bridging_bypassed = j.at("bridging_bypassed").get<bool>();
    t.prompt_overridden = j.at("prompt_overridden").get<bool>();
    if (j.contains("parent_job_id")) t.parent_job_id = j.at("parent_job_id").get<std::string>();
    for (const auto& s : j.at("stages"))
      t.stages.push_back({s.at("stage").get<std::string>(), s.at("input").get<std::string>(),
                          s.at("output").get<std::string>(), s.at("backend_id").get<std::string>(),
                          s.at("flags"), 0.0});
    return t;
  }
};

struct GenerationResult {
  AudioClip audio;
  Bytes wav;
  Caption caption;
  MusicPrompt music_prompt;
  PipelineTrace trace;
};

/// Pipeline phases, reported as they start.
enum class Phase { captioning, bridging, generating };

using ProgressFn = std::function<void(Phase)>;

inline std::string digest_ref(std::span<const std::uint8_t> bytes) { return "sha256:" + sha256_hex(bytes); }

inline void validate(const MediaInput& input) {
  require(input.requested_duration > 0.0 && std::isfinite(input.requested_duration),
          "requested duration must be positive");
  if (input.kind == Modality::video) {
    if (!input.frames) fail(ErrorCode::decode_error, "video input has no frame source");
    if (input.frames->total_frames() < 1) fail(ErrorCode::decode_error, "video has no frames");
  }
}

namespace detail {

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

/// Runs `fn`, re-raising library errors tagged with the stage name.
template <typename Fn>
auto in_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const BackendError& e) {
    if (!e.stage().empty()) throw;
    throw e.with_stage(stage);
  } catch (const Error& e) {
    if (!e.stage().empty()) throw;
    throw e.with_stage(stage);
  }
}

inline void require_backend(const void* ptr, const char* what) {
  if (!ptr) fail(ErrorCode::config_error, std::string("no ") + what + " backend configured");
}

inline StageRecord music_stage(const MusicPrompt& prompt, double duration, const MusicBackend& backend,
                               AudioClip& audio, Bytes& wav) {
  StageTimer timer;
  audio = generate_music(prompt, duration, backend);
  wav = encode_wav(audio);
  StageRecord rec{"music", prompt.text, digest_ref(wav), backend.id(),
                  {{"requested_duration_s", duration},
                   {"sample_rate", audio.sample_rate},
                   {"channels", audio.channels},
                   {"frames", audio.frame_count()}},
                  timer.elapsed_ms()};
  return rec;
}

}  // namespace detail

/// Caption, optionally bridge, then synthesize. `job_id` is assigned by the
/// caller so identical inputs can reproduce identical traces.
inline GenerationResult run_pipeline(const MediaInput& input, const PipelineOptions& options,
                                     const BackendSet& backends, const TemplateStore& templates,
                                     const std::string& job_id, const ProgressFn& progress = {}) {
  using detail::in_stage;
  require(options.frame_count >= 1, "frame_count must be positive");
  detail::require_backend(backends.captioner.get(), "captioner");
  detail::require_backend(backends.music.get(), "music");
  if (input.kind == Modality::video || !options.bypass_bridge) detail::require_backend(backends.llm.get(), "llm");

  in_stage("input", [&] { validate(input); });
  auto notify = [&](Phase p) {
    if (progress) progress(p);
  };

  GenerationResult result;
  auto& trace = result.trace;
  trace.job_id = job_id;
  trace.input_kind = std::string(to_string(input.kind));
  trace.bridging_bypassed = options.bypass_bridge;

  notify(Phase::captioning);
  if (input.kind == Modality::image) {
    trace.input_digest = sha256_hex(input.image);
    detail::StageTimer timer;
    result.caption = in_stage("caption", [&] { return caption_image(input.image, *backends.captioner); });
    trace.stages.push_back({"caption", digest_ref(input.image), result.caption.text, backends.captioner->id(),
                            json::object(), timer.elapsed_ms()});
  } else {
    trace.input_digest = input.frames->digest();
    auto frames = in_stage("caption", [&] { return sample_frames(*input.frames, options.frame_count); });
    detail::StageTimer timer;
    auto captions = in_stage("caption", [&] {
      return caption_frames(frames, *backends.captioner, options.concurrent_frames);
    });
    double per_frame_ms = timer.elapsed_ms();
    for (std::size_t i = 0; i < frames.size(); ++i)
      trace.stages.push_back({"caption", digest_ref(frames[i].image), captions[i].text, backends.captioner->id(),
                              {{"frame_index", frames[i].index}, {"total_frames", input.frames->total_frames()}},
                              per_frame_ms});
    detail::StageTimer agg_timer;
    result.caption = in_stage("aggregate", [&] {
      return aggregate_captions(captions, *backends.llm, templates, options.llm_params);
    });
    std::string joined = render_aggregation_messages(captions, templates).back().content;
    trace.stages.push_back({"aggregate", joined, result.caption.text, backends.llm->id(),
                            {{"caption_count", captions.size()},
                             {"temperature", options.llm_params.temperature},
                             {"max_tokens", options.llm_params.max_tokens}},
                            agg_timer.elapsed_ms()});
  }

  if (options.bypass_bridge) {
    result.music_prompt = {result.caption.text, false, result.caption.digest(), false};
  } else {
    notify(Phase::bridging);
    detail::StageTimer timer;
    result.music_prompt = in_stage("bridge", [&] {
      return transform_caption(result.caption, input.user_prompt, *backends.llm, input.kind, templates,
                               options.llm_params);
    });
    json flags = {{"modality", std::string(to_string(input.kind))},
                  {"length_violation", result.music_prompt.length_violation},
                  {"temperature", options.llm_params.temperature},
                  {"max_tokens", options.llm_params.max_tokens}};
    if (input.user_prompt) flags["user_prompt"] = *input.user_prompt;
    trace.stages.push_back({"bridge", result.caption.text, result.music_prompt.text, backends.llm->id(),
                            std::move(flags), timer.elapsed_ms()});
  }

  notify(Phase::generating);
  trace.stages.push_back(in_stage("music", [&] {
    return detail::music_stage(result.music_prompt, input.requested_duration, *backends.music, result.audio,
                               result.wav);
  }));
  return result;
}

/// The "without bridging" configuration: the caption is the music prompt.
inline GenerationResult run_pipeline_ablated(const MediaInput& input, PipelineOptions options,
                                             const BackendSet& backends, const TemplateStore& templates,
                                             const std::string& job_id, const ProgressFn& progress = {}) {
  options.bypass_bridge = true;
  return run_pipeline(input, options, backends, templates, job_id, progress);
}

/// Music generation from a user-edited prompt; the trace holds one stage.
inline GenerationResult run_music_only(const std::string& prompt_text, double duration_s,
                                       const MusicBackend& backend, const std::string& job_id,
                                       const std::string& parent_job_id) {
  require(!is_blank(prompt_text), "edited prompt must be non-blank");
  GenerationResult result;
  result.music_prompt = {prompt_text, false, sha256_hex(prompt_text), true};
  result.caption = {prompt_text, CaptionSource::image, std::nullopt, {}};
  auto& trace = result.trace;
  trace.job_id = job_id;
  trace.input_digest = sha256_hex(prompt_text);
  trace.input_kind = "prompt";
  trace.bridging_bypassed = true;
  trace.prompt_overridden = true;
  trace.parent_job_id = parent_job_id;
  trace.stages.push_back(detail::in_stage("music", [&] {
    return detail::music_stage(result.music_prompt, duration_s, backend, result.audio, result.wav);
  }));
  return result;
}

// ---------------------------------------------------------------------------
// Persistence: <dir>/trace.json and <dir>/output.wav, written once.

inline void write_file_atomic(const fs::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io_error, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(ErrorCode::io_error, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

/// Refuses to overwrite an existing trace: completed traces never change.
inline void persist_result(const fs::path& job_dir, const GenerationResult& result) {
  fs::create_directories(job_dir);
  auto trace_path = job_dir / "trace.json";
  if (fs::exists(trace_path)) fail(ErrorCode::io_error, trace_path.string() + " already exists");
  write_file_atomic(job_dir / "output.wav", result.wav);
  write_file_atomic(trace_path, result.trace.canonical());
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_PIPELINE_HPP
