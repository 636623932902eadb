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
#ifndef TONEBRIDGE_SERVICE_HPP
#define TONEBRIDGE_SERVICE_HPP

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "tonebridge/config.hpp"
#include "tonebridge/media.hpp"
#include "tonebridge/pipeline.hpp"

namespace tonebridge {

enum class JobState { queued, captioning, bridging, generating, done, failed };

inline std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::captioning: return "captioning";
    case JobState::bridging: return "bridging";
    case JobState::generating: return "generating";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "failed";
}

inline std::optional<JobState> parse_job_state(std::string_view s) {
  for (auto st : {JobState::queued, JobState::captioning, JobState::bridging, JobState::generating, JobState::done,
                  JobState::failed})
    if (to_string(st) == s) return st;
  return std::nullopt;
}

inline bool is_terminal(JobState s) { return s == JobState::done || s == JobState::failed; }

/// queued→captioning→bridging→generating→done, any non-terminal→failed.
/// Bridging may be skipped; prompt regeneration goes queued→generating.
inline bool is_valid_transition(JobState from, JobState to) {
  if (is_terminal(from)) return false;
  if (to == JobState::failed) return true;
  switch (from) {
    case JobState::queued: return to == JobState::captioning || to == JobState::generating;
    case JobState::captioning: return to == JobState::bridging || to == JobState::generating;
    case JobState::bridging: return to == JobState::generating;
    case JobState::generating: return to == JobState::done;
    default: return false;
  }
}

struct JobOptions {
  std::optional<std::string> user_prompt;
  double duration_s = kDefaultDurationSeconds;
  std::size_t frames = kDefaultFrameCount;
  bool bypass_bridge = false;
};

struct Job {
  std::string job_id;
  JobState state = JobState::queued;
  std::string created_at;
  /// "image", "video" or "prompt" (regeneration).
  std::string kind;
  std::string input_ref;
  JobOptions options;
  bool prompt_overridden = false;
  std::optional<std::string> parent_job_id;
  std::optional<std::string> edited_prompt;
  std::optional<std::string> caption;
  std::optional<std::string> music_prompt;
  std::optional<std::string> error_stage;
  std::optional<std::string> error_detail;
  std::vector<std::string> history;
  json timings_ms = json::object();

  json to_json() const {
    json j = {{"job_id", job_id},
              {"state", std::string(to_string(state))},
              {"created_at", created_at},
              {"kind", kind},
              {"input_ref", input_ref},
              {"options", {{"duration_s", options.duration_s},
                           {"frames", options.frames},
                           {"bypass_bridge", options.bypass_bridge}}},
              {"prompt_overridden", prompt_overridden},
              {"history", history},
              {"timings_ms", timings_ms}};
    if (options.user_prompt) j["options"]["user_prompt"] = *options.user_prompt;
    if (parent_job_id) j["parent_job_id"] = *parent_job_id;
    if (edited_prompt) j["edited_prompt"] = *edited_prompt;
    if (caption) j["caption"] = *caption;
    if (music_prompt) j["music_prompt"] = *music_prompt;
    if (error_stage || error_detail)
      j["error"] = {{"stage", error_stage.value_or("")}, {"detail", error_detail.value_or("")}};
    return j;
  }

  static Job from_json(const json& j) {
    Job job;
    job.job_id = j.at("job_id").get<std::string>();
    auto st = parse_job_state(j.at("state").get<std::string>());
    if (!st) fail(ErrorCode::io_error, "unknown job state in job.json");
    job.state = *st;
    job.created_at = j.value("created_at", "");
    job.kind = j.value("kind", "");
    job.input_ref = j.value("input_ref", "");
    const auto& o = j.at("options");
    job.options.duration_s = o.value("duration_s", kDefaultDurationSeconds);
    job.options.frames = o.value("frames", kDefaultFrameCount);
    job.options.bypass_bridge = o.value("bypass_bridge", false);
    if (o.contains("user_prompt")) job.options.user_prompt = o.at("user_prompt").get<std::string>();
    job.prompt_overridden = j.value("prompt_overridden", false);
    if (j.contains("parent_job_id")) job.parent_job_id = j.at("parent_job_id").get<std::string>();
    if (j.contains("edited_prompt")) job.edited_prompt = j.at("edited_prompt").get<std::string>();
    if (j.contains("caption")) job.caption = j.at("caption").get<std::string>();
    if (j.contains("music_prompt")) job.music_prompt = j.at("music_prompt").get<std::string>();
    if (j.contains("error")) {
      job.error_stage = j.at("error").value("stage", "");
      job.error_detail = j.at("error").value("detail", "");
    }
    job.history = j.value("history", std::vector<std::string>{});
    job.timings_ms = j.value("timings_ms", json::object());
    return job;
  }
};

using LogFn = std::function<void(const std::string&)>;

inline LogFn stderr_logger() {
  return [](const std::string& line) { std::cerr << "[tonebridge] " << line << std::endl; };
}

/// File-system backed job queue: <workspace>/jobs/<id>/{input.*, job.json,
/// trace.json, output.wav}. Each job's files are written by one worker.
class JobManager {
 public:
  JobManager(AppConfig config, BackendSet backends, TemplateStore templates, LogFn log = stderr_logger())
      : config_(std::move(config)),
        backends_(std::move(backends)),
        templates_(std::move(templates)),
        log_(std::move(log)) {
    require(config_.max_concurrent_jobs > 0, "max_concurrent_jobs must be positive");
    fs::create_directories(jobs_dir());
    recover();
    for (std::size_t i = 0; i < config_.max_concurrent_jobs; ++i) workers_.emplace_back([this] { work(); });
  }

  ~JobManager() { shutdown(); }
  JobManager(const JobManager&) = delete;
  JobManager& operator=(const JobManager&) = delete;

  fs::path jobs_dir() const { return config_.workspace_dir / "jobs"; }
  fs::path job_dir(const std::string& id) const { return jobs_dir() / id; }
  const AppConfig& config() const { return config_; }

  std::string submit(std::span<const std::uint8_t> media, JobOptions options) {
    if (media.size() > config_.max_upload_bytes)
      fail(ErrorCode::payload_too_large, "upload of " + std::to_string(media.size()) + " bytes exceeds cap of " +
                                             std::to_string(config_.max_upload_bytes));
    if (media.empty()) fail(ErrorCode::unsupported_media, "empty upload");
    auto format = sniff_media(media);
    if (format == MediaFormat::unknown) fail(ErrorCode::unsupported_media, "unrecognized media type");
    if (is_video_format(format) && config_.frame_decoder_command.empty())
      fail(ErrorCode::unsupported_media, "video uploads need a configured frame_decoder_command");
    require(options.duration_s > 0.0 && std::isfinite(options.duration_s), "duration must be positive");
    require(options.frames >= 1, "frames must be positive");
    options.user_prompt = MediaInput::normalize(std::move(options.user_prompt));

    Job job;
    job.job_id = new_job_id();
    job.created_at = now_iso8601();
    job.kind = is_image_format(format) ? "image" : "video";
    job.input_ref = "input." + std::string(to_string(format));
    job.options = std::move(options);
    job.history.push_back("queued");
    fs::create_directories(job_dir(job.job_id));
    write_file_atomic(job_dir(job.job_id) / job.input_ref, media);
    return enqueue(std::move(job));
  }

  std::string regenerate(const std::string& parent_id, const std::string& edited_prompt) {
    Job job;
    {
      std::lock_guard lock(mutex_);
      auto it = jobs_.find(parent_id);
      if (it == jobs_.end()) fail(ErrorCode::not_found, "no job " + parent_id);
      if (it->second.state != JobState::done)
        fail(ErrorCode::invalid_state, "job " + parent_id + " is " + std::string(to_string(it->second.state)));
      job.options.duration_s = it->second.options.duration_s;
    }
    require(!is_blank(edited_prompt), "edited prompt must be non-blank");
    job.job_id = new_job_id();
    job.created_at = now_iso8601();
    job.kind = "prompt";
    job.prompt_overridden = true;
    job.parent_job_id = parent_id;
    job.edited_prompt = edited_prompt;
    job.history.push_back("queued");
    fs::create_directories(job_dir(job.job_id));
    return enqueue(std::move(job));
  }

  Job get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) fail(ErrorCode::not_found, "no job " + id);
    return it->second;
  }

  /// Job record plus, once terminal, the persisted trace and audio URL.
  json describe(const std::string& id) const {
    Job job = get(id);
    json j = job.to_json();
    if (job.state == JobState::done) {
      j["audio_url"] = "/api/jobs/" + id + "/audio";
      auto trace_path = job_dir(id) / "trace.json";
      if (fs::exists(trace_path)) {
        auto trace = json::parse(read_text_file(trace_path));
        j["trace"] = trace;
        json names = json::array();
        for (const auto& s : trace.at("stages")) names.push_back(s.at("stage"));
        j["stages"] = names;
      } else {
        log_("integrity warning: " + trace_path.string() + " is missing");
      }
    }
    return j;
  }

  std::vector<Job> list() const {
    std::lock_guard lock(mutex_);
    std::vector<Job> out;
    for (const auto& [_, j] : jobs_) out.push_back(j);
    std::sort(out.begin(), out.end(), [](const Job& a, const Job& b) {
      return a.created_at != b.created_at ? a.created_at < b.created_at : a.job_id < b.job_id;
    });
    return out;
  }

  Bytes audio(const std::string& id) const {
    Job job = get(id);
    if (job.state != JobState::done)
      fail(ErrorCode::invalid_state, "job " + id + " is " + std::string(to_string(job.state)));
    auto path = job_dir(id) / "output.wav";
    if (!fs::exists(path)) {
      log_("integrity warning: " + path.string() + " is missing for done job " + id);
      fail(ErrorCode::not_found, "audio for job " + id + " is missing from the workspace");
    }
    auto s = read_text_file(path);
    return Bytes(s.begin(), s.end());
  }

  /// Blocks until the job is terminal or the timeout passes.
  Job wait(const std::string& id, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    changed_.wait_for(lock, timeout, [&] {
      auto it = jobs_.find(id);
      return it == jobs_.end() || is_terminal(it->second.state);
    });
    auto it = jobs_.find(id);
    if (it == jobs_.end()) fail(ErrorCode::not_found, "no job " + id);
    return it->second;
  }

  std::size_t peak_active() const { return peak_active_.load(); }

  /// Stops intake; queued and in-flight jobs end as failed("shutdown").
  void shutdown() {
    {
      std::lock_guard lock(mutex_);
      if (stopping_) return;
      stopping_ = true;
      for (auto& [id, job] : jobs_)
        if (!is_terminal(job.state)) fail_locked(job, stage_of(job.state), "shutdown");
      queue_.clear();
    }
    changed_.notify_all();
    for (auto& t : workers_)
      if (t.joinable()) t.join();
  }

 private:
  static std::string stage_of(JobState s) {
    switch (s) {
      case JobState::captioning: return "caption";
      case JobState::bridging: return "bridge";
      case JobState::generating: return "music";
      default: return std::string(to_string(s));
    }
  }

  static std::string now_iso8601() {
    auto now = std::chrono::system_clock::now();
    auto t = std::chrono::system_clock::to_time_t(now);
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
  }

  std::string new_job_id() {
    std::lock_guard lock(mutex_);
    for (;;) {
      std::uint64_t r = rng_();
      char buf[32];
      std::snprintf(buf, sizeof buf, "job-%012llx", static_cast<unsigned long long>(r & 0xFFFFFFFFFFFFull));
      if (!jobs_.count(buf) && !fs::exists(job_dir(buf))) return buf;
    }
  }

  void persist_locked(const Job& job) const {
    write_file_atomic(job_dir(job.job_id) / "job.json", job.to_json().dump(2) + "\n");
  }

  void fail_locked(Job& job, const std::string& stage, const std::string& detail) {
    job.state = JobState::failed;
    job.error_stage = stage;
    job.error_detail = detail;
    job.history.push_back("failed");
    persist_locked(job);
  }

  std::string enqueue(Job job) {
    std::string id = job.job_id;
    {
      std::lock_guard lock(mutex_);
      if (stopping_) fail(ErrorCode::invalid_state, "service is shutting down");
      persist_locked(job);
      queue_.push_back(id);
      jobs_[id] = std::move(job);
    }
    changed_.notify_all();
    return id;
  }

  void recover() {
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(jobs_dir(), ec)) {
      auto path = entry.path() / "job.json";
      if (!fs::exists(path)) continue;
      try {
        Job job = Job::from_json(json::parse(read_text_file(path)));
        if (!is_terminal(job.state)) fail_locked(job, stage_of(job.state), "shutdown");
        jobs_[job.job_id] = std::move(job);
      } catch (const std::exception& e) {
        log_("skipping unreadable " + path.string() + ": " + e.what());
      }
    }
  }

  /// False when the job already reached a terminal state (shutdown).
  bool advance(const std::string& id, JobState next) {
    {
      std::lock_guard lock(mutex_);
      auto& job = jobs_.at(id);
      if (is_terminal(job.state)) return false;
      if (!is_valid_transition(job.state, next))
        fail(ErrorCode::invalid_state, "illegal transition " + std::string(to_string(job.state)) + " -> " +
                                           std::string(to_string(next)));
      job.state = next;
      job.history.push_back(std::string(to_string(next)));
      persist_locked(job);
    }
    changed_.notify_all();
    return true;
  }

  void work() {
    for (;;) {
      std::string id;
      Job job;
      {
        std::unique_lock lock(mutex_);
        changed_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        id = queue_.front();
        queue_.pop_front();
        job = jobs_.at(id);
      }
      auto now = ++active_;
      for (auto peak = peak_active_.load(); now > peak && !peak_active_.compare_exchange_weak(peak, now);) {
      }
      run(job);
      --active_;
    }
  }

  void run(const Job& job) {
    const auto& id = job.job_id;
    std::string stage = "caption";
    try {
      GenerationResult result;
      if (job.kind == "prompt") {
        stage = "music";
        if (!advance(id, JobState::generating)) return;
        detail::require_backend(backends_.music.get(), "music");
        result = run_music_only(*job.edited_prompt, job.options.duration_s, *backends_.music, id,
                                *job.parent_job_id);
      } else {
        MediaInput input;
        auto input_path = job_dir(id) / job.input_ref;
        if (job.kind == "image") {
          auto s = read_text_file(input_path);
          input = MediaInput::from_image(Bytes(s.begin(), s.end()), job.options.user_prompt, job.options.duration_s);
        } else {
          auto source = std::make_shared<ExternalDecoderFrameSource>(config_.frame_decoder_command, input_path,
                                                                     job_dir(id) / "frames", job.options.frames);
          input = MediaInput::from_frames(std::move(source), job.options.user_prompt, job.options.duration_s);
        }
        PipelineOptions opts;
        opts.frame_count = job.options.frames;
        opts.bypass_bridge = job.options.bypass_bridge;
        opts.llm_params = config_.llm;
        auto on_phase = [&](Phase p) {
          JobState next = p == Phase::captioning ? JobState::captioning
                          : p == Phase::bridging ? JobState::bridging
                                                 : JobState::generating;
          stage = p == Phase::captioning ? "caption" : p == Phase::bridging ? "bridge" : "music";
          if (!advance(id, next)) throw Error(ErrorCode::invalid_state, "shutdown", stage);
        };
        result = run_pipeline(input, opts, backends_, templates_, id, on_phase);
      }

      {
        std::lock_guard lock(mutex_);
        auto& live = jobs_.at(id);
        if (is_terminal(live.state)) return;
        persist_result(job_dir(id), result);
        live.caption = result.caption.text;
        live.music_prompt = result.music_prompt.text;
        for (std::size_t i = 0; i < result.trace.stages.size(); ++i)
          live.timings_ms[std::to_string(i) + ":" + result.trace.stages[i].stage] = result.trace.stages[i].wall_time_ms;
        live.state = JobState::done;
        live.history.push_back("done");
        persist_locked(live);
      }
      changed_.notify_all();
    } catch (const Error& e) {
      record_failure(id, e.stage().empty() ? stage : e.stage(), e.what());
    } catch (const std::exception& e) {
      record_failure(id, stage, e.what());
    }
  }

  void record_failure(const std::string& id, const std::string& stage, const std::string& detail) {
    {
      std::lock_guard lock(mutex_);
      auto& live = jobs_.at(id);
      if (is_terminal(live.state)) return;
      log_("job " + id + " failed in stage " + stage + ": " + detail);
      fail_locked(live, stage, detail);
    }
    changed_.notify_all();
  }

  AppConfig config_;
  BackendSet backends_;
  TemplateStore templates_;
  LogFn log_;

  mutable std::mutex mutex_;
  mutable std::condition_variable changed_;
  std::map<std::string, Job> jobs_;
  std::deque<std::string> queue_;
  bool stopping_ = false;
  std::mt19937_64 rng_{std::random_device{}()};
  std::atomic<std::size_t> active_{0};
  std::atomic<std::size_t> peak_active_{0};
  std::vector<std::thread> workers_;
};

// ---------------------------------------------------------------------------
// REST front end

inline int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::invalid_state: return 409;
    case ErrorCode::payload_too_large: return 413;
    case ErrorCode::unsupported_media: return 415;
    case ErrorCode::invalid_argument: return 400;
    default: return 500;
  }
}

class ServiceServer {
 public:
  explicit ServiceServer(JobManager& jobs) : jobs_(jobs) {
    // Multipart framing overhead on top of the media cap; the cap itself is
    // enforced by JobManager so the client gets a structured error.
    server_.set_payload_max_length(jobs_.config().max_upload_bytes + (1u << 20));
    server_.set_socket_options(exclusive_socket_options);
    install_routes();
  }

  httplib::Server& server() { return server_; }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  int bind_any(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  static void send_error(httplib::Response& res, const Error& e) {
    res.status = http_status_for(e.code());
    res.set_content(json{{"error", {{"code", std::string(to_string(e.code()))}, {"detail", e.detail()}}}}.dump(),
                    "application/json");
  }

  template <typename Fn>
  static auto guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const json::exception& e) {
        send_error(res, Error(ErrorCode::invalid_argument, e.what()));
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(json{{"error", {{"code", "Internal"}, {"detail", e.what()}}}}.dump(), "application/json");
      }
    };
  }

  static std::string form_value(const httplib::Request& req, const std::string& key) {
    return req.has_file(key) ? req.get_file_value(key).content : req.get_param_value(key);
  }

  static bool has_form_value(const httplib::Request& req, const std::string& key) {
    return req.has_file(key) || req.has_param(key);
  }

  static JobOptions parse_options(const httplib::Request& req) {
    JobOptions o;
    if (has_form_value(req, "user_prompt")) o.user_prompt = form_value(req, "user_prompt");
    try {
      if (has_form_value(req, "duration")) o.duration_s = std::stod(form_value(req, "duration"));
      if (has_form_value(req, "frames")) {
        long long f = std::stoll(form_value(req, "frames"));
        require(f >= 1, "frames must be positive");
        o.frames = static_cast<std::size_t>(f);
      }
    } catch (const std::logic_error&) {
      fail(ErrorCode::invalid_argument, "duration/frames must be numeric");
    }
    if (has_form_value(req, "bypass_bridge")) {
      auto v = form_value(req, "bypass_bridge");
      if (v == "true" || v == "1") o.bypass_bridge = true;
      else if (v == "false" || v == "0" || v.empty()) o.bypass_bridge = false;
      else fail(ErrorCode::invalid_argument, "bypass_bridge must be true or false");
    }
    return o;
  }

  void install_routes() {
    const std::string origin = jobs_.config().cors_origin;
    server_.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
    server_.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server_.Post("/api/jobs", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!req.is_multipart_form_data() || !req.has_file("media"))
        fail(ErrorCode::unsupported_media, "expected multipart form with a 'media' file");
      const auto& media = req.get_file_value("media").content;
      auto options = parse_options(req);
      auto id = jobs_.submit(as_bytes(media), std::move(options));
      res.status = 202;
      res.set_content(json{{"job_id", id}}.dump(), "application/json");
    }));

    server_.Get("/api/jobs", guarded([this](const httplib::Request&, httplib::Response& res) {
      json arr = json::array();
      for (const auto& j : jobs_.list()) arr.push_back(j.to_json());
      res.set_content(json{{"jobs", arr}}.dump(), "application/json");
    }));

    server_.Get("/api/jobs/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      res.set_content(jobs_.describe(req.path_params.at("id")).dump(), "application/json");
    }));

    server_.Post("/api/jobs/:id/regenerate", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto body = json::parse(req.body);
      if (!body.is_object() || !body.contains("prompt") || !body.at("prompt").is_string())
        fail(ErrorCode::invalid_argument, "body must be {\"prompt\": <text>}");
      auto id = jobs_.regenerate(req.path_params.at("id"), body.at("prompt").get<std::string>());
      res.status = 202;
      res.set_content(json{{"job_id", id}}.dump(), "application/json");
    }));

    server_.Get("/api/jobs/:id/audio", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto wav = jobs_.audio(req.path_params.at("id"));
      res.set_content(std::string(wav.begin(), wav.end()), "audio/wav");
    }));
  }

  JobManager& jobs_;
  httplib::Server server_;
};

}  // namespace tonebridge

#endif  // TONEBRIDGE_SERVICE_HPP
