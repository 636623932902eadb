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
#include <gtest/gtest.h>

#include <future>

#include "test_support.hpp"
#include "tonebridge/service.hpp"

using namespace tonebridge;
namespace tt = tonebridge::testing;
using namespace std::chrono_literals;

namespace {

// Captioner that holds every call until released.
class GateCaptioner final : public Captioner {
 public:
  std::string caption(std::span<const std::uint8_t> image, std::string_view f) const override {
    ++entered;
    gate_.wait();
    return mock::MockCaptioner{}.caption(image, f);
  }
  std::string id() const override { return "gate"; }
  void release() { promise_.set_value(); }
  mutable std::atomic<int> entered{0};

 private:
  std::promise<void> promise_;
  std::shared_future<void> gate_ = promise_.get_future().share();
};

class SlowCaptioner final : public Captioner {
 public:
  std::string caption(std::span<const std::uint8_t> image, std::string_view f) const override {
    std::this_thread::sleep_for(40ms);
    return mock::MockCaptioner{}.caption(image, f);
  }
  std::string id() const override { return "slow"; }
};

struct Logs {
  std::shared_ptr<std::vector<std::string>> lines = std::make_shared<std::vector<std::string>>();
  std::shared_ptr<std::mutex> mutex = std::make_shared<std::mutex>();
  LogFn fn() {
    return [l = lines, m = mutex](const std::string& s) {
      std::lock_guard lock(*m);
      l->push_back(s);
    };
  }
  bool contains(const std::string& needle) const {
    std::lock_guard lock(*mutex);
    return std::any_of(lines->begin(), lines->end(), [&](auto& s) { return s.find(needle) != std::string::npos; });
  }
};

AppConfig config_for(const tt::TempDir& dir, std::size_t workers = 2) {
  auto c = AppConfig::all_mocks();
  c.workspace_dir = dir / "ws";
  c.max_concurrent_jobs = workers;
  return c;
}

JobOptions short_job(std::optional<std::string> prompt = {}) {
  JobOptions o;
  o.duration_s = 0.25;
  o.user_prompt = std::move(prompt);
  return o;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected Error";
  return ErrorCode::io_error;
}

class ServiceHttp : public ::testing::Test {
 protected:
  void start(BackendSet backends = BackendSet::mocks(), AppConfig cfg = {}) {
    if (cfg.backends.empty()) cfg = config_for(dir_);
    jobs_ = std::make_unique<JobManager>(cfg, std::move(backends), tt::templates(), logs_.fn());
    server_ = std::make_unique<ServiceServer>(*jobs_);
    port_ = server_->bind_any();
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
    if (jobs_) jobs_->shutdown();
  }

  httplib::Result submit(const std::string& media, const std::string& prompt = "") {
    httplib::MultipartFormDataItems items{{"media", media, "upload.png", "image/png"}, {"duration", "0.25", "", ""}};
    if (!prompt.empty()) items.push_back({"user_prompt", prompt, "", ""});
    return client_->Post("/api/jobs", items);
  }
  std::string submit_ok(const std::string& media) {
    auto res = submit(media);
    EXPECT_EQ(res->status, 202) << res->body;
    return json::parse(res->body).at("job_id").get<std::string>();
  }
  json get_job(const std::string& id) { return json::parse(client_->Get("/api/jobs/" + id)->body); }
  std::string png() const {
    auto b = tt::red_pixel_png();
    return std::string(b.begin(), b.end());
  }

  tt::TempDir dir_;
  Logs logs_;
  std::unique_ptr<JobManager> jobs_;
  std::unique_ptr<ServiceServer> server_;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

}  // namespace

// --- state machine ------------------------------------------------------------

TEST(JobStates, TransitionTable) {
  using S = JobState;
  EXPECT_TRUE(is_valid_transition(S::queued, S::captioning));
  EXPECT_TRUE(is_valid_transition(S::captioning, S::bridging));
  EXPECT_TRUE(is_valid_transition(S::captioning, S::generating));
  EXPECT_TRUE(is_valid_transition(S::bridging, S::generating));
  EXPECT_TRUE(is_valid_transition(S::generating, S::done));
  EXPECT_TRUE(is_valid_transition(S::queued, S::generating));
  for (auto s : {S::queued, S::captioning, S::bridging, S::generating}) EXPECT_TRUE(is_valid_transition(s, S::failed));
  for (auto to : {S::queued, S::captioning, S::bridging, S::generating, S::done, S::failed}) {
    EXPECT_FALSE(is_valid_transition(S::done, to));
    EXPECT_FALSE(is_valid_transition(S::failed, to));
  }
  EXPECT_FALSE(is_valid_transition(S::bridging, S::captioning));
  EXPECT_FALSE(is_valid_transition(S::queued, S::done));
}

TEST(JobRecord, JsonRoundTrip) {
  Job j;
  j.job_id = "job-1";
  j.state = JobState::failed;
  j.kind = "image";
  j.options = short_job(std::string("warm"));
  j.error_stage = "bridge";
  j.error_detail = "x";
  j.history = {"queued", "captioning", "failed"};
  EXPECT_EQ(Job::from_json(j.to_json()).to_json(), j.to_json());
}

// --- job manager -----------------------------------------------------------------

TEST(JobManager, ImageJobCompletesWithTraceAndAudio) {
  tt::TempDir dir;
  JobManager jobs(config_for(dir), BackendSet::mocks(), tt::templates(), [](auto&) {});
  auto id = jobs.submit(tt::red_pixel_png(), short_job());
  auto job = jobs.wait(id, 10s);
  ASSERT_EQ(job.state, JobState::done) << job.error_detail.value_or("");
  EXPECT_EQ(job.history, (std::vector<std::string>{"queued", "captioning", "bridging", "generating", "done"}));
  auto d = jobs.describe(id);
  EXPECT_EQ(d["stages"], json({"caption", "bridge", "music"}));
  EXPECT_EQ(d["trace"]["job_id"], id);
  auto wav = jobs.audio(id);
  EXPECT_EQ(decode_wav(wav).duration(), 0.25);
  EXPECT_TRUE(fs::exists(dir / "ws" / "jobs" / id / "input.png"));
  EXPECT_TRUE(fs::exists(dir / "ws" / "jobs" / id / "job.json"));
}

TEST(JobManager, BypassedJobSkipsBridging) {
  tt::TempDir dir;
  JobManager jobs(config_for(dir), BackendSet::mocks(), tt::templates(), [](auto&) {});
  auto o = short_job();
  o.bypass_bridge = true;
  auto job = jobs.wait(jobs.submit(tt::red_pixel_png(), o), 10s);
  EXPECT_EQ(job.history, (std::vector<std::string>{"queued", "captioning", "generating", "done"}));
  EXPECT_EQ(job.caption, job.music_prompt);
}

TEST(JobManager, IdenticalSubmissionsGetDistinctIds) {
  tt::TempDir dir;
  JobManager jobs(config_for(dir), BackendSet::mocks(), tt::templates(), [](auto&) {});
  auto a = jobs.submit(tt::red_pixel_png(), short_job());
  auto b = jobs.submit(tt::red_pixel_png(), short_job());
  EXPECT_NE(a, b);
  EXPECT_EQ(jobs.wait(a, 10s).music_prompt, jobs.wait(b, 10s).music_prompt);
}

TEST(JobManager, UploadRejections) {
  tt::TempDir dir;
  auto cfg = config_for(dir);
  cfg.max_upload_bytes = 1024;
  JobManager jobs(cfg, BackendSet::mocks(), tt::templates(), [](auto&) {});
  EXPECT_EQ(code_of([&] { jobs.submit(Bytes{}, short_job()); }), ErrorCode::unsupported_media);
  EXPECT_EQ(code_of([&] { jobs.submit(to_bytes("plain text"), short_job()); }), ErrorCode::unsupported_media);
  EXPECT_EQ(code_of([&] { jobs.submit(Bytes(2048, 0x89), short_job()); }), ErrorCode::payload_too_large);
  Bytes mp4 = to_bytes(std::string("\0\0\0\x18" "ftypisom", 12));
  EXPECT_EQ(code_of([&] { jobs.submit(mp4, short_job()); }), ErrorCode::unsupported_media);
  EXPECT_TRUE(jobs.list().empty());
}

TEST(JobManager, FailedJobNamesItsStage) {
  tt::TempDir dir;
  Logs logs;
  auto b = BackendSet::mocks();
  b.captioner = std::make_shared<tt::ScriptedCaptioner>(" ");
  JobManager jobs(config_for(dir), b, tt::templates(), logs.fn());
  auto job = jobs.wait(jobs.submit(tt::red_pixel_png(), short_job()), 10s);
  EXPECT_EQ(job.state, JobState::failed);
  EXPECT_EQ(job.error_stage, "caption");
  EXPECT_NE(job.error_detail->find("EmptyCaption"), std::string::npos);
  EXPECT_TRUE(logs.contains("failed in stage caption"));
  EXPECT_EQ(code_of([&] { jobs.audio(job.job_id); }), ErrorCode::invalid_state);
}

TEST(JobManager, CorruptImageFailsInCaptionStage) {
  tt::TempDir dir;
  JobManager jobs(config_for(dir), BackendSet::mocks(), tt::templates(), [](auto&) {});
  auto png = tt::red_pixel_png();
  png.resize(20);
  auto job = jobs.wait(jobs.submit(png, short_job()), 10s);
  EXPECT_EQ(job.state, JobState::failed);
  EXPECT_EQ(job.error_stage, "caption");
}

TEST(JobManager, RegenerationRunsOnlyTheMusicStage) {
  tt::TempDir dir;
  tt::CountingBackends counts;
  JobManager jobs(config_for(dir), counts.set(), tt::templates(), [](auto&) {});
  auto parent = jobs.wait(jobs.submit(tt::red_pixel_png(), short_job()), 10s).job_id;
  int captions = counts.captioner->calls, chats = counts.llm->calls;

  auto a = jobs.wait(jobs.regenerate(parent, "solo violin"), 10s);
  auto b = jobs.wait(jobs.regenerate(parent, "solo violin"), 10s);
  ASSERT_EQ(a.state, JobState::done);
  EXPECT_EQ(a.history, (std::vector<std::string>{"queued", "generating", "done"}));
  EXPECT_EQ(jobs.describe(a.job_id)["stages"], json({"music"}));
  EXPECT_EQ(jobs.describe(a.job_id)["trace"]["parent_job_id"], parent);
  EXPECT_TRUE(a.prompt_overridden);
  EXPECT_EQ(jobs.audio(a.job_id), jobs.audio(b.job_id));
  EXPECT_EQ(counts.captioner->calls, captions);
  EXPECT_EQ(counts.llm->calls, chats);

  EXPECT_EQ(code_of([&] { jobs.regenerate(parent, "  "); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([&] { jobs.regenerate("job-nope", "x"); }), ErrorCode::not_found);
}

TEST(JobManager, PolledStatesOnlyMoveAlongLegalEdges) {
  tt::TempDir dir;
  auto b = BackendSet::mocks();
  b.captioner = std::make_shared<SlowCaptioner>();
  JobManager jobs(config_for(dir, 1), b, tt::templates(), [](auto&) {});
  std::vector<std::string> ids;
  for (int i = 0; i < 3; ++i) ids.push_back(jobs.submit(tt::red_pixel_png(), short_job()));
  std::map<std::string, std::vector<JobState>> seen;
  for (auto deadline = std::chrono::steady_clock::now() + 10s; std::chrono::steady_clock::now() < deadline;) {
    bool all_done = true;
    for (const auto& id : ids) {
      auto s = jobs.get(id).state;
      auto& v = seen[id];
      if (v.empty() || v.back() != s) v.push_back(s);
      all_done = all_done && is_terminal(s);
    }
    if (all_done) break;
    std::this_thread::sleep_for(2ms);
  }
  for (const auto& [id, states] : seen) {
    EXPECT_EQ(states.back(), JobState::done);
    for (std::size_t i = 1; i < states.size(); ++i) {
      // Polling can miss intermediate states, so check reachability along history.
      auto history = jobs.get(id).history;
      auto a = std::find(history.begin(), history.end(), to_string(states[i - 1]));
      auto c = std::find(history.begin(), history.end(), to_string(states[i]));
      EXPECT_LT(a, c);
    }
    auto history = jobs.get(id).history;
    for (std::size_t i = 1; i < history.size(); ++i)
      EXPECT_TRUE(is_valid_transition(*parse_job_state(history[i - 1]), *parse_job_state(history[i])));
  }
}

TEST(JobManager, ConcurrencyCapIsRespected) {
  tt::TempDir dir;
  auto b = BackendSet::mocks();
  b.captioner = std::make_shared<SlowCaptioner>();
  JobManager jobs(config_for(dir, 2), b, tt::templates(), [](auto&) {});
  std::vector<std::string> ids;
  for (int i = 0; i < 6; ++i) ids.push_back(jobs.submit(tt::red_pixel_png(), short_job()));
  for (const auto& id : ids) EXPECT_EQ(jobs.wait(id, 10s).state, JobState::done);
  EXPECT_EQ(jobs.peak_active(), 2u);
}

TEST(JobManager, QueuedJobAudioIsConflict) {
  tt::TempDir dir;
  auto gate = std::make_shared<GateCaptioner>();
  auto b = BackendSet::mocks();
  b.captioner = gate;
  JobManager jobs(config_for(dir, 1), b, tt::templates(), [](auto&) {});
  auto running = jobs.submit(tt::red_pixel_png(), short_job());
  auto queued = jobs.submit(tt::red_pixel_png(), short_job());
  while (gate->entered == 0) std::this_thread::sleep_for(1ms);
  EXPECT_EQ(jobs.get(queued).state, JobState::queued);
  EXPECT_EQ(code_of([&] { jobs.audio(queued); }), ErrorCode::invalid_state);
  EXPECT_EQ(code_of([&] { jobs.regenerate(running, "x"); }), ErrorCode::invalid_state);
  gate->release();
  EXPECT_EQ(jobs.wait(queued, 10s).state, JobState::done);
}

TEST(JobManager, ShutdownFailsInFlightAndQueuedJobs) {
  tt::TempDir dir;
  auto gate = std::make_shared<GateCaptioner>();
  auto b = BackendSet::mocks();
  b.captioner = gate;
  auto jobs = std::make_unique<JobManager>(config_for(dir, 1), b, tt::templates(), [](auto&) {});
  auto running = jobs->submit(tt::red_pixel_png(), short_job());
  auto queued = jobs->submit(tt::red_pixel_png(), short_job());
  while (gate->entered == 0) std::this_thread::sleep_for(1ms);
  std::thread releaser([&] {
    std::this_thread::sleep_for(50ms);
    gate->release();
  });
  jobs->shutdown();
  releaser.join();
  EXPECT_EQ(jobs->get(running).state, JobState::failed);
  EXPECT_EQ(jobs->get(running).error_stage, "caption");
  EXPECT_EQ(jobs->get(queued).error_detail, "shutdown");
  EXPECT_FALSE(fs::exists(dir / "ws" / "jobs" / running / "trace.json"));
  EXPECT_EQ(code_of([&] { jobs->submit(tt::red_pixel_png(), short_job()); }), ErrorCode::invalid_state);
}

TEST(JobManager, RestartKeepsDoneJobsAndFailsUnfinishedOnes) {
  tt::TempDir dir;
  std::string done_id;
  Bytes audio;
  {
    JobManager jobs(config_for(dir), BackendSet::mocks(), tt::templates(), [](auto&) {});
    done_id = jobs.wait(jobs.submit(tt::red_pixel_png(), short_job()), 10s).job_id;
    audio = jobs.audio(done_id);
  }
  // A record left mid-flight by a crashed process.
  Job orphan;
  orphan.job_id = "job-orphan";
  orphan.state = JobState::bridging;
  orphan.kind = "image";
  orphan.history = {"queued", "captioning", "bridging"};
  tt::write_bytes(dir / "ws" / "jobs" / "job-orphan" / "job.json", to_bytes(orphan.to_json().dump()));

  Logs logs;
  JobManager again(config_for(dir), BackendSet::mocks(), tt::templates(), logs.fn());
  EXPECT_EQ(again.get(done_id).state, JobState::done);
  EXPECT_EQ(again.audio(done_id), audio);
  auto o = again.get("job-orphan");
  EXPECT_EQ(o.state, JobState::failed);
  EXPECT_EQ(o.error_stage, "bridge");
  EXPECT_EQ(o.error_detail, "shutdown");
  auto persisted = Job::from_json(json::parse(read_text_file(dir / "ws" / "jobs" / "job-orphan" / "job.json")));
  EXPECT_EQ(persisted.state, JobState::failed);

  fs::remove(dir / "ws" / "jobs" / done_id / "output.wav");
  EXPECT_EQ(code_of([&] { again.audio(done_id); }), ErrorCode::not_found);
  EXPECT_TRUE(logs.contains("integrity warning"));
}

// --- REST ----------------------------------------------------------------------

TEST_F(ServiceHttp, SubmitPollAndFetchAudio) {
  start();
  auto id = submit_ok(png());
  jobs_->wait(id, 10s);
  auto j = get_job(id);
  EXPECT_EQ(j["state"], "done");
  EXPECT_EQ(j["stages"], json({"caption", "bridge", "music"}));
  EXPECT_EQ(j["audio_url"], "/api/jobs/" + id + "/audio");
  auto audio = client_->Get("/api/jobs/" + id + "/audio");
  EXPECT_EQ(audio->status, 200);
  EXPECT_EQ(audio->get_header_value("Content-Type"), "audio/wav");
  auto on_disk = tt::read_bytes(dir_ / "ws" / "jobs" / id / "output.wav");
  EXPECT_EQ(audio->body, std::string(on_disk.begin(), on_disk.end()));
  EXPECT_EQ(audio->get_header_value("Access-Control-Allow-Origin"), "*");

  auto list = json::parse(client_->Get("/api/jobs")->body);
  EXPECT_EQ(list["jobs"].size(), 1u);
}

TEST_F(ServiceHttp, ErrorStatuses) {
  auto cfg = config_for(dir_);
  cfg.max_upload_bytes = 4096;
  start(BackendSet::mocks(), cfg);
  EXPECT_EQ(submit("")->status, 415);
  EXPECT_EQ(submit("hello")->status, 415);
  auto big = submit(std::string(8192, 'x'));
  EXPECT_EQ(big->status, 413);
  EXPECT_EQ(json::parse(big->body)["error"]["code"], "PayloadTooLarge");
  EXPECT_EQ(client_->Post("/api/jobs", "{}", "application/json")->status, 415);

  EXPECT_EQ(client_->Get("/api/jobs/job-missing")->status, 404);
  EXPECT_EQ(client_->Get("/api/jobs/job-missing/audio")->status, 404);
  EXPECT_EQ(client_->Post("/api/jobs/job-missing/regenerate", R"({"prompt":"x"})", "application/json")->status, 404);

  auto id = submit_ok(png());
  jobs_->wait(id, 10s);
  auto regen = [&](const std::string& body) {
    return client_->Post("/api/jobs/" + id + "/regenerate", body, "application/json")->status;
  };
  EXPECT_EQ(regen(R"({"prompt":"   "})"), 400);
  EXPECT_EQ(regen(R"({"nope":1})"), 400);
  EXPECT_EQ(regen("not json"), 400);

  httplib::MultipartFormDataItems bad{{"media", png(), "a.png", "image/png"}, {"duration", "soon", "", ""}};
  EXPECT_EQ(client_->Post("/api/jobs", bad)->status, 400);
  EXPECT_EQ(client_->Options("/api/jobs")->status, 204);
}

TEST_F(ServiceHttp, RegenerateRoundTrip) {
  start();
  auto parent = submit_ok(png());
  jobs_->wait(parent, 10s);
  auto res = client_->Post("/api/jobs/" + parent + "/regenerate", R"({"prompt":"ambient drone"})", "application/json");
  ASSERT_EQ(res->status, 202);
  auto child = json::parse(res->body)["job_id"].get<std::string>();
  jobs_->wait(child, 10s);
  auto j = get_job(child);
  EXPECT_EQ(j["stages"], json({"music"}));
  EXPECT_EQ(j["parent_job_id"], parent);
  EXPECT_EQ(j["trace"]["stages"][0]["input"], "ambient drone");
}

TEST_F(ServiceHttp, FailedJobReportsStage) {
  auto b = BackendSet::mocks();
  b.captioner = std::make_shared<tt::ScriptedCaptioner>("");
  start(b);
  auto id = submit_ok(png());
  jobs_->wait(id, 10s);
  auto j = get_job(id);
  EXPECT_EQ(j["state"], "failed");
  EXPECT_EQ(j["error"]["stage"], "caption");
  EXPECT_EQ(client_->Get("/api/jobs/" + id + "/audio")->status, 409);
}
