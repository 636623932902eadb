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
#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>

#include "tonebridge/config.hpp"
#include "tonebridge/eval/harness.hpp"
#include "tonebridge/mock_server.hpp"
#include "tonebridge/pipeline.hpp"
#include "tonebridge/service.hpp"

namespace fs = std::filesystem;
using namespace tonebridge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

struct CommonArgs {
  std::string config_path;
  bool mock = false;
  std::vector<std::string> backend_overrides;
  std::string template_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_flag("--mock", args.mock, "use in-process mock backends for every kind");
  cmd->add_option("--backend", args.backend_overrides, "override a backend endpoint, KIND=URL (repeatable)");
  cmd->add_option("--template-dir", args.template_dir, "alternative prompt template directory");
}

AppConfig resolve_config(const CommonArgs& args) {
  AppConfig c = args.config_path.empty() ? AppConfig{} : load_config(args.config_path);
  if (args.mock) {
    auto mocks = AppConfig::all_mocks();
    for (auto& [k, v] : mocks.backends) c.backends.try_emplace(k, v);
  }
  for (const auto& o : args.backend_overrides) {
    auto eq = o.find('=');
    auto kind = eq == std::string::npos ? std::nullopt : parse_backend_kind(o.substr(0, eq));
    if (!kind) fail(ErrorCode::config_error, "--backend expects KIND=URL, got '" + o + "'");
    BackendConfig bc = c.backends.count(*kind) ? c.backends[*kind] : BackendConfig{*kind};
    bc.base_url = o.substr(eq + 1);
    validate(bc);
    c.backends[*kind] = bc;
  }
  if (!args.template_dir.empty()) c.template_dir = fs::path(args.template_dir);
  return c;
}

std::string stage_prefix(const Error& e) { return e.stage().empty() ? "" : "stage " + e.stage() + ": "; }

// ---------------------------------------------------------------------------

struct GenerateArgs {
  CommonArgs common;
  std::string input, out, trace, prompt, job_id;
  double duration = kDefaultDurationSeconds;
  std::size_t frames = kDefaultFrameCount;
  bool bypass = false;
};

int cmd_generate(const GenerateArgs& a) {
  AppConfig config = resolve_config(a.common);
  require_backends(config, {BackendKind::captioner, BackendKind::music}, "generate");
  if (!a.bypass || fs::is_directory(a.input)) require_backends(config, {BackendKind::llm}, "generate");
  if (!fs::exists(a.input)) fail(ErrorCode::decode_error, "input " + a.input + " does not exist");

  auto backends = make_backends(config.backends, config.retry);
  auto templates = TemplateStore::load(config.resolved_template_dir());
  std::optional<std::string> prompt;
  if (!a.prompt.empty()) prompt = a.prompt;

  std::optional<fs::path> scratch;
  MediaInput input;
  if (fs::is_directory(a.input)) {
    input = MediaInput::from_frames(std::make_shared<DirectoryFrameSource>(a.input), prompt, a.duration);
  } else {
    auto text = read_text_file(a.input);
    Bytes bytes(text.begin(), text.end());
    auto format = sniff_media(bytes);
    if (is_video_format(format)) {
      scratch = fs::temp_directory_path() / ("tonebridge-frames-" + sha256_hex(bytes).substr(0, 16));
      fs::remove_all(*scratch);
      auto source = std::make_shared<ExternalDecoderFrameSource>(config.frame_decoder_command, a.input, *scratch,
                                                                 a.frames);
      input = MediaInput::from_frames(std::move(source), prompt, a.duration);
    } else {
      input = MediaInput::from_image(std::move(bytes), prompt, a.duration);
    }
  }

  PipelineOptions options;
  options.frame_count = a.frames;
  options.bypass_bridge = a.bypass;
  options.llm_params = config.llm;

  std::string job_id = a.job_id;
  if (job_id.empty()) {
    std::string digest = input.kind == Modality::image ? sha256_hex(input.image) : input.frames->digest();
    json key = {{"input", digest},
                {"frames", a.frames},
                {"bypass_bridge", a.bypass},
                {"duration_s", a.duration},
                {"user_prompt", prompt ? *prompt : ""}};
    job_id = "gen-" + sha256_hex(canonical_dump(key)).substr(0, 16);
  }

  GenerationResult result;
  try {
    result = run_pipeline(input, options, backends, templates, job_id);
  } catch (...) {
    if (scratch) fs::remove_all(*scratch);
    throw;
  }
  if (scratch) fs::remove_all(*scratch);

  write_file_atomic(a.out, result.wav);
  if (!a.trace.empty()) write_file_atomic(a.trace, result.trace.canonical());
  std::cout << "caption: " << result.caption.text << "\n";
  std::cout << "music prompt: " << result.music_prompt.text << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  CommonArgs common;
  std::string manifest, out = "report", format = "json", metrics = "fad,kl,ibrank", embeddings_dir;
};

int cmd_eval(const EvalArgs& a) {
  std::set<Metric> metrics;
  std::stringstream ss(a.metrics);
  for (std::string tok; std::getline(ss, tok, ',');) {
    auto m = parse_metric(trim(tok));
    if (!m) fail(ErrorCode::invalid_argument, "unknown metric '" + tok + "'");
    metrics.insert(*m);
  }
  AppConfig config = resolve_config(a.common);
  EvalOptions options;
  if (!a.embeddings_dir.empty()) options.embeddings_dir = fs::path(a.embeddings_dir);
  if (metrics.count(Metric::kl)) require_backends(config, {BackendKind::classifier}, "eval --metrics kl");
  if ((metrics.count(Metric::fad) || metrics.count(Metric::ib_rank)) && !options.embeddings_dir)
    require_backends(config, {BackendKind::embedder}, "eval");

  auto manifest = load_manifest(a.manifest);
  auto report = run_eval(manifest, metrics, make_backends(config.backends, config.retry), options);

  fs::path base = a.out;
  if (base.extension() == ".json" || base.extension() == ".md") base.replace_extension();
  if (base.has_parent_path()) fs::create_directories(base.parent_path());
  auto json_path = fs::path(base.string() + ".json");
  write_file_atomic(json_path, emit_report(report, ReportFormat::json));
  std::cout << "wrote " << json_path.string() << "\n";
  if (a.format == "md") {
    auto md_path = fs::path(base.string() + ".md");
    auto md = emit_report(report, ReportFormat::markdown);
    write_file_atomic(md_path, md);
    std::cout << "wrote " << md_path.string() << "\n" << md;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

template <typename Server>
int serve_until_interrupted(Server& server, const std::string& host, int port, const char* what,
                            const std::function<void()>& on_stop = {}) {
  int actual = port == 0 ? server.bind_any(host) : (server.bind(host, port) ? port : -1);
  if (actual <= 0) {
    std::cerr << "error: cannot bind " << what << " to " << host << ":" << port << "\n";
    return kExitDomain;
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::thread watcher([&] {
    while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    if (on_stop) on_stop();
    server.stop();
  });
  std::cerr << what << " listening on " << host << ":" << actual << std::endl;
  bool ok = server.listen_after_bind();
  g_interrupted = true;
  watcher.join();
  return ok ? kExitOk : kExitDomain;
}

struct ServeArgs {
  CommonArgs common;
  std::string host, workspace;
  int port = -1;
  std::size_t max_jobs = 0;
};

int cmd_serve(const ServeArgs& a) {
  AppConfig config = resolve_config(a.common);
  if (!a.host.empty()) config.host = a.host;
  if (a.port >= 0) config.port = a.port;
  if (!a.workspace.empty()) config.workspace_dir = a.workspace;
  if (a.max_jobs > 0) config.max_concurrent_jobs = a.max_jobs;
  require_backends(config, {BackendKind::captioner, BackendKind::llm, BackendKind::music}, "serve");

  JobManager jobs(config, make_backends(config.backends, config.retry), TemplateStore::load(config.resolved_template_dir()));
  ServiceServer server(jobs);
  return serve_until_interrupted(server, config.host, config.port, "service", [&] { jobs.shutdown(); });
}

struct MockArgs {
  std::string host = "127.0.0.1";
  int port = 9090;
};

int cmd_mock_backends(const MockArgs& a) {
  MockBackendServer server;
  return serve_until_interrupted(server, a.host, a.port, "mock backends");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual-to-music generation pipeline and evaluation harness"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "caption, bridge and synthesize music for one image or frame directory");
  add_common(g, gen.common);
  g->add_option("--input", gen.input, "image file, frame directory or video file")->required();
  g->add_option("--out", gen.out, "output WAV path")->required();
  g->add_option("--trace", gen.trace, "write the canonical trace here");
  g->add_option("--prompt", gen.prompt, "optional user text prompt");
  g->add_option("--duration", gen.duration, "requested clip length in seconds")->check(CLI::PositiveNumber);
  g->add_option("--frames", gen.frames, "frames sampled from a video")->check(CLI::PositiveNumber);
  g->add_flag("--bypass-bridge", gen.bypass, "use the caption directly as the music prompt");
  g->add_option("--job-id", gen.job_id, "job id recorded in the trace (default: derived from input)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "compute FAD, KL and IB Rank over a manifest");
  add_common(e, ev.common);
  e->add_option("--manifest", ev.manifest, "JSONL manifest")->required();
  e->add_option("--out", ev.out, "report path without extension");
  e->add_option("--format", ev.format, "json or md (md also writes json)")->check(CLI::IsMember({"json", "md"}));
  e->add_option("--metrics", ev.metrics, "comma-separated subset of fad,kl,ibrank");
  e->add_option("--embeddings-dir", ev.embeddings_dir, "precomputed reference/visual/<system>.emb files");

  ServeArgs sv;
  auto* s = app.add_subcommand("serve", "run the HTTP job service");
  add_common(s, sv.common);
  s->add_option("--host", sv.host, "bind address");
  s->add_option("--port", sv.port, "port (0 picks a free one)");
  s->add_option("--workspace", sv.workspace, "workspace directory");
  s->add_option("--max-concurrent-jobs", sv.max_jobs, "pipeline worker count");

  MockArgs mk;
  auto* m = app.add_subcommand("mock-backends", "serve deterministic mocks of the five backend routes");
  m->add_option("--host", mk.host, "bind address");
  m->add_option("--port", mk.port, "port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(gen);
    if (e->parsed()) return cmd_eval(ev);
    if (s->parsed()) return cmd_serve(sv);
    if (m->parsed()) return cmd_mock_backends(mk);
  } catch (const Error& ex) {
    std::cerr << "error: " << stage_prefix(ex) << ex.what() << "\n";
    return kExitDomain;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitDomain;
  }
  return kExitUsage;
}
