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

#include <fstream>

#include "process_support.hpp"
#include "test_support.hpp"
#include "tonebridge/config.hpp"
#include "tonebridge/pipeline.hpp"

using namespace tonebridge;
namespace tt = tonebridge::testing;
using namespace std::chrono_literals;

namespace {

const std::string kCli = TONEBRIDGE_CLI_PATH;

tt::RunResult run_cli(const std::string& args) { return tt::run_cli(kCli, args); }

std::string q(const fs::path& p) { return shell_quote(p.string()); }

struct Child : tt::Child {
  Child(std::vector<std::string> args, const fs::path& log) : tt::Child(kCli, std::move(args), log) {}
};

fs::path write_manifest(const tt::TempDir& dir, bool duplicate = false) {
  std::ofstream out(dir / "m.jsonl");
  for (int i = 0; i < 3; ++i) {
    auto id = "it" + std::to_string(i);
    tt::write_bytes(dir / (id + ".png"), solid_png(2, 2, static_cast<std::uint8_t>(50 * i), 0, 0));
    tt::write_bytes(dir / (id + "_ref.wav"), encode_wav(sine_clip(200 + 30.0 * i, 0.05, 16000)));
    tt::write_bytes(dir / (id + "_a.wav"), encode_wav(sine_clip(250 + 30.0 * i, 0.05, 16000)));
    tt::write_bytes(dir / (id + "_b.wav"), encode_wav(sine_clip(260 + 30.0 * i, 0.05, 16000)));
    out << json{{"id", duplicate ? "same" : id},
                {"media_path", id + ".png"},
                {"media_type", "image"},
                {"reference_audio_path", id + "_ref.wav"},
                {"generated_audio_paths", {{"ours", id + "_a.wav"}, {"plain", id + "_b.wav"}}}}
               .dump()
        << "\n";
  }
  return dir / "m.jsonl";
}

}  // namespace

TEST(Cli, HelpExitsZeroForEveryCommand) {
  for (const char* cmd : {"", "generate", "eval", "serve", "mock-backends"}) {
    auto r = run_cli(std::string(cmd) + " --help");
    EXPECT_EQ(r.exit_code, 0) << cmd;
    EXPECT_NE(r.output.find("Usage"), std::string::npos) << cmd;
  }
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli("").exit_code, 2);
  EXPECT_EQ(run_cli("generate --mock --out x.wav").exit_code, 2);
  EXPECT_EQ(run_cli("frobnicate").exit_code, 2);
  EXPECT_EQ(run_cli("generate --mock --input a --out b --duration -3").exit_code, 2);
}

TEST(Cli, GenerateImageSmoke) {
  tt::TempDir dir;
  tt::write_bytes(dir / "in.png", tt::red_pixel_png());
  auto r = run_cli("generate --mock --duration 1 --input " + q(dir / "in.png") + " --out " + q(dir / "o.wav") +
                   " --trace " + q(dir / "t.json"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("caption: mock caption "), std::string::npos);
  EXPECT_NE(r.output.find("music prompt: mock: "), std::string::npos);
  auto clip = decode_wav(tt::read_bytes(dir / "o.wav"));
  EXPECT_EQ(clip.sample_rate, 32000);
  EXPECT_EQ(clip.duration(), 1.0);
  auto trace = PipelineTrace::from_json(json::parse(read_text_file(dir / "t.json")));
  EXPECT_EQ(trace.stage_names(), (std::vector<std::string>{"caption", "bridge", "music"}));
}

TEST(Cli, TraceIsByteIdenticalAcrossProcesses) {
  tt::TempDir dir;
  tt::write_frame_dir(dir / "frames", 6);
  auto args = "generate --mock --duration 0.5 --frames 3 --prompt 'slow waltz' --input " + q(dir / "frames");
  ASSERT_EQ(run_cli(args + " --out " + q(dir / "a.wav") + " --trace " + q(dir / "a.json")).exit_code, 0);
  ASSERT_EQ(run_cli(args + " --out " + q(dir / "b.wav") + " --trace " + q(dir / "b.json")).exit_code, 0);
  EXPECT_EQ(read_text_file(dir / "a.json"), read_text_file(dir / "b.json"));
  EXPECT_EQ(tt::read_bytes(dir / "a.wav"), tt::read_bytes(dir / "b.wav"));
}

TEST(Cli, FrameCountFlagControlsCaptionStages) {
  tt::TempDir dir;
  tt::write_frame_dir(dir / "frames", 10);
  auto r = run_cli("generate --mock --duration 0.5 --frames 4 --input " + q(dir / "frames") + " --out " +
                   q(dir / "o.wav") + " --trace " + q(dir / "t.json"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  auto trace = PipelineTrace::from_json(json::parse(read_text_file(dir / "t.json")));
  EXPECT_EQ(trace.count("caption"), 4u);
  EXPECT_EQ(trace.count("aggregate"), 1u);
}

TEST(Cli, BypassBridgeOmitsTheBridgeStage) {
  tt::TempDir dir;
  tt::write_bytes(dir / "in.png", tt::red_pixel_png());
  auto r = run_cli("generate --mock --bypass-bridge --duration 0.5 --input " + q(dir / "in.png") + " --out " +
                   q(dir / "o.wav") + " --trace " + q(dir / "t.json"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  auto trace = PipelineTrace::from_json(json::parse(read_text_file(dir / "t.json")));
  EXPECT_EQ(trace.count("bridge"), 0u);
  EXPECT_TRUE(trace.bridging_bypassed);
}

TEST(Cli, MissingOrBadInputExitsOneWithoutOutputs) {
  tt::TempDir dir;
  auto r = run_cli("generate --mock --input " + q(dir / "nope.png") + " --out " + q(dir / "o.wav") + " --trace " +
                   q(dir / "t.json"));
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.output.find("error:"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "o.wav"));
  EXPECT_FALSE(fs::exists(dir / "t.json"));

  tt::write_bytes(dir / "bad.png", to_bytes("\x89PNG\r\n\x1a\n garbage"));
  r = run_cli("generate --mock --input " + q(dir / "bad.png") + " --out " + q(dir / "o.wav"));
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.output.find("stage caption"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir / "o.wav"));
}

TEST(Cli, NoBackendsConfiguredIsDomainError) {
  tt::TempDir dir;
  tt::write_bytes(dir / "in.png", tt::red_pixel_png());
  auto r = run_cli("generate --input " + q(dir / "in.png") + " --out " + q(dir / "o.wav"));
  EXPECT_EQ(r.exit_code, 1);
}

TEST(Cli, EvalAllMetricsWithMarkdown) {
  tt::TempDir dir;
  auto manifest = write_manifest(dir);
  auto r = run_cli("eval --mock --manifest " + q(manifest) + " --format md --out " + q(dir / "out" / "report"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  auto j = json::parse(read_text_file(dir / "out" / "report.json"));
  EXPECT_EQ(j["systems"].size(), 2u);
  EXPECT_TRUE(j["systems"]["ours"].contains("fad"));
  EXPECT_TRUE(j["systems"]["ours"].contains("kl"));
  EXPECT_TRUE(j["systems"]["ours"].contains("ib_rank"));
  auto md = read_text_file(dir / "out" / "report.md");
  EXPECT_EQ(md.substr(0, md.find('\n')), "| Model | FAD↓ | KL↓ | IB Rank↑ |");
}

TEST(Cli, EvalKlOnly) {
  tt::TempDir dir;
  auto manifest = write_manifest(dir);
  auto r = run_cli("eval --mock --metrics kl --manifest " + q(manifest) + " --out " + q(dir / "r"));
  ASSERT_EQ(r.exit_code, 0) << r.output;
  auto j = json::parse(read_text_file(dir / "r.json"));
  EXPECT_EQ(j["metrics"], json({"kl"}));
  EXPECT_FALSE(j["systems"]["ours"].contains("fad"));
}

TEST(Cli, EvalErrors) {
  tt::TempDir dir;
  auto manifest = write_manifest(dir, true);
  auto r = run_cli("eval --mock --manifest " + q(manifest) + " --out " + q(dir / "r"));
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.output.find("duplicate id"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir / "r.json"));
  EXPECT_EQ(run_cli("eval --mock --metrics bleu --manifest " + q(manifest)).exit_code, 1);
}

TEST(Cli, ServeAgainstMockBackendProcess) {
  tt::TempDir dir;
  Child mocks({"mock-backends", "--port", "0"}, dir / "mocks.log");
  int mock_port = mocks.port();
  ASSERT_GT(mock_port, 0) << mocks.log();
  auto url = "http://127.0.0.1:" + std::to_string(mock_port);

  std::vector<std::string> serve_args{"serve", "--port", "0", "--workspace", (dir / "ws").string()};
  for (const char* k : {"captioner", "llm", "music"}) serve_args.insert(serve_args.end(), {"--backend", std::string(k) + "=" + url});
  Child service(serve_args, dir / "serve.log");
  int port = service.port();
  ASSERT_GT(port, 0) << service.log();

  httplib::Client client("127.0.0.1", port);
  auto png = tt::red_pixel_png();
  httplib::MultipartFormDataItems items{{"media", std::string(png.begin(), png.end()), "a.png", "image/png"},
                                        {"duration", "0.5", "", ""}};
  auto res = client.Post("/api/jobs", items);
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 202);
  auto id = json::parse(res->body)["job_id"].get<std::string>();
  json job;
  for (int i = 0; i < 250; ++i) {
    job = json::parse(client.Get("/api/jobs/" + id)->body);
    if (job["state"] == "done" || job["state"] == "failed") break;
    std::this_thread::sleep_for(20ms);
  }
  ASSERT_EQ(job["state"], "done") << job.dump();
  EXPECT_EQ(job["caption"], mock::caption(png));
  auto audio = client.Get("/api/jobs/" + id + "/audio");
  EXPECT_EQ(decode_wav(as_bytes(audio->body)).duration(), 0.5);

  // A second server on the same port must fail to bind.
  Child clash({"mock-backends", "--port", std::to_string(mock_port)}, dir / "clash.log");
  EXPECT_NE(clash.wait_exit(), 0);
  EXPECT_NE(clash.log().find("cannot bind"), std::string::npos);

  EXPECT_EQ(service.interrupt_and_wait(), 0);
  EXPECT_EQ(mocks.interrupt_and_wait(), 0);
  EXPECT_TRUE(fs::exists(dir / "ws" / "jobs" / id / "trace.json"));
}

TEST(Cli, ShippedConfigsParse) {
  auto dir = fs::path(TONEBRIDGE_GOLDEN_DIR).parent_path().parent_path() / "examples" / "usage";
  auto mock = load_config(dir / "config.mock.json");
  EXPECT_EQ(mock.backends.size(), 5u);
  for (const auto& [_, b] : mock.backends) EXPECT_TRUE(b.is_mock());
  auto real = load_config(dir / "config.example.json");
  EXPECT_EQ(real.backends.at(BackendKind::llm).auth_env_var, "OPENAI_API_KEY");
  EXPECT_EQ(real.workspace_dir, dir / "workspace");

  tt::TempDir tmp;
  tt::write_bytes(tmp / "in.png", tt::red_pixel_png());
  auto r = run_cli("generate --config " + q(dir / "config.mock.json") + " --duration 0.5 --input " + q(tmp / "in.png") +
                   " --out " + q(tmp / "o.wav"));
  EXPECT_EQ(r.exit_code, 0) << r.output;
}
