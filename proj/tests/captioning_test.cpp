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

#include <random>

#include "test_support.hpp"
#include "tonebridge/captioning.hpp"

using namespace tonebridge;
namespace tt = tonebridge::testing;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected Error";
  return ErrorCode::io_error;
}

std::vector<Caption> frame_captions(std::initializer_list<const char*> texts) {
  std::vector<Caption> out;
  std::size_t i = 0;
  for (auto t : texts) out.push_back({t, CaptionSource::frame, i++, {}});
  return out;
}

}  // namespace

TEST(SampleIndices, WorkedExamples) {
  EXPECT_EQ(sample_indices(10, 5), (std::vector<std::size_t>{0, 2, 4, 6, 8}));
  EXPECT_EQ(sample_indices(3, 5), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(sample_indices(100, 8), (std::vector<std::size_t>{0, 12, 25, 37, 50, 62, 75, 87}));
  EXPECT_EQ(sample_indices(1, 8), (std::vector<std::size_t>{0}));
}

TEST(SampleIndices, RejectsEmptySourceAndZeroCount) {
  EXPECT_EQ(code_of([] { sample_indices(0, 4); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { sample_indices(4, 0); }), ErrorCode::invalid_argument);
}

TEST(SampleIndices, StrictlyIncreasingInRangeAndCountIsMin) {
  std::mt19937 gen(11);
  for (int trial = 0; trial < 2000; ++trial) {
    std::size_t total = 1 + gen() % 500;
    std::size_t n = 1 + gen() % 64;
    auto idx = sample_indices(total, n);
    ASSERT_EQ(idx.size(), std::min(total, n));
    EXPECT_EQ(idx.front(), 0u);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      EXPECT_LT(idx[i], total);
      if (i) {
        EXPECT_LT(idx[i - 1], idx[i]);
      }
    }
  }
}

TEST(CaptionImage, MockCaptionOfRedPixel) {
  auto png = tt::red_pixel_png();
  auto c = caption_image(png, mock::MockCaptioner{});
  EXPECT_EQ(c.text, "mock caption " + sha256_hex(png).substr(0, 8));
  EXPECT_EQ(c.source, CaptionSource::image);
  EXPECT_EQ(c.digest(), sha256_hex(c.text));
}

TEST(CaptionImage, CaptionerTextPassesThroughVerbatim) {
  const std::string castle =
      "a city with a tower and a castle in the background, a detailed matte painting, art nouveau, epic cityscape";
  tt::ScriptedCaptioner cap(castle);
  EXPECT_EQ(caption_image(tt::red_pixel_png(), cap).text, castle);
}

TEST(CaptionImage, BlankReplyIsEmptyCaption) {
  tt::ScriptedCaptioner cap(" \n\t ");
  EXPECT_EQ(code_of([&] { caption_image(tt::red_pixel_png(), cap); }), ErrorCode::empty_caption);
}

TEST(CaptionImage, UndecodableBytesNeverReachTheCaptioner) {
  tt::ScriptedCaptioner cap("never");
  Bytes junk = to_bytes("definitely not an image");
  EXPECT_EQ(code_of([&] { caption_image(junk, cap); }), ErrorCode::decode_error);
  Bytes truncated = tt::red_pixel_png();
  truncated.resize(truncated.size() / 2);
  EXPECT_EQ(code_of([&] { caption_image(truncated, cap); }), ErrorCode::decode_error);
  EXPECT_EQ(cap.calls(), 0);
}

TEST(CaptionFrames, KeepsFrameOrderUnderConcurrency) {
  tt::TempDir dir;
  DirectoryFrameSource src(tt::write_frame_dir(dir / "frames", 12));
  auto frames = sample_frames(src, 6);
  auto captions = caption_frames(frames, mock::MockCaptioner{});
  ASSERT_EQ(captions.size(), 6u);
  for (std::size_t i = 0; i < captions.size(); ++i) {
    EXPECT_EQ(captions[i].frame_index, i * 2);
    EXPECT_EQ(captions[i].text, mock::caption(frames[i].image));
    EXPECT_EQ(captions[i].source, CaptionSource::frame);
  }
  EXPECT_EQ(captions, caption_frames(frames, mock::MockCaptioner{}, false));
}

TEST(CaptionFrames, IdenticalFramesGiveIdenticalCaptions) {
  tt::TempDir dir;
  DirectoryFrameSource src(tt::write_frame_dir(dir / "frames", 5, true));
  auto captions = caption_frames(sample_frames(src, 5), mock::MockCaptioner{});
  for (const auto& c : captions) EXPECT_EQ(c.text, captions.front().text);
}

TEST(CaptionFrames, EmptyFrameListIsRejected) {
  EXPECT_EQ(code_of([] { caption_frames({}, mock::MockCaptioner{}); }), ErrorCode::invalid_argument);
}

TEST(CaptionFrames, BadFrameErrorNamesTheFrame) {
  std::vector<Frame> frames{{0, tt::red_pixel_png(), {}}, {3, to_bytes("junk"), {}}};
  try {
    caption_frames(frames, mock::MockCaptioner{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::decode_error);
    EXPECT_NE(e.detail().find("frame 3"), std::string::npos);
  }
}

TEST(DirectoryFrames, SortedListingAndErrors) {
  tt::TempDir dir;
  auto frames = tt::write_frame_dir(dir / "f", 3);
  tt::write_bytes(frames / "notes.txt", to_bytes("ignored"));
  DirectoryFrameSource src(frames);
  EXPECT_EQ(src.total_frames(), 3u);
  EXPECT_EQ(src.files().front().filename(), "frame_000000.png");
  EXPECT_EQ(src.read(2).index, 2u);
  EXPECT_EQ(src.digest(), DirectoryFrameSource(frames).digest());

  fs::create_directories(dir / "empty");
  EXPECT_EQ(code_of([&] { DirectoryFrameSource e(dir / "empty"); }), ErrorCode::decode_error);
  EXPECT_EQ(code_of([&] { DirectoryFrameSource e(dir / "missing"); }), ErrorCode::decode_error);
}

TEST(ExternalDecoder, RunsCommandAndReadsFrames) {
  tt::TempDir dir;
  auto src_frames = tt::write_frame_dir(dir / "src", 4);
  tt::write_bytes(dir / "clip.mp4", to_bytes("fake container"));
  std::string cmd = "cp " + shell_quote(src_frames.string()) + "/*.png {output_dir}/ && test -f {input} && test {frames} -eq 2";
  ExternalDecoderFrameSource ext(cmd, dir / "clip.mp4", dir / "work", 2);
  EXPECT_EQ(ext.total_frames(), 4u);

  EXPECT_EQ(code_of([&] { ExternalDecoderFrameSource e("false", dir / "clip.mp4", dir / "w2", 2); }),
            ErrorCode::decode_error);
  EXPECT_EQ(code_of([&] { ExternalDecoderFrameSource e("", dir / "clip.mp4", dir / "w3", 2); }),
            ErrorCode::decode_error);
}

TEST(DecoderCommand, QuotesPaths) {
  EXPECT_EQ(shell_quote("it's"), R"('it'\''s')");
  EXPECT_EQ(render_decoder_command("dec {input} {output_dir} {frames}", "/a b/c.mp4", "/out", 8),
            "dec '/a b/c.mp4' '/out' 8");
}

TEST(Aggregation, JoinsCaptionsWithNewlinesUnderTheTemplate) {
  auto caps = frame_captions({"first frame", "second frame", "third frame"});
  auto m = render_aggregation_messages(caps, tt::templates());
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].role, Role::system);
  EXPECT_EQ(m[0].content, tt::templates().get(TemplateId::video_aggregate).system_text);
  EXPECT_EQ(m[1].role, Role::user);
  EXPECT_EQ(m[1].content, "first frame\nsecond frame\nthird frame");
}

TEST(Aggregation, ExactlyOneCallAndParentDigests) {
  tt::ScriptedLlm llm([](const auto&) { return "  a summary  "; });
  auto caps = frame_captions({"a", "b", "c", "d", "e", "f", "g", "h"});
  auto agg = aggregate_captions(caps, llm, tt::templates());
  EXPECT_EQ(llm.calls().size(), 1u);
  EXPECT_EQ(agg.text, "a summary");
  EXPECT_EQ(agg.source, CaptionSource::video_aggregate);
  ASSERT_EQ(agg.parent_captions.size(), 8u);
  EXPECT_EQ(agg.parent_captions[7], sha256_hex("h"));
}

TEST(Aggregation, SingleCaptionStillCallsOnce) {
  tt::ScriptedLlm llm([](const auto&) { return "only"; });
  aggregate_captions(frame_captions({"lonely"}), llm, tt::templates());
  EXPECT_EQ(llm.calls().size(), 1u);
}

TEST(Aggregation, BlankReplyAndBadInputs) {
  tt::ScriptedLlm blank([](const auto&) { return "\n"; });
  EXPECT_EQ(code_of([&] { aggregate_captions(frame_captions({"x"}), blank, tt::templates()); }),
            ErrorCode::empty_caption);
  EXPECT_EQ(code_of([&] { aggregate_captions({}, blank, tt::templates()); }), ErrorCode::invalid_argument);
  std::vector<Caption> image_caption{{"x", CaptionSource::image, {}, {}}};
  EXPECT_EQ(code_of([&] { aggregate_captions(image_caption, blank, tt::templates()); }), ErrorCode::invalid_argument);
}
