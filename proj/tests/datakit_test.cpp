#include <gtest/gtest.h>

#include <filesystem>

#include "testutil.hpp"
#include "vdiff/config.hpp"
#include "vdiff/datakit.hpp"
#include "vdiff/metrics.hpp"

using namespace vdiff;
using namespace vdiff::data;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("vdiff_data_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

BlurDatasetSpec small_spec() {
  BlurDatasetSpec spec;
  spec.clips = 2;
  spec.frames = 3;
  spec.height = 16;
  spec.width = 16;
  spec.blur_window = 5;
  spec.seed = 7;
  return spec;
}

}  // namespace

TEST(Synthesize, DegenerateWindowEqualsSharp) {
  BlurDatasetSpec spec = small_spec();
  spec.blur_window = 1;
  auto [blur, gt] = synthesize_clip(spec, 0);
  EXPECT_EQ(vdtest::max_abs_diff(blur, gt), 0.0);
}

TEST(Synthesize, StaticSceneEqualsSharpForAnyWindow) {
  BlurDatasetSpec spec = small_spec();
  spec.velocity_min = 0.0;
  spec.velocity_max = 0.0;
  spec.blur_window = 9;
  auto [blur, gt] = synthesize_clip(spec, 1);
  EXPECT_EQ(vdtest::max_abs_diff(blur, gt), 0.0);
}

TEST(Synthesize, LongerWindowBlursMore) {
  BlurDatasetSpec spec3 = small_spec();
  spec3.blur_window = 3;
  BlurDatasetSpec spec9 = small_spec();
  spec9.blur_window = 9;
  auto [blur3, gt3] = synthesize_clip(spec3, 0);
  auto [blur9, gt9] = synthesize_clip(spec9, 0);
  // Same scene either way; only the averaging window changes.
  EXPECT_EQ(vdtest::max_abs_diff(gt3, gt9), 0.0);
  EXPECT_LT(train::psnr(blur9, gt9, 1.0), train::psnr(blur3, gt3, 1.0));
}

TEST(Synthesize, DeterministicAndInRange) {
  BlurDatasetSpec spec = small_spec();
  auto [b1, g1] = synthesize_clip(spec, 0);
  auto [b2, g2] = synthesize_clip(spec, 0);
  EXPECT_EQ(vdtest::max_abs_diff(b1, b2), 0.0);
  EXPECT_EQ(vdtest::max_abs_diff(g1, g2), 0.0);
  for (std::int64_t i = 0; i < b1.numel(); ++i) {
    ASSERT_GE(b1[i], 0.0);
    ASSERT_LE(b1[i], 1.0);
  }
  auto [b3, g3] = synthesize_clip(spec, 1);
  EXPECT_GT(vdtest::max_abs_diff(g1, g3), 0.0);
}

TEST(Synthesize, RejectsTinyResolution) {
  BlurDatasetSpec spec = small_spec();
  spec.height = 7;
  EXPECT_THROW(synthesize_clip(spec, 0), std::invalid_argument);
}

TEST(PngIo, QuantizedRoundTripIsExact) {
  auto dir = fresh_dir("png");
  RandomSource rng(606);
  Tensor video = rng.uniform_tensor({2, 3, 9, 13});
  Clip clip{"clip_rt", quantize_video(video), quantize_video(video)};
  save_clip(clip, dir.string());
  Clip back = load_clip(dir.string(), "clip_rt");
  EXPECT_EQ(vdtest::max_abs_diff(back.blur, clip.blur), 0.0);
  EXPECT_EQ(vdtest::max_abs_diff(back.gt, clip.gt), 0.0);
  std::filesystem::remove_all(dir);
}

TEST(PngIo, IdenticalPixelsGiveIdenticalBytes) {
  auto dir = fresh_dir("png_det");
  RandomSource rng(607);
  Tensor video = quantize_video(rng.uniform_tensor({1, 3, 8, 8}));
  write_png_rgb8((dir / "a.png").string(), 8, 8, frame_to_rgb8(video, 0));
  write_png_rgb8((dir / "b.png").string(), 8, 8, frame_to_rgb8(video, 0));
  std::ifstream fa(dir / "a.png", std::ios::binary), fb(dir / "b.png", std::ios::binary);
  std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  EXPECT_EQ(ba, bb);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, MissingGtDirectoryNamesTheClip) {
  auto dir = fresh_dir("missing_gt");
  RandomSource rng(608);
  Tensor video = quantize_video(rng.uniform_tensor({1, 3, 8, 8}));
  Clip clip{"clip_x", video, video};
  save_clip(clip, dir.string());
  std::filesystem::remove_all(dir / "clip_x" / "gt");
  try {
    load_clip(dir.string(), "clip_x");
    FAIL() << "expected rejection";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("clip_x"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST(Dataset, EmptyClipRejected) {
  auto dir = fresh_dir("empty_clip");
  std::filesystem::create_directories(dir / "clip_e" / "blur");
  std::filesystem::create_directories(dir / "clip_e" / "gt");
  EXPECT_THROW(load_clip(dir.string(), "clip_e"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, MismatchedFrameCountsRejected) {
  auto dir = fresh_dir("mismatch");
  RandomSource rng(609);
  Tensor two = quantize_video(rng.uniform_tensor({2, 3, 8, 8}));
  Clip clip{"clip_m", two, two};
  save_clip(clip, dir.string());
  std::filesystem::remove(dir / "clip_m" / "gt" / "00001.png");
  try {
    load_clip(dir.string(), "clip_m");
    FAIL() << "expected rejection";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("clip_m"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST(Dataset, ManifestRoundTripAndSplitLoading) {
  auto dir = fresh_dir("manifest");
  RandomSource rng(610);
  for (int i = 0; i < 3; ++i) {
    Tensor v = quantize_video(rng.uniform_tensor({2, 3, 8, 8}));
    save_clip({"clip_" + std::to_string(i), v, v}, dir.string());
  }
  write_manifest(dir.string(), {{"clip_0", 2, "train"},
                                {"clip_1", 2, "train"},
                                {"clip_2", 2, "eval"}});
  Dataset ds = load_dataset(dir.string());
  ASSERT_EQ(ds.train.size(), 2u);
  ASSERT_EQ(ds.eval.size(), 1u);
  EXPECT_EQ(ds.train[0].name, "clip_0");
  EXPECT_EQ(ds.eval[0].name, "clip_2");
  std::filesystem::remove_all(dir);
}

TEST(Augment, FlipsAreInvolutions) {
  RandomSource rng(611);
  Tensor v = rng.uniform_tensor({2, 3, 5, 7});
  EXPECT_EQ(vdtest::max_abs_diff(flip_video(flip_video(v, true, false), true, false), v), 0.0);
  EXPECT_EQ(vdtest::max_abs_diff(flip_video(flip_video(v, false, true), false, true), v), 0.0);
  EXPECT_EQ(vdtest::max_abs_diff(flip_video(flip_video(v, true, true), true, true), v), 0.0);
  EXPECT_GT(vdtest::max_abs_diff(flip_video(v, true, false), v), 0.0);
}

TEST(Config, UnknownKeysRejectedAndEchoStable) {
  Config cfg = Config::with_defaults();
  EXPECT_THROW(cfg.set("model.bogus", "1"), std::invalid_argument);
  cfg.set("model.base_channels", "16");
  EXPECT_EQ(cfg.i64("model.base_channels"), 16);
  const std::string echo1 = cfg.echo();
  Config cfg2 = Config::with_defaults();
  cfg2.set("model.base_channels", "16");
  EXPECT_EQ(echo1, cfg2.echo());
  EXPECT_THROW(cfg.i64("synth.velocity_min"), std::invalid_argument);  // not an integer
  EXPECT_DOUBLE_EQ(cfg.dbl("synth.velocity_min"), 1.0);
}
