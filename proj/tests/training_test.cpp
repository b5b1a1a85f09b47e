#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "testutil.hpp"
#include "vdiff/config.hpp"
#include "vdiff/eval.hpp"
#include "vdiff/losses.hpp"
#include "vdiff/metrics.hpp"
#include "vdiff/model.hpp"
#include "vdiff/training.hpp"

using namespace vdiff;
using namespace vdiff::train;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("vdiff_test_" + name)).string();
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Config micro_config() {
  Config cfg = Config::with_defaults();
  cfg.set("model.base_channels", "4");
  cfg.set("model.n1", "1");
  cfg.set("model.n2", "1");
  cfg.set("model.latent_cprime", "2");
  cfg.set("model.eps_hidden", "16");
  cfg.set("model.embed_dim", "8");
  cfg.set("model.enc_base", "4");
  cfg.set("model.enc_cap", "8");
  cfg.set("model.wbpf_resblocks", "1");
  cfg.set("model.frame_h", "8");
  cfg.set("model.frame_w", "8");
  return cfg;
}

std::vector<data::Clip> micro_clips(int n = 2, int frames = 2, int hw = 8) {
  data::BlurDatasetSpec spec;
  spec.clips = n;
  spec.frames = frames;
  spec.height = hw;
  spec.width = hw;
  spec.blur_window = 3;
  spec.seed = 99;
  std::vector<data::Clip> clips;
  for (int i = 0; i < n; ++i) {
    auto [blur, gt] = data::synthesize_clip(spec, i);
    clips.push_back({"clip_" + std::to_string(i), data::quantize_video(blur),
                     data::quantize_video(gt)});
  }
  return clips;
}

TrainStageConfig micro_train(int stage, int steps, std::uint64_t seed = 5) {
  TrainStageConfig t;
  t.stage = stage;
  t.steps = steps;
  t.seq_len = 2;
  t.seed = seed;
  t.lr = 2e-3;
  t.msfr_scales = 2;
  return t;
}

}  // namespace

TEST(L1Loss, TrivialAndClosedForm) {
  RandomSource rng(501);
  Tensor a = rng.uniform_tensor({2, 3, 4, 4});
  EXPECT_DOUBLE_EQ(l1_loss(constant(a), constant(a)).tensor()[0], 0.0);

  const double d = 0.37;
  Tensor b = a;
  for (std::int64_t i = 0; i < b.numel(); ++i) b[i] += d;
  // Per-frame mean |d| summed over 2 frames.
  EXPECT_NEAR(l1_loss(constant(b), constant(a)).tensor()[0], 2.0 * d, 1e-12);
}

TEST(L1Loss, GradientIsSignOverFrameElements) {
  RandomSource rng(503);
  Tensor a = rng.normal_tensor({2, 1, 3, 3});
  Tensor b = rng.normal_tensor({2, 1, 3, 3});
  Value av = parameter(a, "a");
  Value loss = l1_loss(av, constant(b));
  backward(loss);
  const double per_frame = 9.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double sign = a[i] > b[i] ? 1.0 : (a[i] < b[i] ? -1.0 : 0.0);
    EXPECT_DOUBLE_EQ(av.grad()[i], sign / per_frame);
  }
}

TEST(MsfrLoss, TrivialAndDcShift) {
  RandomSource rng(509);
  Tensor a = rng.uniform_tensor({2, 3, 8, 8});
  EXPECT_DOUBLE_EQ(msfr_loss(constant(a), constant(a), 3).tensor()[0], 0.0);

  // Adding a constant moves only the DC bin: each scale contributes
  // (1/t_k) * |c| * t_k per channel, i.e. |c| * channels per frame and scale.
  const double c = 0.21;
  Tensor b = a;
  for (std::int64_t i = 0; i < b.numel(); ++i) b[i] += c;
  const double expected = 2.0 * 3.0 * 3.0 * c;  // frames * scales * channels * |c|
  EXPECT_NEAR(msfr_loss(constant(b), constant(a), 3).tensor()[0], expected, 1e-9);
}

TEST(MsfrLoss, RejectsOverDeepPyramid) {
  RandomSource rng(511);
  Tensor a = rng.uniform_tensor({1, 1, 2, 2});
  Tensor b = rng.uniform_tensor({1, 1, 2, 2});
  // 2 -> 1 is fine; asking for a scale below that must be rejected.
  EXPECT_NO_THROW(msfr_loss(constant(a), constant(b), 2));
  EXPECT_THROW(msfr_loss(constant(a), constant(b), 3), std::invalid_argument);
}

TEST(MsfrLoss, GradMatchesFiniteDifferences) {
  RandomSource rng(521);
  Value a = parameter(rng.uniform_tensor({1, 2, 4, 4}), "a");
  Value b = constant(rng.uniform_tensor({1, 2, 4, 4}));
  auto loss = [&] { return msfr_loss(a, b, 2); };
  auto rep = vdtest::gradcheck(loss, {a});
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.worst;
}

TEST(DeblurLoss, DegenerateWeightAndComposition) {
  RandomSource rng(523);
  Tensor a = rng.uniform_tensor({2, 3, 4, 4});
  Tensor b = rng.uniform_tensor({2, 3, 4, 4});
  EXPECT_DOUBLE_EQ(deblur_loss(constant(a), constant(a), 0.1, 2).tensor()[0], 0.0);
  EXPECT_DOUBLE_EQ(deblur_loss(constant(a), constant(b), 0.0, 2).tensor()[0],
                   l1_loss(constant(a), constant(b)).tensor()[0]);
  const double composed = l1_loss(constant(a), constant(b)).tensor()[0] +
                          0.1 * msfr_loss(constant(a), constant(b), 2).tensor()[0];
  EXPECT_NEAR(deblur_loss(constant(a), constant(b), 0.1, 2).tensor()[0], composed, 1e-12);
  EXPECT_THROW(deblur_loss(constant(a), constant(b), -0.1, 2), std::invalid_argument);
}

TEST(TotalLoss, Composition) {
  RandomSource rng(527);
  Tensor a = rng.uniform_tensor({2, 3, 4, 4});
  Tensor b = rng.uniform_tensor({2, 3, 4, 4});
  Tensor z1 = rng.normal_tensor({2, 6});
  Tensor z2 = rng.normal_tensor({2, 6});
  EXPECT_DOUBLE_EQ(
      total_loss(constant(a), constant(a), constant(z1), constant(z1), 0.1, 2).tensor()[0], 0.0);
  const double expect = deblur_loss(constant(a), constant(b), 0.1, 2).tensor()[0] +
                        latent_l1_loss(constant(z1), constant(z2)).tensor()[0];
  EXPECT_NEAR(total_loss(constant(a), constant(b), constant(z1), constant(z2), 0.1, 2).tensor()[0],
              expect, 1e-12);
}

TEST(Metrics, PsnrClosedFormsAndInfinity) {
  Tensor a = Tensor::zeros({1, 1, 4, 4});
  EXPECT_TRUE(std::isinf(psnr(a, a, 1.0)));
  Tensor b = Tensor::full({1, 1, 4, 4}, 0.1);  // MSE = 0.01
  EXPECT_NEAR(psnr(a, b, 1.0), 20.0, 1e-9);
  EXPECT_THROW(psnr(a, b, 0.0), std::invalid_argument);
}

TEST(Metrics, SsimIdentityAndSymmetry) {
  RandomSource rng(531);
  Tensor a = rng.uniform_tensor({2, 3, 16, 16});
  Tensor b = rng.uniform_tensor({2, 3, 16, 16});
  EXPECT_NEAR(ssim(a, a, 1.0), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(ssim(a, b, 1.0), ssim(b, a, 1.0));
  EXPECT_LT(ssim(a, b, 1.0), 1.0);
}

TEST(Optimizer, ZeroLearningRateLeavesParametersBitIdentical) {
  RandomSource rng(541);
  ParamStore store;
  Value p = store.add("p", rng.normal_tensor({5}));
  const Tensor before = p.tensor();
  AdamW opt(AdamWConfig{0.0, 0.9, 0.999, 1e-8, 4e-5});
  Gradient g = grad(sum_all(mul(p, p)), store);
  opt.step(store, {"p"}, g);
  EXPECT_EQ(vdtest::max_abs_diff(p.tensor(), before), 0.0);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  RandomSource rng(547);
  Checkpoint c;
  c.stage = 2;
  c.step = 123;
  c.config_text = "model.base_channels=4\n";
  c.rng_state = rng.serialize();
  c.params.emplace("a.k", rng.normal_tensor({2, 3}));
  c.params.emplace("b.k", rng.normal_tensor({4}));
  c.opt_step = 7;
  c.opt_moments.emplace("a.k",
                        std::make_pair(rng.normal_tensor({2, 3}), rng.normal_tensor({2, 3})));
  const std::string p1 = temp_path("ckpt1.bin"), p2 = temp_path("ckpt2.bin");
  c.save(p1);
  Checkpoint loaded = Checkpoint::load(p1);
  loaded.save(p2);
  EXPECT_EQ(read_bytes(p1), read_bytes(p2));
  EXPECT_EQ(loaded.stage, 2u);
  EXPECT_EQ(loaded.step, 123u);
  EXPECT_EQ(loaded.rng_state, c.rng_state);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(Checkpoint, RejectsUnknownVersionAndGarbage) {
  RandomSource rng(557);
  Checkpoint c;
  c.stage = 1;
  c.params.emplace("p", rng.normal_tensor({2}));
  const std::string path = temp_path("ckpt_bad.bin");
  c.save(path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint32_t bad = 999;
    f.write(reinterpret_cast<const char*>(&bad), 4);
  }
  EXPECT_THROW(Checkpoint::load(path), std::runtime_error);
  std::ofstream(path, std::ios::trunc) << "not a checkpoint";
  EXPECT_THROW(Checkpoint::load(path), std::runtime_error);
  std::filesystem::remove(path);
}

TEST(TrainStage, RejectsEmptyDatasetAndBadStage) {
  Config cfg = micro_config();
  Model model = Model::build(cfg);
  TrainStageConfig t = micro_train(1, 2);
  TrainState state(t);
  EXPECT_THROW(train_stage(model, {}, t, state, nullptr), std::invalid_argument);
  EXPECT_THROW(model.trainable_names(4), std::invalid_argument);
}

TEST(TrainStage, StageOneDecreasesLossDeterministically) {
  auto clips = micro_clips();
  std::vector<double> trace1, trace2;
  for (auto* trace : {&trace1, &trace2}) {
    Model model = Model::build(micro_config());
    TrainStageConfig t = micro_train(1, 25);
    TrainState state(t);
    train_stage(model, clips, t, state, [&](const StepLog& log) {
      ASSERT_TRUE(std::isfinite(log.loss));
      trace->push_back(log.loss);
    });
  }
  ASSERT_EQ(trace1.size(), 25u);
  // Bit-identical across reruns with the same seed.
  for (std::size_t i = 0; i < trace1.size(); ++i) ASSERT_EQ(trace1[i], trace2[i]);
  // Converging: the tail mean clearly under the head mean.
  const double head = (trace1[0] + trace1[1] + trace1[2]) / 3.0;
  double tail = 0.0;
  for (std::size_t i = trace1.size() - 3; i < trace1.size(); ++i) tail += trace1[i];
  tail /= 3.0;
  EXPECT_LT(tail, head);
}

TEST(TrainStage, StagesTwoAndThreeRunAndImprove) {
  auto clips = micro_clips();
  Model model = Model::build(micro_config());
  TrainStageConfig t1 = micro_train(1, 10);
  TrainState s1(t1);
  train_stage(model, clips, t1, s1, nullptr);

  TrainStageConfig t2 = micro_train(2, 20);
  std::vector<double> trace2;
  TrainState s2(t2);
  train_stage(model, clips, t2, s2,
              [&](const StepLog& log) { trace2.push_back(log.loss); });
  ASSERT_EQ(trace2.size(), 20u);
  for (double v : trace2) ASSERT_TRUE(std::isfinite(v));
  EXPECT_LT(trace2.back(), trace2.front());

  TrainStageConfig t3 = micro_train(3, 5);
  TrainState s3(t3);
  std::vector<double> trace3;
  train_stage(model, clips, t3, s3,
              [&](const StepLog& log) { trace3.push_back(log.loss); });
  ASSERT_EQ(trace3.size(), 5u);
  for (double v : trace3) ASSERT_TRUE(std::isfinite(v));
}

TEST(TrainStage, ResumeReproducesUnbrokenTrace) {
  auto clips = micro_clips();
  const int total = 12, half = 6;
  std::vector<double> unbroken;
  {
    Model model = Model::build(micro_config());
    TrainStageConfig t = micro_train(1, total, 17);
    TrainState state(t);
    train_stage(model, clips, t, state,
                [&](const StepLog& log) { unbroken.push_back(log.loss); });
  }
  const std::string path = temp_path("resume.ckpt");
  {
    Model model = Model::build(micro_config());
    TrainStageConfig t = micro_train(1, half, 17);
    TrainState state(t);
    train_stage(model, clips, t, state, nullptr);
    make_checkpoint(model, state, 1).save(path);
  }
  std::vector<double> resumed;
  {
    Model model = Model::build(micro_config());
    Checkpoint c = Checkpoint::load(path);
    restore_model(model, c);
    TrainStageConfig t = micro_train(1, total, 17);
    TrainState state(t);
    restore_train_state(state, c);
    EXPECT_EQ(state.completed_steps, static_cast<std::uint64_t>(half));
    train_stage(model, clips, t, state,
                [&](const StepLog& log) { resumed.push_back(log.loss); });
  }
  ASSERT_EQ(resumed.size(), static_cast<std::size_t>(total - half));
  for (int i = 0; i < total - half; ++i)
    ASSERT_EQ(resumed[static_cast<std::size_t>(i)], unbroken[static_cast<std::size_t>(half + i)])
        << "diverged at resumed step " << i;
}

TEST(Eval, IdentityModelEqualsBaselineAndGtIsPerfect) {
  auto clips = micro_clips();
  Model model = Model::build(micro_config());  // untrained: zero final conv + residual
  EvalOptions opt;
  opt.seq_len = 2;
  opt.prior = PriorSource::sampled;
  EvalResult r = evaluate(model, clips, opt);
  EvalResult base = baseline(clips);
  ASSERT_EQ(r.per_clip.size(), base.per_clip.size());
  for (std::size_t i = 0; i < r.per_clip.size(); ++i)
    EXPECT_DOUBLE_EQ(r.per_clip[i].psnr, base.per_clip[i].psnr);

  // Evaluating ground truth against itself.
  for (const auto& clip : clips) {
    EXPECT_TRUE(std::isinf(psnr(clip.gt, clip.gt, 1.0)));
    EXPECT_NEAR(ssim(clip.gt, clip.gt, 1.0), 1.0, 1e-12);
  }
}

TEST(Eval, ThreadCountDoesNotChangeResults) {
  auto clips = micro_clips(3);
  Model model = Model::build(micro_config());
  EvalOptions one;
  one.seq_len = 2;
  one.threads = 1;
  EvalOptions four = one;
  four.threads = 4;
  EvalResult a = evaluate(model, clips, one);
  EvalResult b = evaluate(model, clips, four);
  for (std::size_t i = 0; i < a.per_clip.size(); ++i) {
    ASSERT_EQ(a.per_clip[i].psnr, b.per_clip[i].psnr);
    ASSERT_EQ(a.per_clip[i].ssim, b.per_clip[i].ssim);
  }
}
