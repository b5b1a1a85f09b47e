#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "vdiff/datakit.hpp"
#include "vdiff/diffusion.hpp"
#include "vdiff/metrics.hpp"
#include "vdiff/model.hpp"

namespace vdiff::train {

enum class PriorSource {
  sampled,     // CE + full reverse process (stages two and three)
  gt_encoder,  // LE on ground truth (stage-one checkpoints)
  zeros,       // ablation: no prior
};

struct EvalOptions {
  int seq_len = 4;
  std::uint64_t seed = 0;
  int diffusion_steps = 0;  // 0: the model's configured schedule
  PriorSource prior = PriorSource::sampled;
  int threads = 1;
};

inline Tensor clamp01(Tensor t) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = std::max(0.0, std::min(1.0, t[i]));
  return t;
}

/// Deblurs one clip in non-overlapping windows of opt.seq_len frames.
/// `gt` is consulted only for PriorSource::gt_encoder.
inline Tensor restore_clip(const Model& model, const Tensor& blur, const Tensor& gt,
                           const EvalOptions& opt, std::uint64_t clip_seed) {
  const int frames = blur.extent(0);
  diffusion::NoiseSchedule schedule =
      opt.diffusion_steps > 0
          ? diffusion::NoiseSchedule::linear(opt.diffusion_steps, model.mc.beta_start,
                                             model.mc.beta_end)
          : model.schedule;
  Tensor out(blur.shape());
  int start = 0, window_index = 0;
  while (start < frames) {
    const int len = std::min(opt.seq_len, frames - start);
    Tensor blur_w = data::window_frames(blur, start, len);
    Value blur_v = constant(blur_w);
    Value zprime;
    switch (opt.prior) {
      case PriorSource::sampled: {
        Value cond = model.cond_latent(blur_v);
        auto sampled = diffusion::sample_prior(
            cond, schedule, model.eps,
            data::detail::mix_seed(clip_seed, static_cast<std::uint64_t>(window_index)));
        zprime = sampled.values;
        break;
      }
      case PriorSource::gt_encoder:
        zprime = model.gt_latent(constant(data::window_frames(gt, start, len)));
        break;
      case PriorSource::zeros:
        zprime = constant(Tensor::zeros({len, model.mc.latent_dim()}));
        break;
    }
    Value restored = model.restore(blur_v, zprime);
    const Tensor& r = restored.tensor();
    const std::int64_t frame_elems = r.numel() / len;
    for (int t = 0; t < len; ++t)
      for (std::int64_t i = 0; i < frame_elems; ++i)
        out[(start + t) * frame_elems + i] = r[t * frame_elems + i];
    start += len;
    ++window_index;
  }
  return clamp01(std::move(out));
}

struct ClipMetrics {
  std::string clip;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalResult {
  std::vector<ClipMetrics> per_clip;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

inline EvalResult summarize(std::vector<ClipMetrics> rows) {
  EvalResult r;
  r.per_clip = std::move(rows);
  if (r.per_clip.empty()) return r;
  for (const auto& m : r.per_clip) {
    r.mean_psnr += m.psnr;
    r.mean_ssim += m.ssim;
  }
  r.mean_psnr /= static_cast<double>(r.per_clip.size());
  r.mean_ssim /= static_cast<double>(r.per_clip.size());
  return r;
}

/// Per-clip PSNR/SSIM of the restored output against ground truth. Clips are
/// independent; the per-clip seed depends only on the clip index, so results
/// do not change with the worker count.
inline EvalResult evaluate(const Model& model, const std::vector<data::Clip>& clips,
                           const EvalOptions& opt) {
  if (clips.empty()) throw std::invalid_argument("evaluate: no clips");
  std::vector<ClipMetrics> rows(clips.size());
  const int workers = std::max(1, std::min<int>(opt.threads, static_cast<int>(clips.size())));
  auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& clip = clips[i];
      Tensor restored = restore_clip(model, clip.blur, clip.gt, opt,
                                     data::detail::mix_seed(opt.seed, static_cast<std::uint64_t>(i)));
      rows[i] = {clip.name, psnr(restored, clip.gt, 1.0), ssim(restored, clip.gt, 1.0)};
    }
  };
  if (workers == 1) {
    run_range(0, clips.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (clips.size() + workers - 1) / static_cast<std::size_t>(workers);
    for (int w = 0; w < workers; ++w) {
      const std::size_t begin = static_cast<std::size_t>(w) * chunk;
      const std::size_t end = std::min(clips.size(), begin + chunk);
      if (begin < end) pool.emplace_back(run_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return summarize(std::move(rows));
}

/// PSNR/SSIM of the blurry input itself; the floor any restoration must beat.
inline EvalResult baseline(const std::vector<data::Clip>& clips) {
  std::vector<ClipMetrics> rows;
  rows.reserve(clips.size());
  for (const auto& clip : clips)
    rows.push_back({clip.name, psnr(clip.blur, clip.gt, 1.0), ssim(clip.blur, clip.gt, 1.0)});
  return summarize(std::move(rows));
}

struct AblateRow {
  std::string variant;
  double psnr = 0.0;
  double ssim = 0.0;
};

/// Ablation battery: full model, prior replaced by zeros, and an inference
/// sweep over the reverse-process step count.
inline std::vector<AblateRow> ablate(const Model& model, const std::vector<data::Clip>& clips,
                                     const EvalOptions& base, const std::vector<int>& step_sweep) {
  std::vector<AblateRow> rows;
  EvalOptions full = base;
  full.prior = PriorSource::sampled;
  EvalResult r = evaluate(model, clips, full);
  rows.push_back({"full", r.mean_psnr, r.mean_ssim});
  EvalOptions zero = base;
  zero.prior = PriorSource::zeros;
  r = evaluate(model, clips, zero);
  rows.push_back({"no_prior", r.mean_psnr, r.mean_ssim});
  for (int steps : step_sweep) {
    EvalOptions sweep = base;
    sweep.prior = PriorSource::sampled;
    sweep.diffusion_steps = steps;
    r = evaluate(model, clips, sweep);
    rows.push_back({"steps_" + std::to_string(steps), r.mean_psnr, r.mean_ssim});
  }
  return rows;
}

}  // namespace vdiff::train
