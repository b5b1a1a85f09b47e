#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vdiff/checkpoint.hpp"
#include "vdiff/datakit.hpp"
#include "vdiff/losses.hpp"
#include "vdiff/model.hpp"
#include "vdiff/optimizer.hpp"
#include "vdiff/random.hpp"

namespace vdiff::train {

struct TrainStageConfig {
  int stage = 1;
  double lambda_msfr = 0.1;
  int msfr_scales = 3;
  double lr = 2e-3;
  double weight_decay = 4e-5;
  int batch_size = 1;
  int steps = 300;
  int seq_len = 4;
  std::uint64_t seed = 0;

  void validate() const {
    if (stage < 1 || stage > 3) throw std::invalid_argument("train config: stage must be 1..3");
    if (lambda_msfr < 0.0) throw std::invalid_argument("train config: lambda must be >= 0");
    if (msfr_scales < 1) throw std::invalid_argument("train config: MSFR scales must be >= 1");
    if (batch_size < 1 || steps < 1 || seq_len < 1)
      throw std::invalid_argument("train config: batch size, steps and sequence length must be >= 1");
  }
};

/// Mutable training state; checkpointing serializes all three pieces so a
/// resumed run continues the exact trajectory.
struct TrainState {
  AdamW opt;
  RandomSource rng;
  std::uint64_t completed_steps = 0;

  TrainState(const TrainStageConfig& cfg)
      : opt(AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}), rng(cfg.seed) {}
};

struct StepLog {
  std::uint64_t step = 0;
  double loss = 0.0;
  std::vector<std::pair<std::string, double>> components;
};

namespace detail {

struct BatchItem {
  Tensor blur, gt;
};

/// Draws one training window: clip, frame window, flip augmentation. The
/// draw order is fixed so a given RNG state always yields the same batch.
inline BatchItem draw_item(const std::vector<data::Clip>& clips, int seq_len, RandomSource& rng) {
  const auto& clip = clips[static_cast<std::size_t>(rng.below(clips.size()))];
  const int frames = clip.frames();
  const int len = std::min(seq_len, frames);
  const int start = frames > len ? static_cast<int>(rng.below(static_cast<std::uint64_t>(frames - len + 1))) : 0;
  const bool flip_h = rng.coin();
  const bool flip_v = rng.coin();
  BatchItem item;
  item.blur = data::flip_video(data::window_frames(clip.blur, start, len), flip_h, flip_v);
  item.gt = data::flip_video(data::window_frames(clip.gt, start, len), flip_h, flip_v);
  return item;
}

}  // namespace detail

/// Runs stage-specific optimization from state.completed_steps to cfg.steps.
/// Stage one: LE + WADT on the deblurring loss with the ground-truth latent.
/// Stage two: CE + predictor through the full reverse sampler on the latent
/// loss. Stage three: joint objective. Per-step logs go to `on_step`.
inline void train_stage(Model& model, const std::vector<data::Clip>& train_clips,
                        const TrainStageConfig& cfg, TrainState& state,
                        const std::function<void(const StepLog&)>& on_step) {
  cfg.validate();
  if (train_clips.empty()) throw std::invalid_argument("train: dataset is empty");
  const auto trainable = model.trainable_names(cfg.stage);
  const int D = model.mc.latent_dim();

  for (std::uint64_t step = state.completed_steps + 1; step <= static_cast<std::uint64_t>(cfg.steps);
       ++step) {
    Value batch_loss;
    StepLog log;
    log.step = step;
    auto accumulate = [&](const char* name, const Value& v) {
      for (auto& [n, total] : log.components)
        if (n == name) {
          total += v.tensor()[0] / cfg.batch_size;
          return;
        }
      log.components.emplace_back(name, v.tensor()[0] / cfg.batch_size);
    };

    for (int b = 0; b < cfg.batch_size; ++b) {
      auto item = detail::draw_item(train_clips, cfg.seq_len, state.rng);
      Value blur = constant(item.blur);
      Value gt = constant(item.gt);
      Value item_loss;
      if (cfg.stage == 1) {
        Value z = model.gt_latent(gt);
        Value out = model.restore(blur, z);
        Value l1 = l1_loss(out, gt);
        Value msfr = msfr_loss(out, gt, cfg.msfr_scales);
        item_loss = add(l1, mul_scalar(msfr, cfg.lambda_msfr));
        accumulate("l1", l1);
        accumulate("msfr", msfr);
      } else {
        // LE is frozen past stage one; its output is detached as the target.
        Value z_target = constant(model.gt_latent(gt).tensor());
        Value cond = model.cond_latent(blur);
        const Tensor z_T = state.rng.normal_tensor({item.blur.extent(0), D});
        auto sampled = diffusion::sample_prior_from_noise(cond, model.schedule, model.eps, z_T);
        Value l_diff = latent_l1_loss(z_target, sampled.values);
        if (cfg.stage == 2) {
          item_loss = l_diff;
          accumulate("diff", l_diff);
        } else {
          Value out = model.restore(blur, sampled.values);
          Value l_deblur = deblur_loss(out, gt, cfg.lambda_msfr, cfg.msfr_scales);
          item_loss = add(l_deblur, l_diff);
          accumulate("deblur", l_deblur);
          accumulate("diff", l_diff);
        }
      }
      batch_loss = batch_loss.defined() ? add(batch_loss, item_loss) : item_loss;
    }
    if (cfg.batch_size > 1) batch_loss = mul_scalar(batch_loss, 1.0 / cfg.batch_size);

    model.store.zero_grad();
    Gradient g = grad(batch_loss, model.store);
    state.opt.step(model.store, trainable, g);
    state.completed_steps = step;

    log.loss = batch_loss.tensor()[0];
    if (on_step) on_step(log);
  }
}

/// Assembles a checkpoint from the model and training state.
inline Checkpoint make_checkpoint(const Model& model, const TrainState& state, int stage) {
  Checkpoint c;
  c.stage = static_cast<std::uint32_t>(stage);
  c.step = state.completed_steps;
  c.config_text = model.config_text;
  c.rng_state = state.rng.serialize();
  c.params = model.snapshot_params();
  c.opt_step = state.opt.step_count();
  c.opt_moments = state.opt.moments();
  return c;
}

/// Restores model parameters from a checkpoint (any stage).
inline void restore_model(Model& model, const Checkpoint& c) { model.load_params(c.params); }

/// Restores the full training state for a same-stage resume.
inline void restore_train_state(TrainState& state, const Checkpoint& c) {
  state.rng = RandomSource::deserialize(c.rng_state);
  state.opt.set_step_count(c.opt_step);
  state.opt.moments() = c.opt_moments;
  state.completed_steps = c.step;
}

}  // namespace vdiff::train
