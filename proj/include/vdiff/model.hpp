#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdiff/autodiff.hpp"
#include "vdiff/config.hpp"
#include "vdiff/diffusion.hpp"
#include "vdiff/random.hpp"
#include "vdiff/wadt.hpp"

namespace vdiff {

struct ModelConfig {
  wadt::WadtConfig backbone;
  int latent_cprime = 8;  // D = 4 * C'
  int wbpf_resblocks = 3;
  int enc_base = 16;
  int enc_cap = 64;
  int eps_hidden = 64;
  int embed_dim = 16;
  int frame_h = 32;
  int frame_w = 32;
  int diffusion_steps = 4;
  double beta_start = 0.1;
  double beta_end = 0.99;
  std::uint64_t init_seed = 1;

  int latent_dim() const { return 4 * latent_cprime; }

  static ModelConfig from_config(const Config& c) {
    ModelConfig m;
    m.backbone.base_channels = static_cast<int>(c.i64("model.base_channels"));
    m.backbone.heads = static_cast<int>(c.i64("model.heads"));
    m.backbone.n1 = static_cast<int>(c.i64("model.n1"));
    m.backbone.n2 = static_cast<int>(c.i64("model.n2"));
    m.backbone.global_residual = c.flag("model.global_residual");
    m.latent_cprime = static_cast<int>(c.i64("model.latent_cprime"));
    m.backbone.prior_dim = m.latent_dim();
    m.wbpf_resblocks = static_cast<int>(c.i64("model.wbpf_resblocks"));
    m.enc_base = static_cast<int>(c.i64("model.enc_base"));
    m.enc_cap = static_cast<int>(c.i64("model.enc_cap"));
    m.eps_hidden = static_cast<int>(c.i64("model.eps_hidden"));
    m.embed_dim = static_cast<int>(c.i64("model.embed_dim"));
    m.frame_h = static_cast<int>(c.i64("model.frame_h"));
    m.frame_w = static_cast<int>(c.i64("model.frame_w"));
    m.init_seed = c.u64("model.init_seed");
    m.diffusion_steps = static_cast<int>(c.i64("diffusion.steps"));
    m.beta_start = c.dbl("diffusion.beta_start");
    m.beta_end = c.dbl("diffusion.beta_end");
    return m;
  }
};

/// The full trainable system: backbone (WADT + WBPF), latent and condition
/// encoders, the noise predictor, and the diffusion schedule.
struct Model {
  ModelConfig mc;
  ParamStore store;
  wadt::WadtParams backbone;
  diffusion::EncoderParams le, ce;
  diffusion::EpsNetParams eps;
  diffusion::NoiseSchedule schedule;
  std::string config_text;  // model/diffusion keys, embedded into checkpoints

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  static Model build(const Config& cfg) {
    Model m(ModelConfig::from_config(cfg));
    m.config_text = cfg.model_text();
    return m;
  }

  static Model from_checkpoint_config(const std::string& embedded_text) {
    Config cfg = Config::with_defaults();
    cfg.apply_text(embedded_text);
    return build(cfg);
  }

  explicit Model(const ModelConfig& cfg) : mc(cfg) {
    mc.backbone.validate();
    RandomSource rng(mc.init_seed);
    backbone = wadt::WadtParams::init(store, "wadt", rng, mc.backbone, mc.wbpf_resblocks);
    le = diffusion::EncoderParams::init(store, "le", rng, mc.frame_h, mc.frame_w, mc.enc_base,
                                        mc.enc_cap, mc.latent_dim());
    ce = diffusion::EncoderParams::init(store, "ce", rng, mc.frame_h, mc.frame_w, mc.enc_base,
                                        mc.enc_cap, mc.latent_dim());
    eps = diffusion::EpsNetParams::init(store, "eps", rng, mc.latent_dim(), mc.eps_hidden,
                                        mc.embed_dim);
    schedule = diffusion::NoiseSchedule::linear(mc.diffusion_steps, mc.beta_start, mc.beta_end);
  }

  /// Stage one trains the latent encoder with the backbone; stage two the
  /// condition encoder and noise predictor; stage three everything but the
  /// (frozen) latent encoder.
  std::vector<std::string> trainable_names(int stage) const {
    std::vector<std::string> prefixes;
    if (stage == 1)
      prefixes = {"le.", "wadt."};
    else if (stage == 2)
      prefixes = {"ce.", "eps."};
    else if (stage == 3)
      prefixes = {"ce.", "eps.", "wadt."};
    else
      throw std::invalid_argument("model: stage must be 1, 2 or 3");
    std::vector<std::string> names;
    for (const auto& [name, v] : store)
      for (const auto& p : prefixes)
        if (name.rfind(p, 0) == 0) {
          names.push_back(name);
          break;
        }
    return names;
  }

  std::map<std::string, Tensor> snapshot_params() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : store) out.emplace(name, v.tensor());
    return out;
  }

  void load_params(const std::map<std::string, Tensor>& params) {
    if (params.size() != store.size())
      throw std::runtime_error("model: checkpoint has " + std::to_string(params.size()) +
                               " parameters, model expects " + std::to_string(store.size()));
    for (const auto& [name, t] : params) {
      if (!store.has(name)) throw std::runtime_error("model: unexpected parameter '" + name + "'");
      Value v = store.at(name);
      if (!v.tensor().same_shape(t))
        throw std::runtime_error("model: parameter '" + name + "' shape mismatch");
      v.tensor_mut() = t;
    }
  }

  Value restore(const Value& blur, const Value& zprime) const {
    return wadt::wadt_forward(blur, zprime, backbone, mc.backbone);
  }

  Value gt_latent(const Value& gt) const { return diffusion::encode_latent(gt, le); }
  Value cond_latent(const Value& blur) const { return diffusion::encode_latent(blur, ce); }
};

}  // namespace vdiff
