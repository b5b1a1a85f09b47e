#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdiff/autodiff.hpp"
#include "vdiff/conv.hpp"
#include "vdiff/ops.hpp"
#include "vdiff/random.hpp"
#include "vdiff/wavelet.hpp"
#include "vdiff/wbpf.hpp"

namespace vdiff::wadt {

struct WadtConfig {
  int base_channels = 8;  // C
  int n1 = 2;
  int n2 = 1;
  int heads = 1;
  int prior_dim = 32;  // D, one vector per frame
  bool global_residual = true;
  double layernorm_eps = 1e-6;

  void validate() const {
    if (n1 < 1 || n2 < 1) throw std::invalid_argument("wadt config: N1 and N2 must be >= 1");
    if (heads < 1) throw std::invalid_argument("wadt config: heads must be >= 1");
    if (base_channels % (4 * heads) != 0)
      throw std::invalid_argument("wadt config: base channels must be divisible by 4*heads");
    if (prior_dim < 1) throw std::invalid_argument("wadt config: prior dimension must be >= 1");
  }
};

/// Per-frame prior projections of Eq-style modulation: scale and shift
/// vectors derived from the prior feature, broadcast over H x W.
struct ModulationParams {
  Value w_scale;  // [D, C]
  Value w_shift;  // [D, C]

  static ModulationParams init(ParamStore& store, const std::string& prefix, RandomSource& rng,
                               int prior_dim, int channels) {
    ModulationParams p;
    const double s = 1.0 / std::sqrt(static_cast<double>(prior_dim));
    p.w_scale = store.add(prefix + ".scale", rng.normal_tensor({prior_dim, channels}, s));
    p.w_shift = store.add(prefix + ".shift", rng.normal_tensor({prior_dim, channels}, s));
    return p;
  }
};

/// Channel-mixing 3D conv followed by depthwise 2D conv (shared across
/// frames); the projection used for Q, K, V and both feed-forward branches.
struct ProjectionParams {
  Value k3, b3;  // [C, C, 3,3,3], [C]
  Value k2, b2;  // [C, 1, 3, 3] depthwise, [C]

  static ProjectionParams init(ParamStore& store, const std::string& prefix, RandomSource& rng,
                               int channels) {
    ProjectionParams p;
    p.k3 = store.add(prefix + ".k3",
                     rng.normal_tensor({channels, channels, 3, 3, 3}, 1.0 / std::sqrt(27.0 * channels)));
    p.b3 = store.add(prefix + ".b3", Tensor::zeros({channels}));
    p.k2 = store.add(prefix + ".k2", rng.normal_tensor({channels, 1, 3, 3}, 1.0 / 3.0));
    p.b2 = store.add(prefix + ".b2", Tensor::zeros({channels}));
    return p;
  }
};

inline Value project(const Value& x, const ProjectionParams& p) {
  Value mixed = conv3d_video(x, p.k3, p.b3, Pad::same);
  const int c = x.tensor().extent(1);
  return conv2d(mixed, p.k2, p.b2, 1, Pad::same, c);
}

struct WadtLayerParams {
  ModulationParams msa_mod;
  ProjectionParams q, k, v;
  Value log_inv_temp;  // [heads]; 1/gamma = exp(log_inv_temp), so gamma > 0
  Value out_k, out_b;  // 1x1 output projection W_a
  ModulationParams ffn_mod;
  ProjectionParams ffn_gate, ffn_val;

  static WadtLayerParams init(ParamStore& store, const std::string& prefix, RandomSource& rng,
                              const WadtConfig& cfg) {
    const int c = cfg.base_channels;
    WadtLayerParams p;
    p.msa_mod = ModulationParams::init(store, prefix + ".msa.mod", rng, cfg.prior_dim, c);
    p.q = ProjectionParams::init(store, prefix + ".msa.q", rng, c);
    p.k = ProjectionParams::init(store, prefix + ".msa.k", rng, c);
    p.v = ProjectionParams::init(store, prefix + ".msa.v", rng, c);
    p.log_inv_temp = store.add(prefix + ".msa.temp", Tensor::zeros({cfg.heads}));
    p.out_k = store.add(prefix + ".msa.out.k",
                        rng.normal_tensor({c, c, 1, 1}, 1.0 / std::sqrt(static_cast<double>(c))));
    p.out_b = store.add(prefix + ".msa.out.b", Tensor::zeros({c}));
    p.ffn_mod = ModulationParams::init(store, prefix + ".ffn.mod", rng, cfg.prior_dim, c);
    p.ffn_gate = ProjectionParams::init(store, prefix + ".ffn.gate", rng, c);
    p.ffn_val = ProjectionParams::init(store, prefix + ".ffn.val", rng, c);
    return p;
  }
};

/// Prior-guided modulation: scale/shift vectors per frame applied to the
/// layer-normalized feature.
inline Value modulate(const Value& feature, const Value& prior, const ModulationParams& p,
                      double eps = 1e-6) {
  const Tensor& tf = feature.tensor();
  const Tensor& tz = prior.tensor();
  if (tf.rank() != 4) throw std::invalid_argument("modulate: feature must be [T,C,H,W]");
  if (tz.rank() != 2)
    throw std::invalid_argument("modulate: prior must be [T,D], got " + tz.shape_str());
  if (tz.extent(0) != tf.extent(0))
    throw std::invalid_argument("modulate: frame count mismatch, feature has " +
                                std::to_string(tf.extent(0)) + " frames, prior has " +
                                std::to_string(tz.extent(0)));
  if (tz.extent(1) != p.w_scale.tensor().extent(0))
    throw std::invalid_argument("modulate: prior dimension mismatch");
  Value scale = matmul(prior, p.w_scale);  // [T, C]
  Value shift = matmul(prior, p.w_shift);  // [T, C]
  Value normed = layernorm(feature, {1}, eps);
  return shift_channels(scale_channels(normed, scale), shift);
}

/// Attention matrices (one per frame and head) exposed for verification.
struct MsaTrace {
  std::vector<Value> attention;
};

/// Channel attention: Q, K, V come from 3D+depthwise-2D projections of the
/// modulated feature; per frame and head the (c x c) attention redistributes
/// V's channels, scaled by a learnable inverse temperature; residual output.
inline Value wad_msa(const Value& f_aa, const Value& prior, const WadtLayerParams& p,
                     const WadtConfig& cfg, MsaTrace* trace = nullptr) {
  const Tensor& tf = f_aa.tensor();
  if (tf.rank() != 4) throw std::invalid_argument("wad_msa: feature must be [T,C,H,W]");
  const int T = tf.extent(0), C = tf.extent(1), H = tf.extent(2), W = tf.extent(3);
  if (C % cfg.heads != 0)
    throw std::invalid_argument("wad_msa: channels not divisible by head count");
  const int ch = C / cfg.heads;

  Value fhat = modulate(f_aa, prior, p.msa_mod, cfg.layernorm_eps);
  Value q = project(fhat, p.q);
  Value k = project(fhat, p.k);
  Value v = project(fhat, p.v);

  std::vector<Value> frames;
  frames.reserve(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    std::vector<Value> head_outs;
    head_outs.reserve(static_cast<std::size_t>(cfg.heads));
    for (int h = 0; h < cfg.heads; ++h) {
      auto slab = [&](const Value& x) {
        Value f = narrow(x, 0, t, 1);
        Value hs = narrow(f, 1, h * ch, ch);
        return reshape(hs, {ch, H * W});
      };
      Value qh = slab(q), kh = slab(k), vh = slab(v);
      Value scores = matmul(qh, transpose2d(kh));  // [ch, ch]
      Value inv_temp = exp_val(narrow(p.log_inv_temp, 0, h, 1));
      Value attn = softmax(scale_by(scores, inv_temp), 1);
      if (trace) trace->attention.push_back(attn);
      head_outs.push_back(matmul(attn, vh));  // [ch, H*W]
    }
    Value merged = cfg.heads == 1 ? head_outs[0] : concat(head_outs, 0);
    frames.push_back(reshape(merged, {1, C, H, W}));
  }
  Value attended = T == 1 ? frames[0] : concat(frames, 0);
  Value projected = conv2d(attended, p.out_k, p.out_b, 1, Pad::same);
  return add(projected, f_aa);
}

/// Gated feed-forward with the prior folded in; residual over the modulated
/// feature, matching the gating form G(W2^1 W3^1 x) .* (W2^2 W3^2 x) + x.
inline Value wad_ffn(const Value& f_in, const Value& prior, const WadtLayerParams& p,
                     const WadtConfig& cfg) {
  Value fhat = modulate(f_in, prior, p.ffn_mod, cfg.layernorm_eps);
  Value gate = gelu(project(fhat, p.ffn_gate));
  Value val = project(fhat, p.ffn_val);
  return add(mul(gate, val), fhat);
}

inline Value wadt_layer(const Value& x, const Value& prior, const WadtLayerParams& p,
                        const WadtConfig& cfg) {
  return wad_ffn(wad_msa(x, prior, p, cfg), prior, p, cfg);
}

/// Full backbone parameter set: shallow 3D stem, N1 layers on the
/// second-level approximation, the bidirectional fuse, N2 post-fusion layers,
/// and the closing 3D conv back to RGB.
struct WadtParams {
  Value stem_k, stem_b;
  std::vector<WadtLayerParams> layers_n1;
  wbpf::WbpfParams fuse_fwd, fuse_bwd;
  std::vector<WadtLayerParams> layers_n2;
  Value final_k, final_b;

  static WadtParams init(ParamStore& store, const std::string& prefix, RandomSource& rng,
                         const WadtConfig& cfg, int wbpf_trunk_blocks) {
    cfg.validate();
    const int c = cfg.base_channels;
    WadtParams p;
    p.stem_k = store.add(prefix + ".stem.k", rng.normal_tensor({c, 3, 3, 3, 3}, 1.0 / std::sqrt(81.0)));
    p.stem_b = store.add(prefix + ".stem.b", Tensor::zeros({c}));
    for (int i = 0; i < cfg.n1; ++i)
      p.layers_n1.push_back(
          WadtLayerParams::init(store, prefix + ".l1." + std::to_string(i), rng, cfg));
    p.fuse_fwd = wbpf::WbpfParams::init(store, prefix + ".wbpf.fwd", rng, c, wbpf_trunk_blocks,
                                        wbpf::Direction::forward);
    p.fuse_bwd = wbpf::WbpfParams::init(store, prefix + ".wbpf.bwd", rng, c, wbpf_trunk_blocks,
                                        wbpf::Direction::backward);
    for (int i = 0; i < cfg.n2; ++i)
      p.layers_n2.push_back(
          WadtLayerParams::init(store, prefix + ".l2." + std::to_string(i), rng, cfg));
    // Zero-initialized closing conv: with the global residual the untrained
    // model is exactly the identity on the blurry input.
    p.final_k = store.add(prefix + ".final.k", Tensor::zeros({3, c, 3, 3, 3}));
    p.final_b = store.add(prefix + ".final.b", Tensor::zeros({3}));
    return p;
  }
};

/// End-to-end restoration: stem -> two nested analyses -> N1 prior-modulated
/// layers -> first synthesis -> bidirectional fuse -> N2 layers -> second
/// synthesis -> RGB projection (+ global residual).
inline Value wadt_forward(const Value& v_blur, const Value& prior, const WadtParams& p,
                          const WadtConfig& cfg) {
  const Tensor& tv = v_blur.tensor();
  if (tv.rank() != 4 || tv.extent(1) != 3)
    throw std::invalid_argument("wadt_forward: input must be [T,3,H,W], got " + tv.shape_str());

  Value f_in = conv3d_video(v_blur, p.stem_k, p.stem_b, Pad::same);
  wavelet::WaveletPyramid level1 = wavelet::analyze(f_in);
  wavelet::WaveletPyramid level2 = wavelet::analyze(level1.approx);

  Value x = level2.approx;
  for (const auto& layer : p.layers_n1) x = wadt_layer(x, prior, layer, cfg);

  wavelet::WaveletPyramid level2_out = level2;
  level2_out.approx = x;
  Value first_iwt = wavelet::synthesize(level2_out);

  Value fused = wbpf::fuse_video(first_iwt, p.fuse_fwd, p.fuse_bwd);
  for (const auto& layer : p.layers_n2) fused = wadt_layer(fused, prior, layer, cfg);

  wavelet::WaveletPyramid level1_out = level1;
  level1_out.approx = fused;
  Value restored = wavelet::synthesize(level1_out);

  Value rgb = conv3d_video(restored, p.final_k, p.final_b, Pad::same);
  return cfg.global_residual ? add(rgb, v_blur) : rgb;
}

}  // namespace vdiff::wadt
