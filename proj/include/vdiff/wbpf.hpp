#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdiff/autodiff.hpp"
#include "vdiff/conv.hpp"
#include "vdiff/ops.hpp"
#include "vdiff/pool.hpp"
#include "vdiff/random.hpp"

namespace vdiff::wbpf {

enum class Direction { forward, backward };

struct ResBlockParams {
  Value k1, b1, k2, b2;  // two 3x3 convs, channel-preserving

  static ResBlockParams init(ParamStore& store, const std::string& prefix, RandomSource& rng,
                             int channels) {
    ResBlockParams p;
    const double s = 1.0 / std::sqrt(9.0 * channels);
    p.k1 = store.add(prefix + ".k1", rng.normal_tensor({channels, channels, 3, 3}, s));
    p.b1 = store.add(prefix + ".b1", Tensor::zeros({channels}));
    p.k2 = store.add(prefix + ".k2", rng.normal_tensor({channels, channels, 3, 3}, s));
    p.b2 = store.add(prefix + ".b2", Tensor::zeros({channels}));
    return p;
  }
};

inline Value resblock(const Value& x, const ResBlockParams& p) {
  Value h = gelu(conv2d(x, p.k1, p.b1, 1, Pad::same));
  return add(x, conv2d(h, p.k2, p.b2, 1, Pad::same));
}

/// One directional pass of the propagation fuse. Forward and backward passes
/// own independent parameter sets; `direction` selects the traversal order.
struct WbpfParams {
  Direction direction = Direction::forward;
  double leaky_slope = 0.1;
  Value entry_k, entry_b;                // 2C -> 2C fusion conv
  Value gate1_k, gate1_b;                // W1, 3x3
  Value gate2_k, gate2_b;                // W2, 3x3
  ResBlockParams pool_res1, pool_res2;   // residual blocks inside the P stack
  Value pool_conv_k, pool_conv_b;        // closing conv of the P stack
  std::vector<ResBlockParams> trunk;

  static WbpfParams init(ParamStore& store, const std::string& prefix, RandomSource& rng,
                         int channels, int trunk_blocks, Direction dir, double slope = 0.1) {
    WbpfParams p;
    p.direction = dir;
    p.leaky_slope = slope;
    const int c2 = 2 * channels;
    p.entry_k = store.add(prefix + ".entry.k", rng.normal_tensor({c2, c2, 3, 3}, 1.0 / std::sqrt(9.0 * c2)));
    p.entry_b = store.add(prefix + ".entry.b", Tensor::zeros({c2}));
    const double s = 1.0 / std::sqrt(9.0 * channels);
    p.gate1_k = store.add(prefix + ".gate1.k", rng.normal_tensor({channels, channels, 3, 3}, s));
    p.gate1_b = store.add(prefix + ".gate1.b", Tensor::zeros({channels}));
    p.gate2_k = store.add(prefix + ".gate2.k", rng.normal_tensor({channels, channels, 3, 3}, s));
    p.gate2_b = store.add(prefix + ".gate2.b", Tensor::zeros({channels}));
    p.pool_res1 = ResBlockParams::init(store, prefix + ".pool.res1", rng, channels);
    p.pool_res2 = ResBlockParams::init(store, prefix + ".pool.res2", rng, channels);
    p.pool_conv_k = store.add(prefix + ".pool.conv.k", rng.normal_tensor({channels, channels, 3, 3}, s));
    p.pool_conv_b = store.add(prefix + ".pool.conv.b", Tensor::zeros({channels}));
    for (int i = 0; i < trunk_blocks; ++i)
      p.trunk.push_back(ResBlockParams::init(store, prefix + ".trunk" + std::to_string(i), rng, channels));
    return p;
  }
};

/// Intermediate tensors of one propagation step, exposed for verification.
struct StepTrace {
  Value xhat, x1, x2, f_pro, pooled, ybar, y;
};

/// Y_i and the next input frame feature in, the next hidden state out:
/// concat -> entry conv + leaky ReLU -> split -> sigmoid-gated fuse ->
/// pooled-attention product -> trunk residual blocks.
inline Value propagate_step(const Value& y_prev, const Value& x_next, const WbpfParams& p,
                            StepTrace* trace = nullptr) {
  const Tensor& ty = y_prev.tensor();
  const Tensor& tx = x_next.tensor();
  if (!ty.same_shape(tx))
    throw std::invalid_argument("propagate_step: hidden state " + ty.shape_str() +
                                " and frame feature " + tx.shape_str() + " disagree");
  if (ty.rank() != 4 || ty.extent(0) != 1)
    throw std::invalid_argument("propagate_step: expects [1,C,H,W] frame features");
  const int C = ty.extent(1), H = ty.extent(2), W = ty.extent(3);

  Value cat = concat({y_prev, x_next}, 1);
  Value xhat = leaky_relu(conv2d(cat, p.entry_k, p.entry_b, 1, Pad::same), p.leaky_slope);
  Value x1 = narrow(xhat, 1, 0, C);
  Value x2 = narrow(xhat, 1, C, C);
  Value f_pro = add(mul(x1, sigmoid(conv2d(x1, p.gate1_k, p.gate1_b, 1, Pad::same))),
                    mul(x2, sigmoid(conv2d(x2, p.gate2_k, p.gate2_b, 1, Pad::same))));

  Value pooled = avg_pool2x(f_pro);
  pooled = resblock(pooled, p.pool_res1);
  pooled = max_pool2x(pooled);
  pooled = resblock(pooled, p.pool_res2);
  pooled = conv2d(pooled, p.pool_conv_k, p.pool_conv_b, 1, Pad::same);
  Value ybar = mul(f_pro, upsample_bilinear(pooled, H, W));

  Value y = ybar;
  for (const auto& rb : p.trunk) y = resblock(y, rb);

  if (trace) *trace = StepTrace{xhat, x1, x2, f_pro, pooled, ybar, y};
  return y;
}

/// Runs one directional pass over the frame sequence, seeded with a zero
/// hidden state. The traversal order follows p.direction.
inline std::vector<Value> propagate_pass(const std::vector<Value>& frames, const WbpfParams& p) {
  if (frames.empty()) throw std::invalid_argument("propagate_pass: empty frame sequence");
  const int n = static_cast<int>(frames.size());
  std::vector<Value> out(frames.size());
  Value hidden = constant(Tensor::zeros(frames[0].shape()));
  if (p.direction == Direction::forward) {
    for (int i = 0; i < n; ++i) {
      hidden = propagate_step(hidden, frames[static_cast<std::size_t>(i)], p);
      out[static_cast<std::size_t>(i)] = hidden;
    }
  } else {
    for (int i = n - 1; i >= 0; --i) {
      hidden = propagate_step(hidden, frames[static_cast<std::size_t>(i)], p);
      out[static_cast<std::size_t>(i)] = hidden;
    }
  }
  return out;
}

/// First pass in its own direction, second pass (independent parameters) over
/// the first pass's outputs; the second pass's result is the module output.
inline std::vector<Value> bidirectional_fuse(const std::vector<Value>& frames,
                                             const WbpfParams& first, const WbpfParams& second) {
  if (frames.empty()) throw std::invalid_argument("bidirectional_fuse: empty frame sequence");
  return propagate_pass(propagate_pass(frames, first), second);
}

/// Convenience wrapper over a [T,C,H,W] video.
inline Value fuse_video(const Value& video, const WbpfParams& first, const WbpfParams& second) {
  const Tensor& t = video.tensor();
  if (t.rank() != 4) throw std::invalid_argument("fuse_video: expects [T,C,H,W]");
  std::vector<Value> frames;
  for (int i = 0; i < t.extent(0); ++i) frames.push_back(narrow(video, 0, i, 1));
  auto fused = bidirectional_fuse(frames, first, second);
  return concat(fused, 0);
}

}  // namespace vdiff::wbpf
