#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdiff/autodiff.hpp"
#include "vdiff/conv.hpp"
#include "vdiff/ops.hpp"
#include "vdiff/random.hpp"

namespace vdiff::diffusion {

/// Beta/alpha/alpha-bar sequences for T steps with derived products.
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta;       // beta[t-1] for t in 1..T
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running product of alpha

  /// Linear beta ramp. The end value is chosen so alpha_bar(T) is close to 0
  /// even for very few steps; with a single step the ramp collapses to the
  /// end value for the same reason.
  static NoiseSchedule linear(int steps, double beta_start = 0.1, double beta_end = 0.99) {
    if (steps < 1) throw std::invalid_argument("noise schedule: steps must be >= 1");
    NoiseSchedule s;
    s.steps = steps;
    for (int t = 0; t < steps; ++t) {
      const double b = steps == 1
                           ? beta_end
                           : beta_start + (beta_end - beta_start) * t / static_cast<double>(steps - 1);
      s.beta.push_back(b);
    }
    s.finalize();
    return s;
  }

  void finalize() {
    steps = static_cast<int>(beta.size());
    alpha.clear();
    alpha_bar.clear();
    double prod = 1.0;
    for (double b : beta) {
      if (!(b > 0.0 && b < 1.0))
        throw std::invalid_argument("noise schedule: beta values must lie in (0,1)");
      alpha.push_back(1.0 - b);
      prod *= 1.0 - b;
      alpha_bar.push_back(prod);
    }
    for (std::size_t i = 1; i < alpha_bar.size(); ++i)
      if (!(alpha_bar[i] < alpha_bar[i - 1]))
        throw std::logic_error("noise schedule: alpha_bar must decrease strictly");
  }

  void check_step(int t, const char* who) const {
    if (t < 1 || t > steps)
      throw std::out_of_range(std::string(who) + ": step " + std::to_string(t) +
                              " outside 1.." + std::to_string(steps));
  }

  double beta_at(int t) const { return beta[static_cast<std::size_t>(t - 1)]; }
  double alpha_at(int t) const { return alpha[static_cast<std::size_t>(t - 1)]; }
  /// alpha_bar with the empty-product convention alpha_bar(0) = 1.
  double alpha_bar_at(int t) const {
    return t == 0 ? 1.0 : alpha_bar[static_cast<std::size_t>(t - 1)];
  }
};

enum class PriorKind { ground_truth, condition, generated, sampled };

/// Compact per-frame latent: one D-vector per frame.
struct PriorFeature {
  Value values;  // [T_frames, D]
  PriorKind kind = PriorKind::ground_truth;
};

/// Closed-form forward noising: z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps.
inline Value forward_diffuse(const Value& z0, int t, const NoiseSchedule& s, const Value& eps) {
  s.check_step(t, "forward_diffuse");
  require_same_shape(z0.tensor(), eps.tensor(), "forward_diffuse");
  const double ab = s.alpha_bar_at(t);
  return add(mul_scalar(z0, std::sqrt(ab)), mul_scalar(eps, std::sqrt(1.0 - ab)));
}

/// Step-by-step forward process z_t = sqrt(1-beta_t) z_{t-1} + sqrt(beta_t) e_t.
inline Value iterative_forward(const Value& z0, const NoiseSchedule& s,
                               const std::vector<Tensor>& noise_draws) {
  if (static_cast<int>(noise_draws.size()) != s.steps)
    throw std::invalid_argument("iterative_forward: expected " + std::to_string(s.steps) +
                                " noise draws, got " + std::to_string(noise_draws.size()));
  Value z = z0;
  for (int t = 1; t <= s.steps; ++t) {
    const Tensor& e = noise_draws[static_cast<std::size_t>(t - 1)];
    require_same_shape(z0.tensor(), e, "iterative_forward");
    z = add(mul_scalar(z, std::sqrt(1.0 - s.beta_at(t))),
            mul_scalar(constant(e), std::sqrt(s.beta_at(t))));
  }
  return z;
}

/// Deterministic reverse update (variance term removed):
/// z_{t-1} = (z_t - eps * (1-alpha_t)/sqrt(1-abar_t)) / sqrt(alpha_t).
inline Value reverse_step(const Value& z_t, const Value& eps_pred, int t, const NoiseSchedule& s) {
  s.check_step(t, "reverse_step");
  require_same_shape(z_t.tensor(), eps_pred.tensor(), "reverse_step");
  const double coef = (1.0 - s.alpha_at(t)) / std::sqrt(1.0 - s.alpha_bar_at(t));
  return mul_scalar(sub(z_t, mul_scalar(eps_pred, coef)), 1.0 / std::sqrt(s.alpha_at(t)));
}

/// Sinusoidal embedding of the step's cumulative noise level. Conditioning on
/// sqrt(abar_t) rather than the raw index keeps the predictor meaningful when
/// the step count is changed at inference time.
inline Tensor step_embedding(int t, const NoiseSchedule& s, int embed_dim) {
  if (embed_dim < 2 || embed_dim % 2 != 0)
    throw std::invalid_argument("step_embedding: embed dim must be even and >= 2");
  const double level = std::sqrt(s.alpha_bar_at(t));
  Tensor e({embed_dim + 2});
  const double pi = 3.14159265358979323846;
  for (int i = 0; i < embed_dim / 2; ++i) {
    e[2 * i] = std::sin((i + 1) * pi * level);
    e[2 * i + 1] = std::cos((i + 1) * pi * level);
  }
  e[embed_dim] = level;
  e[embed_dim + 1] = std::sqrt(1.0 - s.alpha_bar_at(t));
  return e;
}

/// Per-frame noise predictor: a small MLP over (z_t, c, step embedding).
struct EpsNetParams {
  Value w1, b1, w2, b2, w3, b3;
  int embed_dim = 16;

  static EpsNetParams init(ParamStore& store, const std::string& prefix, RandomSource& rng,
                           int latent_dim, int hidden, int embed_dim) {
    EpsNetParams p;
    p.embed_dim = embed_dim;
    const int in = 2 * latent_dim + embed_dim + 2;
    p.w1 = store.add(prefix + ".w1", rng.normal_tensor({in, hidden}, 1.0 / std::sqrt(static_cast<double>(in))));
    p.b1 = store.add(prefix + ".b1", Tensor::zeros({hidden}));
    p.w2 = store.add(prefix + ".w2",
                     rng.normal_tensor({hidden, hidden}, 1.0 / std::sqrt(static_cast<double>(hidden))));
    p.b2 = store.add(prefix + ".b2", Tensor::zeros({hidden}));
    // Zero-initialized head: the untrained predictor reports zero noise.
    p.w3 = store.add(prefix + ".w3", Tensor::zeros({hidden, latent_dim}));
    p.b3 = store.add(prefix + ".b3", Tensor::zeros({latent_dim}));
    return p;
  }
};

inline Value predict_noise(const Value& z_t, const Value& cond, int t, const NoiseSchedule& s,
                           const EpsNetParams& p) {
  const Tensor& tz = z_t.tensor();
  const Tensor& tc = cond.tensor();
  if (!tz.same_shape(tc))
    throw std::invalid_argument("predict_noise: latent " + tz.shape_str() + " and condition " +
                                tc.shape_str() + " disagree");
  if (tz.rank() != 2) throw std::invalid_argument("predict_noise: expects [T,D] latents");
  s.check_step(t, "predict_noise");
  const int frames = tz.extent(0);
  Tensor emb_row = step_embedding(t, s, p.embed_dim);
  Tensor emb({frames, emb_row.extent(0)});
  for (int f = 0; f < frames; ++f)
    for (int j = 0; j < emb_row.extent(0); ++j) emb.at2(f, j) = emb_row[j];
  Value input = concat({z_t, cond, constant(emb)}, 1);
  Value h1 = gelu(add_rowvec(matmul(input, p.w1), p.b1));
  Value h2 = gelu(add_rowvec(matmul(h1, p.w2), p.b2));
  return add_rowvec(matmul(h2, p.w3), p.b3);
}

/// Full deterministic reverse trajectory from a supplied z_T with an
/// arbitrary noise predictor (z, cond, t, schedule) -> Value.
template <typename Predictor>
PriorFeature sample_prior_with(const Value& cond, const NoiseSchedule& s, const Tensor& z_T,
                               Predictor&& predictor) {
  require_same_shape(cond.tensor(), z_T, "sample_prior");
  Value z = constant(z_T);
  for (int t = s.steps; t >= 1; --t) {
    Value eps = predictor(z, cond, t, s);
    z = reverse_step(z, eps, t, s);
  }
  return PriorFeature{z, PriorKind::generated};
}

/// Reverse trajectory driven by the learned predictor; gradients flow through
/// every step into the predictor parameters and the condition.
inline PriorFeature sample_prior_from_noise(const Value& cond, const NoiseSchedule& s,
                                            const EpsNetParams& p, const Tensor& z_T) {
  return sample_prior_with(cond, s, z_T,
                           [&p](const Value& z, const Value& c, int t, const NoiseSchedule& sch) {
                             return predict_noise(z, c, t, sch, p);
                           });
}

/// Seeded variant: z_T drawn from an explicit seed, no global random state.
inline PriorFeature sample_prior(const Value& cond, const NoiseSchedule& s, const EpsNetParams& p,
                                 std::uint64_t seed) {
  RandomSource rng(seed);
  return sample_prior_from_noise(cond, s, p, rng.normal_tensor(cond.tensor().shape()));
}

/// Latent / condition encoder: stride-2 conv stack to 1x1 spatial followed by
/// a linear head. LE and CE share this structure with independent parameters.
struct EncoderParams {
  struct Stage {
    Value k, b;
    int stride_h = 2, stride_w = 2;
  };
  std::vector<Stage> stages;
  Value head_w, head_b;
  int in_h = 0, in_w = 0;
  double leaky_slope = 0.1;

  static EncoderParams init(ParamStore& store, const std::string& prefix, RandomSource& rng,
                            int in_h, int in_w, int base_width, int cap_width, int latent_dim) {
    if (in_h < 1 || in_w < 1) throw std::invalid_argument("encoder: bad input extents");
    EncoderParams p;
    p.in_h = in_h;
    p.in_w = in_w;
    int h = in_h, w = in_w, c_in = 3, c_out = base_width, idx = 0;
    while (h > 1 || w > 1) {
      Stage st;
      st.stride_h = h > 1 ? 2 : 1;
      st.stride_w = w > 1 ? 2 : 1;
      st.k = store.add(prefix + ".s" + std::to_string(idx) + ".k",
                       rng.normal_tensor({c_out, c_in, 3, 3}, 1.0 / std::sqrt(9.0 * c_in)));
      st.b = store.add(prefix + ".s" + std::to_string(idx) + ".b", Tensor::zeros({c_out}));
      p.stages.push_back(st);
      h = (h + 1) / 2;
      w = (w + 1) / 2;
      c_in = c_out;
      c_out = std::min(2 * c_out, cap_width);
      ++idx;
    }
    p.head_w = store.add(prefix + ".head.w",
                         rng.normal_tensor({c_in, latent_dim}, 1.0 / std::sqrt(static_cast<double>(c_in))));
    p.head_b = store.add(prefix + ".head.b", Tensor::zeros({latent_dim}));
    return p;
  }
};

inline Value encode_latent(const Value& video, const EncoderParams& p) {
  const Tensor& tv = video.tensor();
  if (tv.rank() != 4 || tv.extent(1) != 3)
    throw std::invalid_argument("encode_latent: expects [T,3,H,W], got " + tv.shape_str());
  if (tv.extent(2) != p.in_h || tv.extent(3) != p.in_w)
    throw std::invalid_argument("encode_latent: encoder built for " + std::to_string(p.in_h) + "x" +
                                std::to_string(p.in_w) + ", got " + std::to_string(tv.extent(2)) +
                                "x" + std::to_string(tv.extent(3)));
  Value x = video;
  for (const auto& st : p.stages)
    x = leaky_relu(conv2d(x, st.k, st.b, st.stride_h, st.stride_w, Pad::same), p.leaky_slope);
  const int frames = tv.extent(0);
  const int channels = x.tensor().extent(1);
  Value flat = reshape(x, {frames, channels});
  return add_rowvec(matmul(flat, p.head_w), p.head_b);
}

}  // namespace vdiff::diffusion
