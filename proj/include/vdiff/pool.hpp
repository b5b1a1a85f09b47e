#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "vdiff/autodiff.hpp"
#include "vdiff/tensor.hpp"

namespace vdiff {

namespace detail {

inline void check_rank4(const Tensor& t, const char* op) {
  if (t.rank() != 4) throw std::invalid_argument(std::string(op) + ": expects [T,C,H,W]");
}

}  // namespace detail

/// 2x average pooling with border windows clipped (output extent ceil(N/2),
/// so an extent of 1 is preserved).
inline Value avg_pool2x(const Value& x) {
  detail::check_rank4(x.tensor(), "avg_pool2x");
  const Tensor& t = x.tensor();
  const int T = t.extent(0), C = t.extent(1), H = t.extent(2), W = t.extent(3);
  const int Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  Tensor out({T, C, Ho, Wo});
  for (int tc = 0; tc < T * C; ++tc) {
    const double* in = t.data() + static_cast<std::int64_t>(tc) * H * W;
    double* o = out.data() + static_cast<std::int64_t>(tc) * Ho * Wo;
    for (int oh = 0; oh < Ho; ++oh)
      for (int ow = 0; ow < Wo; ++ow) {
        const int h1 = std::min(2 * oh + 2, H), w1 = std::min(2 * ow + 2, W);
        double acc = 0.0;
        int cnt = 0;
        for (int h = 2 * oh; h < h1; ++h)
          for (int w = 2 * ow; w < w1; ++w) {
            acc += in[static_cast<std::int64_t>(h) * W + w];
            ++cnt;
          }
        o[static_cast<std::int64_t>(oh) * Wo + ow] = acc / cnt;
      }
  }
  return detail::make_op(std::move(out), {x}, [T, C, H, W, Ho, Wo](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (int tc = 0; tc < T * C; ++tc) {
      double* gi = g.data() + static_cast<std::int64_t>(tc) * H * W;
      const double* go = n.grad.data() + static_cast<std::int64_t>(tc) * Ho * Wo;
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          const int h1 = std::min(2 * oh + 2, H), w1 = std::min(2 * ow + 2, W);
          const int cnt = (h1 - 2 * oh) * (w1 - 2 * ow);
          const double gv = go[static_cast<std::int64_t>(oh) * Wo + ow] / cnt;
          for (int h = 2 * oh; h < h1; ++h)
            for (int w = 2 * ow; w < w1; ++w) gi[static_cast<std::int64_t>(h) * W + w] += gv;
        }
    }
  });
}

/// 2x max pooling, border windows clipped; ties resolve to the first maximum
/// in scan order so the subgradient is deterministic.
inline Value max_pool2x(const Value& x) {
  detail::check_rank4(x.tensor(), "max_pool2x");
  const Tensor& t = x.tensor();
  const int T = t.extent(0), C = t.extent(1), H = t.extent(2), W = t.extent(3);
  const int Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  Tensor out({T, C, Ho, Wo});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.numel()));
  for (int tc = 0; tc < T * C; ++tc) {
    const std::int64_t ibase = static_cast<std::int64_t>(tc) * H * W;
    const std::int64_t obase = static_cast<std::int64_t>(tc) * Ho * Wo;
    for (int oh = 0; oh < Ho; ++oh)
      for (int ow = 0; ow < Wo; ++ow) {
        const int h1 = std::min(2 * oh + 2, H), w1 = std::min(2 * ow + 2, W);
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t best_i = ibase + static_cast<std::int64_t>(2 * oh) * W + 2 * ow;
        for (int h = 2 * oh; h < h1; ++h)
          for (int w = 2 * ow; w < w1; ++w) {
            const std::int64_t i = ibase + static_cast<std::int64_t>(h) * W + w;
            if (t[i] > best) {
              best = t[i];
              best_i = i;
            }
          }
        out[obase + static_cast<std::int64_t>(oh) * Wo + ow] = best;
        argmax[static_cast<std::size_t>(obase + static_cast<std::int64_t>(oh) * Wo + ow)] = best_i;
      }
  }
  return detail::make_op(std::move(out), {x}, [argmax = std::move(argmax)](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::int64_t o = 0; o < n.grad.numel(); ++o)
      g[argmax[static_cast<std::size_t>(o)]] += n.grad[o];
  });
}

/// Bilinear resize of the spatial axes to (H_out, W_out), half-pixel centers.
inline Value upsample_bilinear(const Value& x, int H_out, int W_out) {
  detail::check_rank4(x.tensor(), "upsample_bilinear");
  if (H_out < 1 || W_out < 1) throw std::invalid_argument("upsample_bilinear: bad target extents");
  const Tensor& t = x.tensor();
  const int T = t.extent(0), C = t.extent(1), H = t.extent(2), W = t.extent(3);

  struct Taps {
    int lo, hi;
    double w_hi;  // weight of hi; lo gets (1 - w_hi)
  };
  auto make_taps = [](int n_in, int n_out) {
    std::vector<Taps> taps(static_cast<std::size_t>(n_out));
    const double scale = static_cast<double>(n_in) / n_out;
    for (int o = 0; o < n_out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      src = std::max(0.0, std::min(src, static_cast<double>(n_in - 1)));
      const int lo = static_cast<int>(std::floor(src));
      const int hi = std::min(lo + 1, n_in - 1);
      taps[static_cast<std::size_t>(o)] = {lo, hi, src - lo};
    }
    return taps;
  };
  const auto ty = make_taps(H, H_out);
  const auto txp = make_taps(W, W_out);

  Tensor out({T, C, H_out, W_out});
  for (int tc = 0; tc < T * C; ++tc) {
    const double* in = t.data() + static_cast<std::int64_t>(tc) * H * W;
    double* o = out.data() + static_cast<std::int64_t>(tc) * H_out * W_out;
    for (int oh = 0; oh < H_out; ++oh) {
      const Taps& a = ty[static_cast<std::size_t>(oh)];
      for (int ow = 0; ow < W_out; ++ow) {
        const Taps& b = txp[static_cast<std::size_t>(ow)];
        const double v00 = in[static_cast<std::int64_t>(a.lo) * W + b.lo];
        const double v01 = in[static_cast<std::int64_t>(a.lo) * W + b.hi];
        const double v10 = in[static_cast<std::int64_t>(a.hi) * W + b.lo];
        const double v11 = in[static_cast<std::int64_t>(a.hi) * W + b.hi];
        o[static_cast<std::int64_t>(oh) * W_out + ow] =
            (1.0 - a.w_hi) * ((1.0 - b.w_hi) * v00 + b.w_hi * v01) +
            a.w_hi * ((1.0 - b.w_hi) * v10 + b.w_hi * v11);
      }
    }
  }
  return detail::make_op(std::move(out), {x}, [T, C, H, W, H_out, W_out, ty, txp](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (int tc = 0; tc < T * C; ++tc) {
      double* gi = g.data() + static_cast<std::int64_t>(tc) * H * W;
      const double* go = n.grad.data() + static_cast<std::int64_t>(tc) * H_out * W_out;
      for (int oh = 0; oh < H_out; ++oh) {
        const auto& a = ty[static_cast<std::size_t>(oh)];
        for (int ow = 0; ow < W_out; ++ow) {
          const auto& b = txp[static_cast<std::size_t>(ow)];
          const double gv = go[static_cast<std::int64_t>(oh) * W_out + ow];
          gi[static_cast<std::int64_t>(a.lo) * W + b.lo] += gv * (1.0 - a.w_hi) * (1.0 - b.w_hi);
          gi[static_cast<std::int64_t>(a.lo) * W + b.hi] += gv * (1.0 - a.w_hi) * b.w_hi;
          gi[static_cast<std::int64_t>(a.hi) * W + b.lo] += gv * a.w_hi * (1.0 - b.w_hi);
          gi[static_cast<std::int64_t>(a.hi) * W + b.hi] += gv * a.w_hi * b.w_hi;
        }
      }
    }
  });
}

}  // namespace vdiff
