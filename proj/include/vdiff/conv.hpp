#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "vdiff/autodiff.hpp"
#include "vdiff/ops.hpp"
#include "vdiff/tensor.hpp"

namespace vdiff {

enum class Pad { same, valid };

namespace detail {

inline int conv_out_extent(int n, int k, int stride, int pad) {
  return (n + 2 * pad - k) / stride + 1;
}

inline void check_odd_for_same(int k, const char* who) {
  if (k % 2 == 0)
    throw std::invalid_argument(std::string(who) + ": kernel extents must be odd in same-padding mode");
}

}  // namespace detail

/// 2D cross-correlation over [T,C,H,W] (or [C,H,W], treated as one frame)
/// with a [C_out, C_in/groups, kh, kw] kernel shared across frames.
/// Depthwise convolution is groups == C_in. Bias may be an empty Value.
inline Value conv2d(const Value& x, const Value& kernel, const Value& bias, int stride_h,
                    int stride_w, Pad pad, int groups = 1) {
  const bool rank3 = x.tensor().rank() == 3;
  const Tensor& tx = x.tensor();
  const Tensor& tk = kernel.tensor();
  if (tx.rank() != 3 && tx.rank() != 4)
    throw std::invalid_argument("conv2d: input must be [C,H,W] or [T,C,H,W], got " + tx.shape_str());
  if (tk.rank() != 4)
    throw std::invalid_argument("conv2d: kernel must be [C_out,C_in/groups,kh,kw], got " +
                                tk.shape_str());
  const int T = rank3 ? 1 : tx.extent(0);
  const int C = rank3 ? tx.extent(0) : tx.extent(1);
  const int H = rank3 ? tx.extent(1) : tx.extent(2);
  const int W = rank3 ? tx.extent(2) : tx.extent(3);
  const int Co = tk.extent(0), Cg = tk.extent(1), kh = tk.extent(2), kw = tk.extent(3);
  if (stride_h < 1 || stride_w < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (groups < 1 || C % groups != 0 || Co % groups != 0)
    throw std::invalid_argument("conv2d: groups must divide input channels (" + std::to_string(C) +
                                ") and kernel C_out (" + std::to_string(Co) + ")");
  if (Cg != C / groups)
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(Cg) +
                                " channels per group, input provides " + std::to_string(C / groups));
  int ph = 0, pw = 0;
  if (pad == Pad::same) {
    detail::check_odd_for_same(kh, "conv2d");
    detail::check_odd_for_same(kw, "conv2d");
    ph = (kh - 1) / 2;
    pw = (kw - 1) / 2;
  }
  const int Ho = detail::conv_out_extent(H, kh, stride_h, ph);
  const int Wo = detail::conv_out_extent(W, kw, stride_w, pw);
  if (Ho < 1 || Wo < 1) throw std::invalid_argument("conv2d: input smaller than kernel");
  const bool has_bias = bias.defined();
  if (has_bias && (bias.tensor().rank() != 1 || bias.tensor().extent(0) != Co))
    throw std::invalid_argument("conv2d: bias must be [C_out]");

  const int co_g = Co / groups;
  Tensor out(rank3 ? std::vector<int>{Co, Ho, Wo} : std::vector<int>{T, Co, Ho, Wo});
  const double* px = tx.data();
  const double* pk = tk.data();
  double* po = out.data();
  for (int t = 0; t < T; ++t) {
    const double* xt = px + static_cast<std::int64_t>(t) * C * H * W;
    double* ot = po + static_cast<std::int64_t>(t) * Co * Ho * Wo;
    for (int g = 0; g < groups; ++g)
      for (int cl = 0; cl < co_g; ++cl) {
        const int co = g * co_g + cl;
        const double b = has_bias ? bias.tensor()[co] : 0.0;
        double* oc = ot + static_cast<std::int64_t>(co) * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh)
          for (int ow = 0; ow < Wo; ++ow) {
            double acc = b;
            for (int ci = 0; ci < Cg; ++ci) {
              const double* xc = xt + static_cast<std::int64_t>(g * Cg + ci) * H * W;
              const double* kc = pk + ((static_cast<std::int64_t>(co) * Cg + ci) * kh) * kw;
              for (int r = 0; r < kh; ++r) {
                const int ih = oh * stride_h - ph + r;
                if (ih < 0 || ih >= H) continue;
                for (int s = 0; s < kw; ++s) {
                  const int iw = ow * stride_w - pw + s;
                  if (iw < 0 || iw >= W) continue;
                  acc += xc[static_cast<std::int64_t>(ih) * W + iw] * kc[r * kw + s];
                }
              }
            }
            oc[static_cast<std::int64_t>(oh) * Wo + ow] = acc;
          }
      }
  }

  std::vector<Value> parents{x, kernel};
  if (has_bias) parents.push_back(bias);
  return detail::make_op(
      std::move(out), std::move(parents),
      [T, C, H, W, Co, Cg, kh, kw, Ho, Wo, stride_h, stride_w, ph, pw, groups, co_g,
       has_bias](Node& n) {
        const Tensor& tx = n.parents[0]->value;
        const Tensor& tk = n.parents[1]->value;
        const bool need_x = n.parents[0]->requires_grad;
        const bool need_k = n.parents[1]->requires_grad;
        const bool need_b = has_bias && n.parents[2]->requires_grad;
        Tensor* gx = need_x ? &n.parents[0]->ensure_grad() : nullptr;
        Tensor* gk = need_k ? &n.parents[1]->ensure_grad() : nullptr;
        Tensor* gb = need_b ? &n.parents[2]->ensure_grad() : nullptr;
        const double* px = tx.data();
        const double* pk = tk.data();
        for (int t = 0; t < T; ++t) {
          const std::int64_t xbase = static_cast<std::int64_t>(t) * C * H * W;
          const std::int64_t obase = static_cast<std::int64_t>(t) * Co * Ho * Wo;
          for (int g = 0; g < groups; ++g)
            for (int cl = 0; cl < co_g; ++cl) {
              const int co = g * co_g + cl;
              for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                  const double gv =
                      n.grad[obase + (static_cast<std::int64_t>(co) * Ho + oh) * Wo + ow];
                  if (gv == 0.0) continue;
                  if (gb) (*gb)[co] += gv;
                  for (int ci = 0; ci < Cg; ++ci) {
                    const std::int64_t xc = xbase + static_cast<std::int64_t>(g * Cg + ci) * H * W;
                    const std::int64_t kc = (static_cast<std::int64_t>(co) * Cg + ci) * kh * kw;
                    for (int r = 0; r < kh; ++r) {
                      const int ih = oh * stride_h - ph + r;
                      if (ih < 0 || ih >= H) continue;
                      for (int s = 0; s < kw; ++s) {
                        const int iw = ow * stride_w - pw + s;
                        if (iw < 0 || iw >= W) continue;
                        const std::int64_t xi = xc + static_cast<std::int64_t>(ih) * W + iw;
                        if (gx) (*gx)[xi] += gv * pk[kc + r * kw + s];
                        if (gk) (*gk)[kc + r * kw + s] += gv * px[xi];
                      }
                    }
                  }
                }
            }
        }
      });
}

inline Value conv2d(const Value& x, const Value& kernel, const Value& bias, int stride, Pad pad,
                    int groups = 1) {
  return conv2d(x, kernel, bias, stride, stride, pad, groups);
}

/// 3D cross-correlation over [C,T,H,W] with a [C_out, C_in/groups, kt, kh, kw]
/// kernel; the stride applies to all three spatio-temporal axes.
inline Value conv3d(const Value& x, const Value& kernel, const Value& bias, int stride, Pad pad,
                    int groups = 1) {
  const Tensor& tx = x.tensor();
  const Tensor& tk = kernel.tensor();
  if (tx.rank() != 4)
    throw std::invalid_argument("conv3d: input must be [C,T,H,W], got " + tx.shape_str());
  if (tk.rank() != 5)
    throw std::invalid_argument("conv3d: kernel must be [C_out,C_in/groups,kt,kh,kw], got " +
                                tk.shape_str());
  const int C = tx.extent(0), T = tx.extent(1), H = tx.extent(2), W = tx.extent(3);
  const int Co = tk.extent(0), Cg = tk.extent(1);
  const int kt = tk.extent(2), kh = tk.extent(3), kw = tk.extent(4);
  if (stride < 1) throw std::invalid_argument("conv3d: stride must be >= 1");
  if (groups < 1 || C % groups != 0 || Co % groups != 0)
    throw std::invalid_argument("conv3d: groups must divide input channels (" + std::to_string(C) +
                                ") and kernel C_out (" + std::to_string(Co) + ")");
  if (Cg != C / groups)
    throw std::invalid_argument("conv3d: kernel expects " + std::to_string(Cg) +
                                " channels per group, input provides " + std::to_string(C / groups));
  int pt = 0, ph = 0, pw = 0;
  if (pad == Pad::same) {
    detail::check_odd_for_same(kt, "conv3d");
    detail::check_odd_for_same(kh, "conv3d");
    detail::check_odd_for_same(kw, "conv3d");
    pt = (kt - 1) / 2;
    ph = (kh - 1) / 2;
    pw = (kw - 1) / 2;
  }
  const int To = detail::conv_out_extent(T, kt, stride, pt);
  const int Ho = detail::conv_out_extent(H, kh, stride, ph);
  const int Wo = detail::conv_out_extent(W, kw, stride, pw);
  if (To < 1 || Ho < 1 || Wo < 1) throw std::invalid_argument("conv3d: input smaller than kernel");
  const bool has_bias = bias.defined();
  if (has_bias && (bias.tensor().rank() != 1 || bias.tensor().extent(0) != Co))
    throw std::invalid_argument("conv3d: bias must be [C_out]");

  const int co_g = Co / groups;
  Tensor out({Co, To, Ho, Wo});
  const double* px = tx.data();
  const double* pk = tk.data();
  for (int g = 0; g < groups; ++g)
    for (int cl = 0; cl < co_g; ++cl) {
      const int co = g * co_g + cl;
      const double b = has_bias ? bias.tensor()[co] : 0.0;
      for (int ot = 0; ot < To; ++ot)
        for (int oh = 0; oh < Ho; ++oh)
          for (int ow = 0; ow < Wo; ++ow) {
            double acc = b;
            for (int ci = 0; ci < Cg; ++ci) {
              const double* xc = px + static_cast<std::int64_t>(g * Cg + ci) * T * H * W;
              const double* kc = pk + (((static_cast<std::int64_t>(co) * Cg + ci) * kt) * kh) * kw;
              for (int q = 0; q < kt; ++q) {
                const int it = ot * stride - pt + q;
                if (it < 0 || it >= T) continue;
                for (int r = 0; r < kh; ++r) {
                  const int ih = oh * stride - ph + r;
                  if (ih < 0 || ih >= H) continue;
                  for (int s = 0; s < kw; ++s) {
                    const int iw = ow * stride - pw + s;
                    if (iw < 0 || iw >= W) continue;
                    acc += xc[(static_cast<std::int64_t>(it) * H + ih) * W + iw] *
                           kc[(q * kh + r) * kw + s];
                  }
                }
              }
            }
            out.at4(co, ot, oh, ow) = acc;
          }
    }

  std::vector<Value> parents{x, kernel};
  if (has_bias) parents.push_back(bias);
  return detail::make_op(
      std::move(out), std::move(parents),
      [C, T, H, W, Co, Cg, kt, kh, kw, To, Ho, Wo, stride, pt, ph, pw, groups, co_g,
       has_bias](Node& n) {
        const Tensor& tx = n.parents[0]->value;
        const Tensor& tk = n.parents[1]->value;
        const bool need_x = n.parents[0]->requires_grad;
        const bool need_k = n.parents[1]->requires_grad;
        const bool need_b = has_bias && n.parents[2]->requires_grad;
        Tensor* gx = need_x ? &n.parents[0]->ensure_grad() : nullptr;
        Tensor* gk = need_k ? &n.parents[1]->ensure_grad() : nullptr;
        Tensor* gb = need_b ? &n.parents[2]->ensure_grad() : nullptr;
        const double* px = tx.data();
        const double* pk = tk.data();
        for (int g = 0; g < groups; ++g)
          for (int cl = 0; cl < co_g; ++cl) {
            const int co = g * co_g + cl;
            for (int ot = 0; ot < To; ++ot)
              for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                  const double gv = n.grad.at4(co, ot, oh, ow);
                  if (gv == 0.0) continue;
                  if (gb) (*gb)[co] += gv;
                  for (int ci = 0; ci < Cg; ++ci) {
                    const std::int64_t xc = static_cast<std::int64_t>(g * Cg + ci) * T * H * W;
                    const std::int64_t kc = ((static_cast<std::int64_t>(co) * Cg + ci) * kt) * kh * kw;
                    for (int q = 0; q < kt; ++q) {
                      const int it = ot * stride - pt + q;
                      if (it < 0 || it >= T) continue;
                      for (int r = 0; r < kh; ++r) {
                        const int ih = oh * stride - ph + r;
                        if (ih < 0 || ih >= H) continue;
                        for (int s = 0; s < kw; ++s) {
                          const int iw = ow * stride - pw + s;
                          if (iw < 0 || iw >= W) continue;
                          const std::int64_t xi =
                              xc + (static_cast<std::int64_t>(it) * H + ih) * W + iw;
                          const std::int64_t ki = kc + (q * kh + r) * kw + s;
                          if (gx) (*gx)[xi] += gv * pk[ki];
                          if (gk) (*gk)[ki] += gv * px[xi];
                        }
                      }
                    }
                  }
                }
          }
      });
}

/// 3D convolution applied to a [T,C,H,W] video: permutes to [C,T,H,W],
/// convolves, and permutes back.
inline Value conv3d_video(const Value& video, const Value& kernel, const Value& bias, Pad pad,
                          int groups = 1) {
  Value x = permute(video, {1, 0, 2, 3});
  Value y = conv3d(x, kernel, bias, 1, pad, groups);
  return permute(y, {1, 0, 2, 3});
}

}  // namespace vdiff
