#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>

#include "vdiff/autodiff.hpp"
#include "vdiff/ops.hpp"
#include "vdiff/tensor.hpp"

namespace vdiff::wavelet {

// Single-level 2D Haar with orthonormal filters (1/sqrt2)(1,1) and
// (1/sqrt2)(1,-1), stride 2. On a 2x2 block [[a,b],[c,d]]:
//   LL=(a+b+c+d)/2  LH=(a-b+c-d)/2  HL=(a+b-c-d)/2  HH=(a-b-c+d)/2
// Detail subbands are stacked along channels as 3c+{LH,HL,HH} per input
// channel. The transform is orthogonal, so each primitive's adjoint is the
// other direction's arithmetic.

namespace detail {

inline Tensor haar_fwd_tensor(const Tensor& x) {
  const int T = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  const int h = H / 2, w = W / 2;
  Tensor out({T, 4 * C, h, w});
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      const double* in = x.data() + (static_cast<std::int64_t>(t) * C + c) * H * W;
      double* ll = out.data() + (static_cast<std::int64_t>(t) * 4 * C + c) * h * w;
      double* lh = out.data() + (static_cast<std::int64_t>(t) * 4 * C + C + 3 * c + 0) * h * w;
      double* hl = out.data() + (static_cast<std::int64_t>(t) * 4 * C + C + 3 * c + 1) * h * w;
      double* hh = out.data() + (static_cast<std::int64_t>(t) * 4 * C + C + 3 * c + 2) * h * w;
      for (int y = 0; y < h; ++y)
        for (int z = 0; z < w; ++z) {
          const double a = in[static_cast<std::int64_t>(2 * y) * W + 2 * z];
          const double b = in[static_cast<std::int64_t>(2 * y) * W + 2 * z + 1];
          const double cc = in[static_cast<std::int64_t>(2 * y + 1) * W + 2 * z];
          const double d = in[static_cast<std::int64_t>(2 * y + 1) * W + 2 * z + 1];
          const std::int64_t o = static_cast<std::int64_t>(y) * w + z;
          ll[o] = 0.5 * (a + b + cc + d);
          lh[o] = 0.5 * (a - b + cc - d);
          hl[o] = 0.5 * (a + b - cc - d);
          hh[o] = 0.5 * (a - b - cc + d);
        }
    }
  return out;
}

inline Tensor haar_inv_tensor(const Tensor& packed) {
  const int T = packed.extent(0), C4 = packed.extent(1), h = packed.extent(2), w = packed.extent(3);
  const int C = C4 / 4;
  Tensor out({T, C, 2 * h, 2 * w});
  const int W = 2 * w;
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      double* o = out.data() + (static_cast<std::int64_t>(t) * C + c) * (2 * h) * W;
      const double* ll = packed.data() + (static_cast<std::int64_t>(t) * C4 + c) * h * w;
      const double* lh = packed.data() + (static_cast<std::int64_t>(t) * C4 + C + 3 * c + 0) * h * w;
      const double* hl = packed.data() + (static_cast<std::int64_t>(t) * C4 + C + 3 * c + 1) * h * w;
      const double* hh = packed.data() + (static_cast<std::int64_t>(t) * C4 + C + 3 * c + 2) * h * w;
      for (int y = 0; y < h; ++y)
        for (int z = 0; z < w; ++z) {
          const std::int64_t i = static_cast<std::int64_t>(y) * w + z;
          o[static_cast<std::int64_t>(2 * y) * W + 2 * z] = 0.5 * (ll[i] + lh[i] + hl[i] + hh[i]);
          o[static_cast<std::int64_t>(2 * y) * W + 2 * z + 1] = 0.5 * (ll[i] - lh[i] + hl[i] - hh[i]);
          o[static_cast<std::int64_t>(2 * y + 1) * W + 2 * z] = 0.5 * (ll[i] + lh[i] - hl[i] - hh[i]);
          o[static_cast<std::int64_t>(2 * y + 1) * W + 2 * z + 1] = 0.5 * (ll[i] - lh[i] - hl[i] + hh[i]);
        }
    }
  return out;
}

inline Value haar_fwd_packed(const Value& x) {
  return vdiff::detail::make_op(haar_fwd_tensor(x.tensor()), {x}, [](Node& n) {
    Tensor add = haar_inv_tensor(n.grad);
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += add[i];
  });
}

inline Value haar_inv_packed(const Value& packed) {
  return vdiff::detail::make_op(haar_inv_tensor(packed.tensor()), {packed}, [](Node& n) {
    Tensor add = haar_fwd_tensor(n.grad);
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += add[i];
  });
}

}  // namespace detail

/// Pads odd spatial extents to even by replicating the last row/column.
inline Value pad_to_even(const Value& x) {
  const Tensor& t = x.tensor();
  if (t.rank() != 4) throw std::invalid_argument("pad_to_even: expects [T,C,H,W]");
  const int T = t.extent(0), C = t.extent(1), H = t.extent(2), W = t.extent(3);
  const int He = H + (H % 2), We = W + (W % 2);
  if (He == H && We == W) return x;
  Tensor out({T, C, He, We});
  for (int tc = 0; tc < T * C; ++tc) {
    const double* in = t.data() + static_cast<std::int64_t>(tc) * H * W;
    double* o = out.data() + static_cast<std::int64_t>(tc) * He * We;
    for (int h = 0; h < He; ++h) {
      const int sh = std::min(h, H - 1);
      for (int w = 0; w < We; ++w)
        o[static_cast<std::int64_t>(h) * We + w] = in[static_cast<std::int64_t>(sh) * W + std::min(w, W - 1)];
    }
  }
  return vdiff::detail::make_op(std::move(out), {x}, [T, C, H, W, He, We](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (int tc = 0; tc < T * C; ++tc) {
      double* gi = g.data() + static_cast<std::int64_t>(tc) * H * W;
      const double* go = n.grad.data() + static_cast<std::int64_t>(tc) * He * We;
      for (int h = 0; h < He; ++h) {
        const int sh = std::min(h, H - 1);
        for (int w = 0; w < We; ++w)
          gi[static_cast<std::int64_t>(sh) * W + std::min(w, W - 1)] +=
              go[static_cast<std::int64_t>(h) * We + w];
      }
    }
  });
}

/// Top-left spatial crop to (H0, W0).
inline Value crop_hw(const Value& x, int H0, int W0) {
  const Tensor& t = x.tensor();
  if (t.rank() != 4) throw std::invalid_argument("crop_hw: expects [T,C,H,W]");
  const int H = t.extent(2), W = t.extent(3);
  if (H0 > H || W0 > W || H0 < 1 || W0 < 1) throw std::invalid_argument("crop_hw: bad crop extents");
  if (H0 == H && W0 == W) return x;
  Value rows = narrow(x, 2, 0, H0);
  return narrow(rows, 3, 0, W0);
}

/// One decomposition level: LL subband plus channel-stacked LH/HL/HH, with the
/// pre-padding extents recorded for exact inversion.
struct WaveletPyramid {
  Value approx;  // [T, C,  H/2, W/2]
  Value detail;  // [T, 3C, H/2, W/2]
  int original_h = 0;
  int original_w = 0;
};

inline WaveletPyramid analyze(const Value& x) {
  const Tensor& t = x.tensor();
  if (t.rank() != 4) throw std::invalid_argument("analyze: expects [T,C,H,W]");
  const int H = t.extent(2), W = t.extent(3);
  if (H < 2 || W < 2) throw std::invalid_argument("analyze: spatial extents must be at least 2");
  for (std::int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i])) throw std::invalid_argument("analyze: non-finite input");
  const int C = t.extent(1);
  Value padded = pad_to_even(x);
  Value packed = detail::haar_fwd_packed(padded);
  WaveletPyramid p;
  p.approx = narrow(packed, 1, 0, C);
  p.detail = narrow(packed, 1, C, 3 * C);
  p.original_h = H;
  p.original_w = W;
  return p;
}

inline Value synthesize(const WaveletPyramid& p) {
  const Tensor& a = p.approx.tensor();
  const Tensor& d = p.detail.tensor();
  if (a.rank() != 4 || d.rank() != 4 || a.extent(0) != d.extent(0) ||
      d.extent(1) != 3 * a.extent(1) || a.extent(2) != d.extent(2) || a.extent(3) != d.extent(3))
    throw std::invalid_argument("synthesize: inconsistent subband shapes " + a.shape_str() +
                                " vs " + d.shape_str());
  const int He = 2 * a.extent(2), We = 2 * a.extent(3);
  if (p.original_h < He - 1 || p.original_h > He || p.original_w < We - 1 || p.original_w > We)
    throw std::invalid_argument("synthesize: recorded extents incompatible with subband shapes");
  Value packed = concat({p.approx, p.detail}, 1);
  Value full = detail::haar_inv_packed(packed);
  return crop_hw(full, p.original_h, p.original_w);
}

}  // namespace vdiff::wavelet
