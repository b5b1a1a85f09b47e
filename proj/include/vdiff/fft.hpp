#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <stdexcept>
#include <utility>
#include <vector>

#include "vdiff/autodiff.hpp"
#include "vdiff/tensor.hpp"

namespace vdiff {

namespace fft_detail {

struct Twiddle {
  std::vector<double> cs, sn;  // cos/sin of 2*pi*j/N for j in [0, N)
};

inline const Twiddle& table(int n) {
  static std::map<int, Twiddle> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) {
    Twiddle t;
    t.cs.resize(static_cast<std::size_t>(n));
    t.sn.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      const double a = 2.0 * 3.14159265358979323846 * j / n;
      t.cs[static_cast<std::size_t>(j)] = std::cos(a);
      t.sn[static_cast<std::size_t>(j)] = std::sin(a);
    }
    it = cache.emplace(n, std::move(t)).first;
  }
  return it->second;
}

/// One complex line transform: out[k] = sum_n in[n] * exp(sign * 2*pi*i*k*n/N).
/// Row-column application of this gives the 2D transform in O(HW(H+W)).
inline void dft1d(const double* re_in, const double* im_in, double* re_out, double* im_out, int n,
                  std::int64_t stride, int sign) {
  const Twiddle& tw = table(n);
  for (int k = 0; k < n; ++k) {
    double ar = 0.0, ai = 0.0;
    std::int64_t j = 0;
    for (int m = 0; m < n; ++m) {
      const double c = tw.cs[static_cast<std::size_t>(j)];
      const double s = sign * tw.sn[static_cast<std::size_t>(j)];
      const double xr = re_in[m * stride];
      const double xi = im_in ? im_in[m * stride] : 0.0;
      ar += xr * c - xi * s;
      ai += xr * s + xi * c;
      j += k;
      if (j >= n) j -= n;
    }
    re_out[k * stride] = ar;
    im_out[k * stride] = ai;
  }
}

/// 2D transform of one H x W slab. sign = -1 is the forward DFT.
inline void dft2d_slab(const double* re_in, const double* im_in, double* re_out, double* im_out,
                       int h, int w, int sign) {
  std::vector<double> tr(static_cast<std::size_t>(h) * w), ti(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r)
    dft1d(re_in + static_cast<std::int64_t>(r) * w, im_in ? im_in + static_cast<std::int64_t>(r) * w : nullptr,
          tr.data() + static_cast<std::int64_t>(r) * w, ti.data() + static_cast<std::int64_t>(r) * w, w, 1,
          sign);
  for (int c = 0; c < w; ++c)
    dft1d(tr.data() + c, ti.data() + c, re_out + c, im_out + c, h, w, sign);
}

}  // namespace fft_detail

/// 2D discrete Fourier transform of the last two axes (leading axes batched):
/// F[u,v] = sum_{h,w} x[h,w] * exp(-2*pi*i*(u*h/H + v*w/W)). Returns the real
/// and imaginary parts as separate tensors.
inline std::pair<Tensor, Tensor> dft2d(const Tensor& x) {
  if (x.rank() < 2) throw std::invalid_argument("fft2d: input must have at least 2 axes");
  const int h = x.extent(x.rank() - 2), w = x.extent(x.rank() - 1);
  const std::int64_t slab = static_cast<std::int64_t>(h) * w;
  const std::int64_t batches = x.numel() / slab;
  Tensor re(x.shape()), im(x.shape());
  for (std::int64_t b = 0; b < batches; ++b)
    fft_detail::dft2d_slab(x.data() + b * slab, nullptr, re.data() + b * slab, im.data() + b * slab,
                           h, w, -1);
  return {std::move(re), std::move(im)};
}

/// Adjoint of dft2d for real inputs: given cotangents of (re, im), returns
/// dL/dx = Re( sum_{u,v} (g_re + i*g_im)[u,v] * exp(+2*pi*i*(u*h/H + v*w/W)) ).
/// Either cotangent may be null.
inline Tensor dft2d_adjoint(const Tensor* g_re, const Tensor* g_im) {
  const Tensor& any = g_re ? *g_re : *g_im;
  const int h = any.extent(any.rank() - 2), w = any.extent(any.rank() - 1);
  const std::int64_t slab = static_cast<std::int64_t>(h) * w;
  const std::int64_t batches = any.numel() / slab;
  Tensor out(any.shape());
  std::vector<double> im_scratch(static_cast<std::size_t>(slab));
  std::vector<double> zero;
  const double* zre = nullptr;
  if (!g_re) {
    zero.assign(static_cast<std::size_t>(slab), 0.0);
    zre = zero.data();
  }
  for (std::int64_t b = 0; b < batches; ++b) {
    const double* pr = g_re ? g_re->data() + b * slab : zre;
    const double* pi = g_im ? g_im->data() + b * slab : nullptr;
    fft_detail::dft2d_slab(pr, pi, out.data() + b * slab, im_scratch.data(), h, w, +1);
  }
  return out;
}

/// Autodiff 2D Fourier transform; the pair shares the input node.
inline std::pair<Value, Value> fft2d(const Value& x) {
  auto [re, im] = dft2d(x.tensor());
  Value vre = detail::make_op(std::move(re), {x}, [](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    Tensor add = dft2d_adjoint(&n.grad, nullptr);
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += add[i];
  });
  Value vim = detail::make_op(std::move(im), {x}, [](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    Tensor add = dft2d_adjoint(nullptr, &n.grad);
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += add[i];
  });
  return {std::move(vre), std::move(vim)};
}

}  // namespace vdiff
