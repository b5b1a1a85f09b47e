#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "vdiff/tensor.hpp"

namespace vdiff::train {

/// Peak signal-to-noise ratio over all elements; +infinity when the inputs
/// are identical.
inline double psnr(const Tensor& a, const Tensor& b, double peak = 1.0) {
  require_same_shape(a, b, "psnr");
  if (peak <= 0.0) throw std::invalid_argument("psnr: peak must be positive");
  double mse = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size) * size);
  const int half = size / 2;
  double sum = 0.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dy = y - half, dx = x - half;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      w[static_cast<std::size_t>(y) * size + x] = v;
      sum += v;
    }
  for (auto& v : w) v /= sum;
  return w;
}

}  // namespace detail

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5), valid
/// positions only, averaged over channels and frames. The window shrinks to
/// the largest odd size that fits small inputs.
inline double ssim(const Tensor& a, const Tensor& b, double peak = 1.0) {
  require_same_shape(a, b, "ssim");
  if (a.rank() != 4) throw std::invalid_argument("ssim: expects [T,C,H,W]");
  const int T = a.extent(0), C = a.extent(1), H = a.extent(2), W = a.extent(3);
  int win = std::min({11, H, W});
  if (win % 2 == 0) --win;
  if (win < 1) throw std::invalid_argument("ssim: image too small");
  const auto window = detail::gaussian_window(win, 1.5);
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const int Ho = H - win + 1, Wo = W - win + 1;

  double total = 0.0;
  std::int64_t count = 0;
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      const double* pa = a.data() + (static_cast<std::int64_t>(t) * C + c) * H * W;
      const double* pb = b.data() + (static_cast<std::int64_t>(t) * C + c) * H * W;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          double mu_a = 0.0, mu_b = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
          for (int y = 0; y < win; ++y)
            for (int x = 0; x < win; ++x) {
              const double wgt = window[static_cast<std::size_t>(y) * win + x];
              const double va = pa[static_cast<std::int64_t>(oy + y) * W + ox + x];
              const double vb = pb[static_cast<std::int64_t>(oy + y) * W + ox + x];
              mu_a += wgt * va;
              mu_b += wgt * vb;
              aa += wgt * va * va;
              bb += wgt * vb * vb;
              ab += wgt * va * vb;
            }
          const double var_a = aa - mu_a * mu_a;
          const double var_b = bb - mu_b * mu_b;
          const double cov = ab - mu_a * mu_b;
          const double val = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                             ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
          total += val;
          ++count;
        }
    }
  return total / static_cast<double>(count);
}

}  // namespace vdiff::train
