#pragma once

#include <stdexcept>
#include <string>

#include "vdiff/autodiff.hpp"
#include "vdiff/fft.hpp"
#include "vdiff/ops.hpp"
#include "vdiff/pool.hpp"

namespace vdiff::train {

/// Sum over frames of the per-frame mean absolute error. The per-frame mean
/// keeps the loss scale independent of resolution.
inline Value l1_loss(const Value& v_hq, const Value& v_gt) {
  require_same_shape(v_hq.tensor(), v_gt.tensor(), "l1_loss");
  const Tensor& t = v_hq.tensor();
  if (t.rank() != 4) throw std::invalid_argument("l1_loss: expects [T,C,H,W]");
  const double per_frame = static_cast<double>(t.extent(1)) * t.extent(2) * t.extent(3);
  return mul_scalar(sum_all(abs_val(sub(v_hq, v_gt))), 1.0 / per_frame);
}

/// Multi-scale frequency reconstruction: L1 distance between 2D Fourier
/// transforms (|d re| + |d im|) summed over frames and channels at K scales
/// obtained by 2x average pooling, each scale weighted by 1/(H_k*W_k).
inline Value msfr_loss(const Value& v_hq, const Value& v_gt, int scales) {
  require_same_shape(v_hq.tensor(), v_gt.tensor(), "msfr_loss");
  if (scales < 1) throw std::invalid_argument("msfr_loss: scale count must be >= 1");
  if (v_hq.tensor().rank() != 4) throw std::invalid_argument("msfr_loss: expects [T,C,H,W]");
  // FT is linear, so FT(a)-FT(b) = FT(a-b); one transform per scale suffices.
  Value diff = sub(v_hq, v_gt);
  Value total;
  for (int k = 0; k < scales; ++k) {
    const int h = diff.tensor().extent(2), w = diff.tensor().extent(3);
    auto [re, im] = fft2d(diff);
    Value term = mul_scalar(add(sum_all(abs_val(re)), sum_all(abs_val(im))),
                            1.0 / (static_cast<double>(h) * w));
    total = total.defined() ? add(total, term) : term;
    if (k + 1 < scales) {
      if (h < 2 && w < 2)
        throw std::invalid_argument("msfr_loss: scale " + std::to_string(k + 2) +
                                    " would reduce an extent below 1");
      diff = avg_pool2x(diff);
    }
  }
  return total;
}

/// L1 + lambda * MSFR.
inline Value deblur_loss(const Value& v_hq, const Value& v_gt, double lambda, int scales) {
  if (lambda < 0.0) throw std::invalid_argument("deblur_loss: lambda must be nonnegative");
  Value l1 = l1_loss(v_hq, v_gt);
  if (lambda == 0.0) return l1;
  return add(l1, mul_scalar(msfr_loss(v_hq, v_gt, scales), lambda));
}

/// Sum over frames of the per-frame mean absolute latent error.
inline Value latent_l1_loss(const Value& z_target, const Value& z_sampled) {
  require_same_shape(z_target.tensor(), z_sampled.tensor(), "latent_l1_loss");
  const Tensor& t = z_target.tensor();
  if (t.rank() != 2) throw std::invalid_argument("latent_l1_loss: expects [T,D]");
  return mul_scalar(sum_all(abs_val(sub(z_target, z_sampled))), 1.0 / t.extent(1));
}

/// Joint objective: deblurring loss plus diffusion loss on the same batch.
inline Value total_loss(const Value& v_hq, const Value& v_gt, const Value& z_target,
                        const Value& z_sampled, double lambda, int scales) {
  return add(deblur_loss(v_hq, v_gt, lambda, scales), latent_l1_loss(z_target, z_sampled));
}

}  // namespace vdiff::train
