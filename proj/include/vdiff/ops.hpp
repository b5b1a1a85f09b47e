#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdiff/autodiff.hpp"
#include "vdiff/tensor.hpp"

namespace vdiff {

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Value add(const Value& a, const Value& b) {
  require_same_shape(a.tensor(), b.tensor(), "add");
  Tensor out = a.tensor();
  const Tensor& tb = b.tensor();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
  return detail::make_op(std::move(out), {a, b}, [](Node& n) {
    for (int p = 0; p < 2; ++p) {
      Node& parent = *n.parents[p];
      if (!parent.requires_grad) continue;
      Tensor& g = parent.ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
  });
}

inline Value sub(const Value& a, const Value& b) {
  require_same_shape(a.tensor(), b.tensor(), "sub");
  Tensor out = a.tensor();
  const Tensor& tb = b.tensor();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= tb[i];
  return detail::make_op(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

inline Value mul(const Value& a, const Value& b) {
  require_same_shape(a.tensor(), b.tensor(), "mul");
  Tensor out = a.tensor();
  const Tensor& tb = b.tensor();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= tb[i];
  return detail::make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& va = n.parents[0]->value;
    const Tensor& vb = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * vb[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * va[i];
    }
  });
}

inline Value neg(const Value& a) {
  Tensor out = a.tensor();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = -out[i];
  return detail::make_op(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
  });
}

inline Value mul_scalar(const Value& a, double s) {
  Tensor out = a.tensor();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return detail::make_op(std::move(out), {a}, [s](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += s * n.grad[i];
  });
}

inline Value add_scalar(const Value& a, double s) {
  Tensor out = a.tensor();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += s;
  return detail::make_op(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

/// x * s where s is a [1] tensor (scalar-with-tensor broadcast).
inline Value scale_by(const Value& x, const Value& s) {
  if (s.numel() != 1) throw std::invalid_argument("scale_by: scale must be a scalar");
  const double sv = s.tensor()[0];
  Tensor out = x.tensor();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= sv;
  return detail::make_op(std::move(out), {x, s}, [](Node& n) {
    const Tensor& vx = n.parents[0]->value;
    const double sv = n.parents[1]->value[0];
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += sv * n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->ensure_grad();
      double acc = 0.0;
      for (std::int64_t i = 0; i < vx.numel(); ++i) acc += n.grad[i] * vx[i];
      g[0] += acc;
    }
  });
}

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

inline Value gelu(const Value& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  Tensor out = x.tensor();
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const double v = out[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  return detail::make_op(std::move(out), {x}, [](Node& n) {
    const Tensor& vx = n.parents[0]->value;
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double v = vx[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += n.grad[i] * (cdf + v * pdf);
    }
  });
}

inline double sigmoid_scalar(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline Value sigmoid(const Value& x) {
  Tensor out = x.tensor();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = sigmoid_scalar(out[i]);
  Tensor saved = out;
  return detail::make_op(std::move(out), {x}, [saved](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double y = saved[i];
      g[i] += n.grad[i] * y * (1.0 - y);
    }
  });
}

inline Value relu(const Value& x) {
  Tensor out = x.tensor();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return detail::make_op(std::move(out), {x}, [](Node& n) {
    const Tensor& vx = n.parents[0]->value;
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += vx[i] > 0.0 ? n.grad[i] : 0.0;
  });
}

inline Value leaky_relu(const Value& x, double slope) {
  Tensor out = x.tensor();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] >= 0.0 ? out[i] : slope * out[i];
  return detail::make_op(std::move(out), {x}, [slope](Node& n) {
    const Tensor& vx = n.parents[0]->value;
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i)
      g[i] += n.grad[i] * (vx[i] >= 0.0 ? 1.0 : slope);
  });
}

inline Value exp_val(const Value& x) {
  Tensor out = x.tensor();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  Tensor saved = out;
  return detail::make_op(std::move(out), {x}, [saved](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * saved[i];
  });
}

/// |x| with subgradient 0 at ties.
inline Value abs_val(const Value& x) {
  Tensor out = x.tensor();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::abs(out[i]);
  return detail::make_op(std::move(out), {x}, [](Node& n) {
    const Tensor& vx = n.parents[0]->value;
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double s = vx[i] > 0.0 ? 1.0 : (vx[i] < 0.0 ? -1.0 : 0.0);
      g[i] += n.grad[i] * s;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Value sum_all(const Value& x) {
  double acc = 0.0;
  const Tensor& t = x.tensor();
  for (std::int64_t i = 0; i < t.numel(); ++i) acc += t[i];
  return detail::make_op(Tensor::scalar(acc), {x}, [](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    const double gv = n.grad[0];
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += gv;
  });
}

inline Value mean_all(const Value& x) { return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

inline Value reshape(const Value& x, std::vector<int> shape) {
  Tensor out = x.tensor().reshaped(std::move(shape));
  return detail::make_op(std::move(out), {x}, [](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

namespace detail {

inline std::vector<std::int64_t> row_major_strides(const std::vector<int>& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    s[i] = s[i + 1] * shape[i + 1];
  return s;
}

}  // namespace detail

inline Value permute(const Value& x, const std::vector<int>& perm) {
  const Tensor& t = x.tensor();
  const int r = t.rank();
  if (static_cast<int>(perm.size()) != r) throw std::invalid_argument("permute: rank mismatch");
  std::vector<int> out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = t.extent(perm[i]);
  const auto in_strides = detail::row_major_strides(t.shape());
  Tensor out(out_shape);
  std::vector<int> idx(r, 0);
  for (std::int64_t o = 0; o < out.numel(); ++o) {
    std::int64_t src = 0;
    for (int i = 0; i < r; ++i) src += static_cast<std::int64_t>(idx[i]) * in_strides[perm[i]];
    out[o] = t[src];
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return detail::make_op(std::move(out), {x}, [perm, out_shape](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    const auto in_strides = detail::row_major_strides(n.parents[0]->value.shape());
    const int r = static_cast<int>(perm.size());
    std::vector<int> idx(r, 0);
    for (std::int64_t o = 0; o < n.grad.numel(); ++o) {
      std::int64_t src = 0;
      for (int i = 0; i < r; ++i) src += static_cast<std::int64_t>(idx[i]) * in_strides[perm[i]];
      g[src] += n.grad[o];
      for (int i = r - 1; i >= 0; --i) {
        if (++idx[i] < out_shape[i]) break;
        idx[i] = 0;
      }
    }
  });
}

/// Slice of `len` extents starting at `start` along `axis`.
inline Value narrow(const Value& x, int axis, int start, int len) {
  const Tensor& t = x.tensor();
  if (axis < 0 || axis >= t.rank()) throw std::invalid_argument("narrow: bad axis");
  if (start < 0 || len <= 0 || start + len > t.extent(axis))
    throw std::invalid_argument("narrow: slice out of bounds");
  std::vector<int> out_shape = t.shape();
  out_shape[axis] = len;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= t.extent(i);
  for (int i = axis + 1; i < t.rank(); ++i) inner *= t.extent(i);
  const std::int64_t in_axis = t.extent(axis);
  Tensor out(out_shape);
  for (std::int64_t o = 0; o < outer; ++o)
    for (int a = 0; a < len; ++a)
      for (std::int64_t i = 0; i < inner; ++i)
        out[(o * len + a) * inner + i] = t[(o * in_axis + start + a) * inner + i];
  return detail::make_op(std::move(out), {x}, [axis, start, len, outer, inner, in_axis](Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o)
      for (int a = 0; a < len; ++a)
        for (std::int64_t i = 0; i < inner; ++i)
          g[(o * in_axis + start + a) * inner + i] += n.grad[(o * len + a) * inner + i];
  });
}

inline Value concat(const std::vector<Value>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input list");
  const Tensor& first = xs[0].tensor();
  const int r = first.rank();
  if (axis < 0 || axis >= r) throw std::invalid_argument("concat: bad axis");
  int total = 0;
  for (const auto& v : xs) {
    const Tensor& t = v.tensor();
    if (t.rank() != r) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && t.extent(i) != first.extent(i))
        throw std::invalid_argument("concat: extent mismatch off the concat axis");
    total += t.extent(axis);
  }
  std::vector<int> out_shape = first.shape();
  out_shape[axis] = total;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= first.extent(i);
  for (int i = axis + 1; i < r; ++i) inner *= first.extent(i);
  Tensor out(out_shape);
  std::vector<int> lens;
  int off = 0;
  for (const auto& v : xs) {
    const Tensor& t = v.tensor();
    const int len = t.extent(axis);
    lens.push_back(len);
    for (std::int64_t o = 0; o < outer; ++o)
      for (int a = 0; a < len; ++a)
        for (std::int64_t i = 0; i < inner; ++i)
          out[(o * total + off + a) * inner + i] = t[(o * len + a) * inner + i];
    off += len;
  }
  return detail::make_op(std::move(out), xs, [lens, outer, inner, total](Node& n) {
    int off = 0;
    for (std::size_t p = 0; p < n.parents.size(); ++p) {
      const int len = lens[p];
      if (n.parents[p]->requires_grad) {
        Tensor& g = n.parents[p]->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o)
          for (int a = 0; a < len; ++a)
            for (std::int64_t i = 0; i < inner; ++i)
              g[(o * len + a) * inner + i] += n.grad[(o * total + off + a) * inner + i];
      }
      off += len;
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Value matmul(const Value& a, const Value& b) {
  const Tensor& ta = a.tensor();
  const Tensor& tb = b.tensor();
  if (ta.rank() != 2 || tb.rank() != 2)
    throw std::invalid_argument("matmul: expects rank-2 operands");
  if (ta.extent(1) != tb.extent(0))
    throw std::invalid_argument("matmul: inner extents disagree, " + ta.shape_str() + " vs " +
                                tb.shape_str());
  const int m = ta.extent(0), k = ta.extent(1), n = tb.extent(1);
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double av = ta.at2(i, p);
      if (av == 0.0) continue;
      for (int j = 0; j < n; ++j) out.at2(i, j) += av * tb.at2(p, j);
    }
  return detail::make_op(std::move(out), {a, b}, [m, k, n](Node& nd) {
    const Tensor& ta = nd.parents[0]->value;
    const Tensor& tb = nd.parents[1]->value;
    if (nd.parents[0]->requires_grad) {
      Tensor& ga = nd.parents[0]->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const double gv = nd.grad.at2(i, j);
          if (gv == 0.0) continue;
          for (int p = 0; p < k; ++p) ga.at2(i, p) += gv * tb.at2(p, j);
        }
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& gb = nd.parents[1]->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          const double av = ta.at2(i, p);
          if (av == 0.0) continue;
          for (int j = 0; j < n; ++j) gb.at2(p, j) += av * nd.grad.at2(i, j);
        }
    }
  });
}

inline Value transpose2d(const Value& x) {
  const Tensor& t = x.tensor();
  if (t.rank() != 2) throw std::invalid_argument("transpose2d: expects rank-2 operand");
  return permute(x, {1, 0});
}

/// y[t, :] = x[t, :] + b for a [T, D] matrix and [D] row vector.
inline Value add_rowvec(const Value& x, const Value& b) {
  const Tensor& tx = x.tensor();
  const Tensor& tb = b.tensor();
  if (tx.rank() != 2 || tb.rank() != 1 || tb.extent(0) != tx.extent(1))
    throw std::invalid_argument("add_rowvec: shape mismatch " + tx.shape_str() + " vs " +
                                tb.shape_str());
  const int rows = tx.extent(0), cols = tx.extent(1);
  Tensor out = tx;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out.at2(i, j) += tb[j];
  return detail::make_op(std::move(out), {x, b}, [rows, cols](Node& n) {
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->ensure_grad();
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) g[j] += n.grad.at2(i, j);
    }
  });
}

// ---------------------------------------------------------------------------
// Channel broadcasts over [T, C, H, W]
// ---------------------------------------------------------------------------

namespace detail {

inline void check_video_and_percframe(const Tensor& x, const Tensor& s, const char* op) {
  if (x.rank() != 4) throw std::invalid_argument(std::string(op) + ": feature must be [T,C,H,W]");
  if (s.rank() != 2 || s.extent(0) != x.extent(0) || s.extent(1) != x.extent(1))
    throw std::invalid_argument(std::string(op) + ": per-frame vector shape " + s.shape_str() +
                                " does not match feature " + x.shape_str());
}

}  // namespace detail

/// out[t,c,h,w] = x[t,c,h,w] * s[t,c]
inline Value scale_channels(const Value& x, const Value& s) {
  detail::check_video_and_percframe(x.tensor(), s.tensor(), "scale_channels");
  const Tensor& tx = x.tensor();
  const Tensor& ts = s.tensor();
  const int T = tx.extent(0), C = tx.extent(1);
  const std::int64_t hw = static_cast<std::int64_t>(tx.extent(2)) * tx.extent(3);
  Tensor out = tx;
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      const double sv = ts.at2(t, c);
      double* p = out.data() + (static_cast<std::int64_t>(t) * C + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) p[i] *= sv;
    }
  return detail::make_op(std::move(out), {x, s}, [T, C, hw](Node& n) {
    const Tensor& tx = n.parents[0]->value;
    const Tensor& ts = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->ensure_grad();
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c) {
          const double sv = ts.at2(t, c);
          const std::int64_t base = (static_cast<std::int64_t>(t) * C + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) g[base + i] += sv * n.grad[base + i];
        }
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->ensure_grad();
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c) {
          const std::int64_t base = (static_cast<std::int64_t>(t) * C + c) * hw;
          double acc = 0.0;
          for (std::int64_t i = 0; i < hw; ++i) acc += n.grad[base + i] * tx[base + i];
          g.at2(t, c) += acc;
        }
    }
  });
}

/// out[t,c,h,w] = x[t,c,h,w] + b[t,c]
inline Value shift_channels(const Value& x, const Value& b) {
  detail::check_video_and_percframe(x.tensor(), b.tensor(), "shift_channels");
  const Tensor& tx = x.tensor();
  const Tensor& tb = b.tensor();
  const int T = tx.extent(0), C = tx.extent(1);
  const std::int64_t hw = static_cast<std::int64_t>(tx.extent(2)) * tx.extent(3);
  Tensor out = tx;
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      const double bv = tb.at2(t, c);
      double* p = out.data() + (static_cast<std::int64_t>(t) * C + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) p[i] += bv;
    }
  return detail::make_op(std::move(out), {x, b}, [T, C, hw](Node& n) {
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->ensure_grad();
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c) {
          const std::int64_t base = (static_cast<std::int64_t>(t) * C + c) * hw;
          double acc = 0.0;
          for (std::int64_t i = 0; i < hw; ++i) acc += n.grad[base + i];
          g.at2(t, c) += acc;
        }
    }
  });
}

/// out[t,c,h,w] = x[t,c,h,w] + b[c]
inline Value bias_channels(const Value& x, const Value& b) {
  const Tensor& tx = x.tensor();
  const Tensor& tb = b.tensor();
  if (tx.rank() != 4 || tb.rank() != 1 || tb.extent(0) != tx.extent(1))
    throw std::invalid_argument("bias_channels: bias shape " + tb.shape_str() +
                                " does not match feature " + tx.shape_str());
  const int T = tx.extent(0), C = tx.extent(1);
  const std::int64_t hw = static_cast<std::int64_t>(tx.extent(2)) * tx.extent(3);
  Tensor out = tx;
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      const double bv = tb[c];
      double* p = out.data() + (static_cast<std::int64_t>(t) * C + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) p[i] += bv;
    }
  return detail::make_op(std::move(out), {x, b}, [T, C, hw](Node& n) {
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->ensure_grad();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->ensure_grad();
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c) {
          const std::int64_t base = (static_cast<std::int64_t>(t) * C + c) * hw;
          double acc = 0.0;
          for (std::int64_t i = 0; i < hw; ++i) acc += n.grad[base + i];
          g[c] += acc;
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and softmax
// ---------------------------------------------------------------------------

/// Layer normalization over the given axes: each group (all positions varying
/// along `axes` at a fixed setting of the remaining axes) is shifted to mean 0
/// and scaled to unit variance (biased estimator, eps inside the sqrt).
inline Value layernorm(const Value& x, const std::vector<int>& axes, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("layernorm: eps must be positive");
  if (axes.empty()) throw std::invalid_argument("layernorm: empty normalization group");
  const Tensor& t = x.tensor();
  const int r = t.rank();
  std::vector<bool> in_group(r, false);
  for (int a : axes) {
    if (a < 0 || a >= r) throw std::invalid_argument("layernorm: bad axis");
    in_group[a] = true;
  }
  // Key stride layout: flatten the non-group axes.
  std::int64_t n_keys = 1, group = 1;
  for (int i = 0; i < r; ++i) (in_group[i] ? group : n_keys) *= t.extent(i);
  const auto strides = detail::row_major_strides(t.shape());

  // Map each flat element to its key once; reused by forward and backward.
  std::vector<std::int64_t> key_of(static_cast<std::size_t>(t.numel()));
  {
    std::vector<int> idx(r, 0);
    for (std::int64_t f = 0; f < t.numel(); ++f) {
      std::int64_t key = 0;
      for (int i = 0; i < r; ++i)
        if (!in_group[i]) key = key * t.extent(i) + idx[i];
      key_of[f] = key;
      for (int i = r - 1; i >= 0; --i) {
        if (++idx[i] < t.extent(i)) break;
        idx[i] = 0;
      }
    }
  }

  std::vector<double> mean(n_keys, 0.0), var(n_keys, 0.0);
  for (std::int64_t f = 0; f < t.numel(); ++f) mean[key_of[f]] += t[f];
  for (auto& m : mean) m /= static_cast<double>(group);
  for (std::int64_t f = 0; f < t.numel(); ++f) {
    const double d = t[f] - mean[key_of[f]];
    var[key_of[f]] += d * d;
  }
  for (auto& v : var) v /= static_cast<double>(group);

  Tensor out(t.shape());
  std::vector<double> inv_sigma(n_keys);
  for (std::int64_t k = 0; k < n_keys; ++k) inv_sigma[k] = 1.0 / std::sqrt(var[k] + eps);
  for (std::int64_t f = 0; f < t.numel(); ++f)
    out[f] = (t[f] - mean[key_of[f]]) * inv_sigma[key_of[f]];
  Tensor normalized = out;

  return detail::make_op(
      std::move(out), {x},
      [key_of = std::move(key_of), inv_sigma = std::move(inv_sigma), normalized, n_keys,
       group](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        std::vector<double> sum_g(n_keys, 0.0), sum_gx(n_keys, 0.0);
        for (std::int64_t f = 0; f < n.grad.numel(); ++f) {
          sum_g[key_of[f]] += n.grad[f];
          sum_gx[key_of[f]] += n.grad[f] * normalized[f];
        }
        const double inv_n = 1.0 / static_cast<double>(group);
        for (std::int64_t f = 0; f < n.grad.numel(); ++f) {
          const std::int64_t k = key_of[f];
          g[f] += inv_sigma[k] *
                  (n.grad[f] - inv_n * sum_g[k] - normalized[f] * inv_n * sum_gx[k]);
        }
      });
}

inline Value softmax(const Value& x, int axis) {
  const Tensor& t = x.tensor();
  if (axis < 0 || axis >= t.rank()) throw std::invalid_argument("softmax: bad axis");
  for (std::int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i])) throw std::invalid_argument("softmax: non-finite input");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= t.extent(i);
  for (int i = axis + 1; i < t.rank(); ++i) inner *= t.extent(i);
  const int n = t.extent(axis);
  Tensor out(t.shape());
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * n * inner + i;
      double mx = t[base];
      for (int a = 1; a < n; ++a) mx = std::max(mx, t[base + a * inner]);
      double z = 0.0;
      for (int a = 0; a < n; ++a) {
        const double e = std::exp(t[base + a * inner] - mx);
        out[base + a * inner] = e;
        z += e;
      }
      const double inv_z = 1.0 / z;
      for (int a = 0; a < n; ++a) out[base + a * inner] *= inv_z;
    }
  Tensor saved = out;
  return detail::make_op(std::move(out), {x}, [saved, outer, inner, n](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t base = o * n * inner + i;
        double dot = 0.0;
        for (int a = 0; a < n; ++a) dot += nd.grad[base + a * inner] * saved[base + a * inner];
        for (int a = 0; a < n; ++a)
          g[base + a * inner] += saved[base + a * inner] * (nd.grad[base + a * inner] - dot);
      }
  });
}

}  // namespace vdiff
