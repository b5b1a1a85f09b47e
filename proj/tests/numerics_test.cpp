#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "testutil.hpp"
#include "vdiff/autodiff.hpp"
#include "vdiff/conv.hpp"
#include "vdiff/fft.hpp"
#include "vdiff/ops.hpp"
#include "vdiff/pool.hpp"
#include "vdiff/random.hpp"

using namespace vdiff;

namespace {

// Brute-force cross-correlation over [T,C,H,W]; independent of the library's
// convolution path.
Tensor conv2d_oracle(const Tensor& x, const Tensor& k, int stride, bool same, int groups) {
  const int T = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  const int Co = k.extent(0), Cg = k.extent(1), kh = k.extent(2), kw = k.extent(3);
  const int ph = same ? (kh - 1) / 2 : 0, pw = same ? (kw - 1) / 2 : 0;
  const int Ho = (H + 2 * ph - kh) / stride + 1, Wo = (W + 2 * pw - kw) / stride + 1;
  const int co_g = Co / groups;
  Tensor out({T, Co, Ho, Wo});
  for (int t = 0; t < T; ++t)
    for (int co = 0; co < Co; ++co)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          double acc = 0.0;
          const int g = co / co_g;
          for (int ci = 0; ci < Cg; ++ci)
            for (int r = 0; r < kh; ++r)
              for (int s = 0; s < kw; ++s) {
                const int ih = oh * stride - ph + r, iw = ow * stride - pw + s;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x.at4(t, g * Cg + ci, ih, iw) * k.at4(co, ci, r, s);
              }
          out.at4(t, co, oh, ow) = acc;
        }
  return out;
}

// Naive O(N^2) full 2D DFT sum; the quadruple loop is the oracle.
void dft_oracle(const Tensor& x, Tensor& re, Tensor& im) {
  const int H = x.extent(0), W = x.extent(1);
  re = Tensor({H, W});
  im = Tensor({H, W});
  const double pi = 3.14159265358979323846;
  for (int u = 0; u < H; ++u)
    for (int v = 0; v < W; ++v) {
      double ar = 0.0, ai = 0.0;
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const double ang = -2.0 * pi * (static_cast<double>(u) * h / H + static_cast<double>(v) * w / W);
          ar += x.at2(h, w) * std::cos(ang);
          ai += x.at2(h, w) * std::sin(ang);
        }
      re.at2(u, v) = ar;
      im.at2(u, v) = ai;
    }
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
  RandomSource rng(1);
  Value x = constant(rng.normal_tensor({2, 3, 4, 5}));
  Tensor k({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) k.at4(c, c, 0, 0) = 1.0;
  Value y = conv2d(x, constant(k), Value(), 1, Pad::same);
  EXPECT_EQ(vdtest::max_abs_diff(y.tensor(), x.tensor()), 0.0);
}

TEST(Conv2d, AllOnesOnConstant) {
  Value x = constant(Tensor::ones({1, 1, 4, 4}));
  Value y = conv2d(x, constant(Tensor::ones({1, 1, 3, 3})), Value(), 1, Pad::same);
  // Hand-summed: corners see a 2x2 window, edges 2x3, interior 3x3.
  EXPECT_DOUBLE_EQ(y.tensor().at4(0, 0, 0, 0), 4.0);
  EXPECT_DOUBLE_EQ(y.tensor().at4(0, 0, 0, 1), 6.0);
  EXPECT_DOUBLE_EQ(y.tensor().at4(0, 0, 1, 1), 9.0);
  EXPECT_DOUBLE_EQ(y.tensor().at4(0, 0, 3, 3), 4.0);
}

TEST(Conv2d, MatchesOracle) {
  RandomSource rng(7);
  Tensor x = rng.normal_tensor({1, 3, 5, 5});
  Tensor k = rng.normal_tensor({2, 3, 3, 3});
  Value y = conv2d(constant(x), constant(k), Value(), 1, Pad::same);
  EXPECT_LT(vdtest::max_abs_diff(y.tensor(), conv2d_oracle(x, k, 1, true, 1)), 1e-12);

  Value yv = conv2d(constant(x), constant(k), Value(), 1, Pad::valid);
  EXPECT_LT(vdtest::max_abs_diff(yv.tensor(), conv2d_oracle(x, k, 1, false, 1)), 1e-12);

  Value ys = conv2d(constant(x), constant(k), Value(), 2, Pad::same);
  EXPECT_LT(vdtest::max_abs_diff(ys.tensor(), conv2d_oracle(x, k, 2, true, 1)), 1e-12);

  // Depthwise (groups == C_in).
  Tensor kd = rng.normal_tensor({3, 1, 3, 3});
  Value yd = conv2d(constant(x), constant(kd), Value(), 1, Pad::same, 3);
  EXPECT_LT(vdtest::max_abs_diff(yd.tensor(), conv2d_oracle(x, kd, 1, true, 3)), 1e-12);
}

TEST(Conv2d, RejectsMismatchedShapes) {
  RandomSource rng(3);
  Value x = constant(rng.normal_tensor({1, 3, 5, 5}));
  Value k = constant(rng.normal_tensor({2, 4, 3, 3}));
  try {
    conv2d(x, k, Value(), 1, Pad::same);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("kernel"), std::string::npos);
  }
}

TEST(Conv2d, GradMatchesFiniteDifferences) {
  RandomSource rng(11);
  Value x = parameter(rng.normal_tensor({1, 2, 4, 4}), "x");
  Value k = parameter(rng.normal_tensor({2, 2, 3, 3}), "k");
  Value b = parameter(rng.normal_tensor({2}), "b");
  auto loss = [&] {
    Value y = conv2d(x, k, b, 2, Pad::same);
    return sum_all(mul(y, y));
  };
  auto rep = vdtest::gradcheck(loss, {x, k, b});
  EXPECT_LT(rep.max_rel_err, 1e-6) << rep.worst;
}

TEST(Conv3d, IdentityAndTemporalAverage) {
  RandomSource rng(5);
  Tensor x = rng.normal_tensor({2, 3, 4, 4});  // [C,T,H,W]
  Tensor k({2, 2, 1, 1, 1});
  k.buffer()[0 * 2 + 0] = 1.0;  // k[0,0,...] = 1
  k.buffer()[1 * 2 + 1] = 1.0;  // k[1,1,...] = 1
  Value y = conv3d(constant(x), constant(k), Value(), 1, Pad::same);
  EXPECT_EQ(vdtest::max_abs_diff(y.tensor(), x), 0.0);

  // Temporal 3-tap average of a temporally constant video keeps interior
  // frames unchanged.
  Tensor frame = rng.normal_tensor({1, 1, 3, 3});
  Tensor vid({1, 3, 3, 3});
  for (int t = 0; t < 3; ++t)
    for (std::int64_t i = 0; i < 9; ++i) vid.buffer()[t * 9 + static_cast<std::size_t>(i)] = frame[i];
  Tensor avg({1, 1, 3, 1, 1});
  for (int q = 0; q < 3; ++q) avg.buffer()[static_cast<std::size_t>(q)] = 1.0 / 3.0;
  Value ya = conv3d(constant(vid), constant(avg), Value(), 1, Pad::same);
  for (std::int64_t i = 0; i < 9; ++i)
    EXPECT_NEAR(ya.tensor()[9 + i], vid[9 + i], 1e-12);  // t=1 is interior
}

TEST(Conv3d, MatchesOracle) {
  RandomSource rng(13);
  Tensor x = rng.normal_tensor({2, 3, 4, 5});  // [C,T,H,W]
  Tensor k = rng.normal_tensor({3, 2, 3, 3, 3});
  Value y = conv3d(constant(x), constant(k), Value(), 1, Pad::same);
  // Independent quintuple loop.
  const int C = 2, T = 3, H = 4, W = 5, Co = 3;
  double worst = 0.0;
  for (int co = 0; co < Co; ++co)
    for (int t = 0; t < T; ++t)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          double acc = 0.0;
          for (int ci = 0; ci < C; ++ci)
            for (int q = -1; q <= 1; ++q)
              for (int r = -1; r <= 1; ++r)
                for (int s = -1; s <= 1; ++s) {
                  const int it = t + q, ih = h + r, iw = w + s;
                  if (it < 0 || it >= T || ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                  acc += x.at4(ci, it, ih, iw) *
                         k[((((co * C) + ci) * 3 + (q + 1)) * 3 + (r + 1)) * 3 + (s + 1)];
                }
          worst = std::max(worst, std::abs(acc - y.tensor().at4(co, t, h, w)));
        }
  EXPECT_LT(worst, 1e-12);
}

TEST(Conv3d, GradMatchesFiniteDifferences) {
  RandomSource rng(17);
  Value x = parameter(rng.normal_tensor({2, 2, 3, 3}), "x");
  Value k = parameter(rng.normal_tensor({2, 2, 3, 3, 3}), "k");
  Value b = parameter(rng.normal_tensor({2}), "b");
  auto loss = [&] { return sum_all(gelu(conv3d(x, k, b, 1, Pad::same))); };
  auto rep = vdtest::gradcheck(loss, {x, k, b});
  EXPECT_LT(rep.max_rel_err, 1e-6) << rep.worst;
}

TEST(LayerNorm, ConstantInputGivesZeros) {
  Value x = constant(Tensor::full({2, 3, 2, 2}, 4.2));
  Value y = layernorm(x, {1}, 1e-6);
  EXPECT_EQ(vdtest::max_abs_diff(y.tensor(), Tensor::zeros({2, 3, 2, 2})), 0.0);
}

TEST(LayerNorm, TwoPointClosedForm) {
  Value x = constant(Tensor({1, 2}, {1.0, 3.0}));
  Value y = layernorm(x, {1}, 1e-12);
  EXPECT_NEAR(y.tensor()[0], -1.0, 1e-9);
  EXPECT_NEAR(y.tensor()[1], 1.0, 1e-9);
}

TEST(LayerNorm, GroupMoments) {
  RandomSource rng(19);
  Value x = constant(rng.normal_tensor({2, 8, 3, 3}));
  Value y = layernorm(x, {1}, 1e-8);
  const Tensor& t = y.tensor();
  for (int tt = 0; tt < 2; ++tt)
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 3; ++w) {
        double mean = 0.0, var = 0.0;
        for (int c = 0; c < 8; ++c) mean += t.at4(tt, c, h, w);
        mean /= 8.0;
        for (int c = 0; c < 8; ++c) {
          const double d = t.at4(tt, c, h, w) - mean;
          var += d * d;
        }
        var /= 8.0;
        EXPECT_LT(std::abs(mean), 1e-10);
        EXPECT_LT(std::abs(var - 1.0), 1e-6);
      }
}

TEST(LayerNorm, RejectsBadArgs) {
  Value x = constant(Tensor::ones({2, 2}));
  EXPECT_THROW(layernorm(x, {}, 1e-6), std::invalid_argument);
  EXPECT_THROW(layernorm(x, {1}, 0.0), std::invalid_argument);
}

TEST(LayerNorm, GradMatchesFiniteDifferences) {
  RandomSource rng(23);
  Value x = parameter(rng.normal_tensor({2, 4, 2, 2}), "x");
  auto loss = [&] {
    Value y = layernorm(x, {1}, 1e-5);
    return sum_all(mul(y, sigmoid(y)));
  };
  auto rep = vdtest::gradcheck(loss, {x});
  EXPECT_LT(rep.max_rel_err, 1e-5) << rep.worst;
}

TEST(Softmax, HandValues) {
  Value y = softmax(constant(Tensor({1, 2}, {0.0, 0.0})), 1);
  EXPECT_DOUBLE_EQ(y.tensor()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.tensor()[1], 0.5);

  Value z = softmax(
      constant(Tensor({1, 3}, {std::log(1.0), std::log(2.0), std::log(3.0)})), 1);
  EXPECT_NEAR(z.tensor()[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(z.tensor()[1], 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(z.tensor()[2], 3.0 / 6.0, 1e-15);
}

TEST(Softmax, ShiftInvarianceAndRowSums) {
  Tensor base({2, 3}, {1.0, -2.0, 3.0, 0.0, 5.0, -1.0});
  Tensor shifted = base;
  for (std::int64_t i = 0; i < shifted.numel(); ++i) shifted[i] += 100.0;
  Value a = softmax(constant(base), 1);
  Value b = softmax(constant(shifted), 1);
  EXPECT_EQ(vdtest::max_abs_diff(a.tensor(), b.tensor()), 0.0);

  RandomSource rng(29);
  Value c = softmax(constant(rng.normal_tensor({4, 7})), 1);
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int j = 0; j < 7; ++j) s += c.tensor().at2(r, j);
    EXPECT_LT(std::abs(s - 1.0), 1e-12);
  }
}

TEST(Softmax, RejectsNonFinite) {
  Tensor bad({2}, {1.0, std::numeric_limits<double>::infinity()});
  EXPECT_THROW(softmax(constant(bad), 0), std::invalid_argument);
}

TEST(Softmax, GradMatchesFiniteDifferences) {
  RandomSource rng(31);
  Value x = parameter(rng.normal_tensor({3, 4}), "x");
  Value w = constant(rng.normal_tensor({3, 4}));
  auto loss = [&] { return sum_all(mul(softmax(x, 1), w)); };
  auto rep = vdtest::gradcheck(loss, {x});
  EXPECT_LT(rep.max_rel_err, 1e-6) << rep.worst;
}

TEST(Elementwise, SigmoidAndGelu) {
  Value s = sigmoid(constant_scalar(0.0));
  EXPECT_DOUBLE_EQ(s.tensor()[0], 0.5);
  Value g = gelu(constant_scalar(0.0));
  EXPECT_DOUBLE_EQ(g.tensor()[0], 0.0);
  EXPECT_GT(gelu(constant_scalar(2.0)).tensor()[0], 1.9);
  EXPECT_LT(gelu(constant_scalar(-3.0)).tensor()[0], 0.0);
}

TEST(Elementwise, GradChecks) {
  RandomSource rng(37);
  Value x = parameter(rng.normal_tensor({5}), "x");
  Value y = parameter(rng.normal_tensor({5}), "y");
  auto loss = [&] {
    Value a = gelu(x) * sigmoid(y) + leaky_relu(x, 0.1) * y;
    return sum_all(a * a);
  };
  auto rep = vdtest::gradcheck(loss, {x, y});
  EXPECT_LT(rep.max_rel_err, 1e-6) << rep.worst;
}

TEST(Fft2d, DcOnlyForConstant) {
  const double c = 1.7;
  auto [re, im] = fft2d(constant(Tensor::full({3, 5}, c)));
  EXPECT_NEAR(re.tensor().at2(0, 0), c * 15.0, 1e-9);
  double off = 0.0;
  for (std::int64_t i = 1; i < 15; ++i) off = std::max(off, std::abs(re.tensor()[i]));
  for (std::int64_t i = 0; i < 15; ++i) off = std::max(off, std::abs(im.tensor()[i]));
  EXPECT_LT(off, 1e-9);
}

TEST(Fft2d, MatchesNaiveDftOracle) {
  RandomSource rng(41);
  Tensor x = rng.normal_tensor({4, 4});
  auto [re, im] = fft2d(constant(x));
  Tensor ore, oim;
  dft_oracle(x, ore, oim);
  double scale = std::sqrt(vdtest::sumsq(ore) + vdtest::sumsq(oim));
  EXPECT_LT(vdtest::max_abs_diff(re.tensor(), ore) / scale, 1e-9);
  EXPECT_LT(vdtest::max_abs_diff(im.tensor(), oim) / scale, 1e-9);

  // Odd extents take the non-power-of-two path.
  Tensor x2 = rng.normal_tensor({3, 5});
  auto [re2, im2] = fft2d(constant(x2));
  const int H = 3, W = 5;
  double worst = 0.0;
  const double pi = 3.14159265358979323846;
  for (int u = 0; u < H; ++u)
    for (int v = 0; v < W; ++v) {
      double ar = 0.0, ai = 0.0;
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const double ang = -2.0 * pi * (static_cast<double>(u) * h / H + static_cast<double>(v) * w / W);
          ar += x2.at2(h, w) * std::cos(ang);
          ai += x2.at2(h, w) * std::sin(ang);
        }
      worst = std::max(worst, std::abs(ar - re2.tensor().at2(u, v)));
      worst = std::max(worst, std::abs(ai - im2.tensor().at2(u, v)));
    }
  EXPECT_LT(worst, 1e-9);
}

TEST(Fft2d, LinearityAndParseval) {
  RandomSource rng(43);
  Tensor a = rng.normal_tensor({6, 6});
  Tensor b = rng.normal_tensor({6, 6});
  Tensor combo(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) combo[i] = 2.0 * a[i] - 0.5 * b[i];
  auto [ra, ia] = fft2d(constant(a));
  auto [rb, ib] = fft2d(constant(b));
  auto [rc, ic] = fft2d(constant(combo));
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(rc.tensor()[i] - (2.0 * ra.tensor()[i] - 0.5 * rb.tensor()[i])));
    worst = std::max(worst, std::abs(ic.tensor()[i] - (2.0 * ia.tensor()[i] - 0.5 * ib.tensor()[i])));
  }
  EXPECT_LT(worst / std::sqrt(vdtest::sumsq(rc.tensor()) + 1.0), 1e-9);

  const double spatial = vdtest::sumsq(a);
  const double spectral = (vdtest::sumsq(ra.tensor()) + vdtest::sumsq(ia.tensor())) / 36.0;
  EXPECT_LT(std::abs(spatial - spectral) / spatial, 1e-9);
}

TEST(Fft2d, GradMatchesFiniteDifferences) {
  RandomSource rng(47);
  Value x = parameter(rng.normal_tensor({3, 4}), "x");
  Value wr = constant(rng.normal_tensor({3, 4}));
  Value wi = constant(rng.normal_tensor({3, 4}));
  auto loss = [&] {
    auto [re, im] = fft2d(x);
    return sum_all(abs_val(mul(re, wr))) + sum_all(abs_val(mul(im, wi)));
  };
  auto rep = vdtest::gradcheck(loss, {x});
  EXPECT_LT(rep.max_rel_err, 1e-5) << rep.worst;
}

TEST(Pooling, AvgMaxUpsample) {
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Value a = avg_pool2x(constant(x));
  ASSERT_EQ(a.tensor().shape(), (std::vector<int>{1, 1, 2, 2}));
  EXPECT_DOUBLE_EQ(a.tensor()[0], 3.0);   // (1+2+4+5)/4
  EXPECT_DOUBLE_EQ(a.tensor()[1], 4.5);   // (3+6)/2 clipped window
  EXPECT_DOUBLE_EQ(a.tensor()[2], 7.5);   // (7+8)/2
  EXPECT_DOUBLE_EQ(a.tensor()[3], 9.0);   // single cell
  Value m = max_pool2x(constant(x));
  EXPECT_DOUBLE_EQ(m.tensor()[0], 5.0);
  EXPECT_DOUBLE_EQ(m.tensor()[3], 9.0);

  RandomSource rng(53);
  Value u = upsample_bilinear(constant(rng.normal_tensor({1, 2, 2, 2})), 4, 4);
  ASSERT_EQ(u.tensor().shape(), (std::vector<int>{1, 2, 4, 4}));
}

TEST(Pooling, GradChecks) {
  RandomSource rng(59);
  Value x = parameter(rng.normal_tensor({1, 2, 5, 4}), "x");
  Value w = constant(rng.normal_tensor({1, 2, 3, 2}));
  auto loss = [&] { return sum_all(mul(avg_pool2x(x), w)); };
  EXPECT_LT(vdtest::gradcheck(loss, {x}).max_rel_err, 1e-6);

  auto loss2 = [&] { return sum_all(mul(max_pool2x(x), w)); };
  EXPECT_LT(vdtest::gradcheck(loss2, {x}).max_rel_err, 1e-6);

  Value w3 = constant(rng.normal_tensor({1, 2, 7, 9}));
  auto loss3 = [&] { return sum_all(mul(upsample_bilinear(x, 7, 9), w3)); };
  EXPECT_LT(vdtest::gradcheck(loss3, {x}).max_rel_err, 1e-6);
}

TEST(Grad, SumGivesOnes) {
  RandomSource rng(61);
  ParamStore store;
  Value p = store.add("p", rng.normal_tensor({7}));
  Gradient g = grad(sum_all(p), store);
  EXPECT_EQ(vdtest::max_abs_diff(g.by_name.at("p"), Tensor::ones({7})), 0.0);
  EXPECT_TRUE(g.unreachable.empty());
}

TEST(Grad, HalfSumOfSquaresGivesParameter) {
  RandomSource rng(67);
  ParamStore store;
  Value p = store.add("p", rng.normal_tensor({5}));
  store.zero_grad();
  Gradient g = grad(mul_scalar(sum_all(mul(p, p)), 0.5), store);
  EXPECT_LT(vdtest::max_abs_diff(g.by_name.at("p"), p.tensor()), 1e-14);
}

TEST(Grad, UnreachableParameterFlagged) {
  RandomSource rng(71);
  ParamStore store;
  Value p = store.add("used", rng.normal_tensor({3}));
  store.add("orphan", rng.normal_tensor({4}));
  Gradient g = grad(sum_all(p), store);
  ASSERT_EQ(g.unreachable.size(), 1u);
  EXPECT_EQ(g.unreachable[0], "orphan");
  EXPECT_EQ(vdtest::max_abs_diff(g.by_name.at("orphan"), Tensor::zeros({4})), 0.0);
}

TEST(Grad, ComposedLossFiniteDifference) {
  RandomSource rng(73);
  Value a = parameter(rng.normal_tensor({2, 3}), "a");
  Value b = parameter(rng.normal_tensor({3, 2}), "b");
  auto loss = [&] {
    Value y = matmul(a, b);
    return mean_all(mul(gelu(y), sigmoid(y)));
  };
  auto rep = vdtest::gradcheck(loss, {a, b});
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.worst;
}

TEST(Grad, ReusedNodeAccumulates) {
  // p appears twice in p*p; the tape must accumulate both contributions.
  Value p = parameter(Tensor({1}, {3.0}), "p");
  Value loss = sum_all(mul(p, p));
  backward(loss);
  EXPECT_DOUBLE_EQ(p.grad()[0], 6.0);
}

TEST(Shape, PermuteNarrowConcatRoundTrip) {
  RandomSource rng(79);
  Tensor x = rng.normal_tensor({2, 3, 4, 5});
  Value v = constant(x);
  Value p = permute(permute(v, {1, 0, 2, 3}), {1, 0, 2, 3});
  EXPECT_EQ(vdtest::max_abs_diff(p.tensor(), x), 0.0);
  Value left = narrow(v, 1, 0, 2), right = narrow(v, 1, 2, 1);
  Value back = concat({left, right}, 1);
  EXPECT_EQ(vdtest::max_abs_diff(back.tensor(), x), 0.0);
}

TEST(Determinism, RepeatedEvaluationBitIdentical) {
  RandomSource rng(83);
  Tensor x = rng.normal_tensor({1, 4, 6, 6});
  Tensor k = rng.normal_tensor({4, 4, 3, 3});
  Value y1 = conv2d(constant(x), constant(k), Value(), 1, Pad::same);
  Value y2 = conv2d(constant(x), constant(k), Value(), 1, Pad::same);
  EXPECT_EQ(vdtest::max_abs_diff(y1.tensor(), y2.tensor()), 0.0);
}
