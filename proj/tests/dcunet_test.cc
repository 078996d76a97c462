// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "mcdcunet/dcunet.h"

#include <gtest/gtest.h>

#include <complex>

#include "test_util.h"

namespace mcdc {
namespace {

using testing::MaxAbsDiff;
using testing::NaiveComplexConv2d;

Tensor Planar(const ComplexTensor &c) {
  const Shape &s = c.shape();
  Tensor out({s[0], 2 * s[1], s[2], s[3]});
  const int64_t per = s[1] * s[2] * s[3];
  for (int64_t n = 0; n < s[0]; ++n) {
    std::copy_n(c.real.data() + n * per, per, out.data() + 2 * n * per);
    std::copy_n(c.imag.data() + n * per, per, out.data() + (2 * n + 1) * per);
  }
  return out;
}

ComplexTensor Split(const Tensor &planar) {
  const Shape &s = planar.shape();
  ComplexTensor c(Shape{s[0], s[1] / 2, s[2], s[3]});
  const int64_t per = s[1] / 2 * s[2] * s[3];
  for (int64_t n = 0; n < s[0]; ++n) {
    std::copy_n(planar.data() + 2 * n * per, per, c.real.data() + n * per);
    std::copy_n(planar.data() + (2 * n + 1) * per, per, c.imag.data() + n * per);
  }
  return c;
}

ComplexTensor RandomComplex(const Shape &s, std::mt19937_64 &rng) {
  return {Tensor::Randn(s, rng), Tensor::Randn(s, rng)};
}

double MaxComplexDiff(const ComplexTensor &a, const ComplexTensor &b) {
  return std::max(MaxAbsDiff(a.real, b.real), MaxAbsDiff(a.imag, b.imag));
}

Tensor ApplyConv(const ComplexTensor &x, const ComplexTensor &w,
                 const ops::Conv2dGeometry &g) {
  Tape tape(false);
  return ComplexConv2d(tape.Constant(Planar(x)), tape.Constant(w.real),
                       tape.Constant(w.imag), g)
      .value();
}

// ---- complex convolution ----

TEST(ComplexConv, UnitKernelIsIdentity) {
  std::mt19937_64 rng(1);
  ComplexTensor x = RandomComplex({2, 1, 5, 6}, rng);
  ComplexTensor w(Shape{1, 1, 1, 1});
  w.real[0] = 1.0;
  ComplexTensor y = Split(ApplyConv(x, w, {}));
  EXPECT_EQ(MaxComplexDiff(y, x), 0.0);
}

TEST(ComplexConv, ImaginaryUnitKernelRotates) {
  std::mt19937_64 rng(2);
  ComplexTensor x = RandomComplex({1, 1, 4, 4}, rng);
  ComplexTensor w(Shape{1, 1, 1, 1});
  w.imag[0] = 1.0;
  ComplexTensor y = Split(ApplyConv(x, w, {}));
  for (int64_t i = 0; i < x.numel(); ++i) {
    EXPECT_EQ(y.real[i], -x.imag[i]);
    EXPECT_EQ(y.imag[i], x.real[i]);
  }
}

TEST(ComplexConv, TwoByTwoKernelMatchesScalarOracle) {
  std::mt19937_64 rng(3);
  ComplexTensor x = RandomComplex({1, 1, 4, 4}, rng);
  ComplexTensor w = RandomComplex({1, 1, 2, 2}, rng);
  ComplexTensor y = Split(ApplyConv(x, w, {}));
  EXPECT_LT(MaxComplexDiff(y, NaiveComplexConv2d(x, w, 1, 1, 0, 0)), 1e-12);
}

TEST(ComplexConv, RandomInstancesMatchScalarOracle) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> dim(1, 4), size(3, 9), half(0, 2), stride(1, 2);
  for (int trial = 0; trial < 120; ++trial) {
    const int cin = dim(rng), cout = dim(rng), n = 1 + trial % 2;
    const int kh = 2 * half(rng) + 1, kw = 2 * half(rng) + 1;
    const int sh = stride(rng), sw = stride(rng);
    ComplexTensor x = RandomComplex({n, cin, size(rng), size(rng)}, rng);
    ComplexTensor w = RandomComplex({cout, cin, kh, kw}, rng);
    const auto g = ops::Conv2dGeometry::Same(kh, kw, sh, sw);
    ComplexTensor y = Split(ApplyConv(x, w, g));
    ASSERT_LT(MaxComplexDiff(y, NaiveComplexConv2d(x, w, sh, sw, g.pad_h, g.pad_w)),
              1e-12)
        << "trial " << trial;
  }
}

TEST(ComplexConv, ComplexLinearity) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    ComplexTensor x = RandomComplex({2, 3, 9, 8}, rng);
    ComplexTensor w = RandomComplex({4, 3, 5, 3}, rng);
    const auto g = ops::Conv2dGeometry::Same(5, 3, 2, 2);
    ComplexTensor ix{Tensor(x.imag), Tensor(x.real)};
    ix.real.ScaleInPlace(-1.0);
    ComplexTensor y = Split(ApplyConv(x, w, g)), yi = Split(ApplyConv(ix, w, g));
    Tensor neg_imag = y.imag;
    neg_imag.ScaleInPlace(-1.0);
    EXPECT_LT(MaxAbsDiff(yi.real, neg_imag), 1e-12);
    EXPECT_LT(MaxAbsDiff(yi.imag, y.real), 1e-12);
  }
}

TEST(ComplexConv, ChannelMismatchIsAnError) {
  Tape tape(false);
  Var x = tape.Constant(Tensor({1, 6, 8, 8}));
  Var w = tape.Constant(Tensor({4, 2, 3, 3}));
  EXPECT_THROW(ComplexConv2d(x, w, w, {}), ShapeError);
  Var wi = tape.Constant(Tensor({4, 3, 3, 1}));
  EXPECT_THROW(ComplexConv2d(x, tape.Constant(Tensor({4, 3, 3, 3})), wi, {}),
               ShapeError);
}

TEST(ComplexConvTranspose, MatchesScalarOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t cin = 1 + trial % 3, cout = 1 + trial % 2, h = 4 + trial % 3,
                  wd = 3 + trial % 4;
    ComplexTensor x = RandomComplex({1, cin, h, wd}, rng);
    ComplexTensor w = RandomComplex({cin, cout, 3, 5}, rng);
    const auto g = ops::Conv2dGeometry::Same(3, 5, 2, 2);
    const int64_t oh = 2 * h - trial % 2, ow = 2 * wd - 1;
    Tape tape(false);
    ComplexTensor y = Split(ComplexConvTranspose2d(tape.Constant(Planar(x)),
                                                   tape.Constant(w.real),
                                                   tape.Constant(w.imag), g, oh, ow)
                                .value());
    ComplexTensor expect(Shape{1, cout, oh, ow});
    for (int64_t i = 0; i < cin; ++i)
      for (int64_t o = 0; o < cout; ++o)
        for (int64_t a = 0; a < h; ++a)
          for (int64_t b = 0; b < wd; ++b)
            for (int64_t p = 0; p < 3; ++p)
              for (int64_t q = 0; q < 5; ++q) {
                const int64_t y0 = a * 2 - g.pad_h + p, x0 = b * 2 - g.pad_w + q;
                if (y0 < 0 || y0 >= oh || x0 < 0 || x0 >= ow) continue;
                const std::complex<double> k(w.real.at({i, o, p, q}),
                                             w.imag.at({i, o, p, q}));
                const std::complex<double> v(x.real.at({0, i, a, b}),
                                             x.imag.at({0, i, a, b}));
                const auto r = k * v;
                expect.real.at({0, o, y0, x0}) += r.real();
                expect.imag.at({0, o, y0, x0}) += r.imag();
              }
    ASSERT_LT(MaxComplexDiff(y, expect), 1e-12) << "trial " << trial;
  }
}

// ---- model ----

TEST(Dcunet, LayerLayout) {
  Dcunet net;
  const auto &enc = net.encoder();
  ASSERT_EQ(enc.size(), 4u);
  EXPECT_EQ(enc[0].in_channels, 3);
  const int widths[] = {16, 32, 64, 64};
  const int kh[] = {7, 7, 7, 5}, kw[] = {5, 5, 5, 3};
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(enc[i].out_channels, widths[i]);
    EXPECT_EQ(enc[i].kernel_h, kh[i]);
    EXPECT_EQ(enc[i].kernel_w, kw[i]);
    EXPECT_TRUE(enc[i].batch_norm);
  }
  const auto &dec = net.decoder();
  const int dec_in[] = {64, 128, 64, 32}, dec_out[] = {64, 32, 16, 1};
  for (int j = 0; j < 4; ++j) {
    EXPECT_EQ(dec[j].in_channels, dec_in[j]);
    EXPECT_EQ(dec[j].out_channels, dec_out[j]);
  }
  EXPECT_FALSE(dec[3].batch_norm);
  EXPECT_FALSE(dec[3].activation);

  ParameterStore ps;
  std::mt19937_64 rng(7);
  net.InitParameters(ps, rng);
  EXPECT_EQ(ps.Get("enc1.wr").value.shape(), (Shape{16, 3, 7, 5}));
  EXPECT_EQ(ps.Get("dec1.wr").value.shape(), (Shape{64, 64, 5, 3}));
  EXPECT_FALSE(ps.Contains("dec4.bn.gamma"));
  EXPECT_EQ(ps.Get("enc1.bn.gamma").value.shape(), (Shape{32}));
  EXPECT_FALSE(ps.Get("enc1.bn.mean").trainable);
}

TEST(Dcunet, PreservesGeometryForRandomLengths) {
  Dcunet net;
  ParameterStore ps;
  std::mt19937_64 rng(8);
  net.InitParameters(ps, rng);
  std::uniform_int_distribution<int64_t> frames(16, 70);
  for (int trial = 0; trial < 6; ++trial) {
    const int64_t T = frames(rng);
    Tape tape(false);
    Tensor x = Tensor::Randn({1, 6, 257, T}, rng);
    Var y = net.Forward(tape, ps, tape.Constant(x), false);
    EXPECT_EQ(y.shape(), (Shape{1, 2, 257, T}));
  }
  Tape tape(false);
  auto enc = net.Encode(tape, ps, tape.Constant(Tensor({2, 6, 257, 98})), false);
  EXPECT_EQ(enc.bottleneck.shape(), (Shape{2, 128, 17, 7}));
}

TEST(Dcunet, ZeroInputGivesZeroOutput) {
  Dcunet net;
  ParameterStore ps;
  std::mt19937_64 rng(9);
  net.InitParameters(ps, rng);
  for (bool training : {false, true}) {
    Tape tape(false);
    Var y = net.Forward(tape, ps, tape.Constant(Tensor({2, 6, 33, 20})), training);
    EXPECT_EQ(y.value().MaxAbs(), 0.0);
  }
}

TEST(Dcunet, RejectsShortInput) {
  Dcunet net;
  ParameterStore ps;
  std::mt19937_64 rng(10);
  net.InitParameters(ps, rng);
  Tape tape(false);
  try {
    net.Forward(tape, ps, tape.Constant(Tensor({1, 6, 257, 15})), false);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument &e) {
    EXPECT_NE(std::string(e.what()).find("minimum is 16"), std::string::npos);
  }
  EXPECT_THROW(net.Forward(tape, ps, tape.Constant(Tensor({1, 4, 257, 20})), false),
               ShapeError);
}

TEST(Dcunet, InputLayerIsLinearInChannels) {
  Dcunet net;
  ParameterStore ps;
  std::mt19937_64 rng(11);
  net.InitParameters(ps, rng);
  auto make = [&](int64_t bins) {
    Spectrogram s;
    s.data = ComplexTensor(Tensor::Randn({1, bins, 20}, rng),
                           Tensor::Randn({1, bins, 20}, rng));
    return s;
  };
  Spectrogram a = make(33), b = make(33), r = make(33);
  Spectrogram zero;
  zero.data = ComplexTensor(Shape{1, 33, 20});
  const auto g = ops::Conv2dGeometry::Same(7, 5, 2, 2);
  auto pre = [&](const Spectrogram &m1, const Spectrogram &m2,
                 const Spectrogram &ref) {
    Tape tape(false);
    return ComplexConv2d(tape.Constant(PlanarInput(m1, m2, ref)),
                         tape.Param(ps.Get("enc1.wr")),
                         tape.Param(ps.Get("enc1.wi")), g)
        .value();
  };
  Tensor full = pre(a, b, r);
  Tensor only1 = pre(a, zero, zero);
  Tensor diff = full;
  diff.AddInPlace(pre(zero, b, zero), -1.0);
  diff.AddInPlace(pre(zero, zero, r), -1.0);
  EXPECT_LT(MaxAbsDiff(only1, diff), 1e-12);
  EXPECT_EQ(pre(zero, zero, zero).MaxAbs(), 0.0);
  EXPECT_EQ(full.shape(), (Shape{1, 32, 17, 10}));
  EXPECT_THROW(PlanarInput(a, make(17), r), ShapeError);
}

TEST(Dcunet, GradcheckAtTinyGeometry) {
  Dcunet net;
  Graph g({{"x", {2, 6, 17, 16}}},
          [&net](Tape &tape, ParameterStore &ps, const VarMap &in) {
            return VarMap{{"y", net.Forward(tape, ps, in.at("x"), true)}};
          });
  std::mt19937_64 rng(12);
  net.InitParameters(g.parameters(), rng);
  GradcheckOptions opts;
  opts.max_coords = 12;
  auto report = Gradcheck(g, {{"x", Tensor::Randn({2, 6, 17, 16}, rng)}}, 1e-4, opts);
  for (const auto &e : report.entries)
    EXPECT_TRUE(e.passed) << e.name << " rel " << e.max_rel_error;
  EXPECT_GE(report.entries.size(), 28u);
}

// ---- loss ----

TEST(EnhancementLoss, HandExamples) {
  Tape tape;
  Tensor pred({1, 2, 1, 1});
  pred[0] = 3.0;
  pred[1] = 4.0;
  EXPECT_DOUBLE_EQ(EnhancementLoss(tape.Constant(pred), Tensor({1, 1, 1}, 2.0))
                       .value()
                       .item(),
                   9.0);
  std::mt19937_64 rng(13);
  Tensor msup = Tensor::Uniform({2, 5, 4}, rng, 0.0, 2.0);
  double mean_sq = 0.0;
  for (double v : msup.values()) mean_sq += v * v / msup.numel();
  EXPECT_NEAR(EnhancementLoss(tape.Constant(Tensor({2, 2, 5, 4})), msup)
                  .value()
                  .item(),
              mean_sq, 1e-15);
  // Phase does not matter, only the magnitude.
  Tensor rot({2, 2, 5, 4});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t i = 0; i < 20; ++i) {
      const double phase = 0.37 * i + n;
      rot[(2 * n) * 20 + i] = msup[n * 20 + i] * std::cos(phase);
      rot[(2 * n + 1) * 20 + i] = msup[n * 20 + i] * std::sin(phase);
    }
  EXPECT_LT(EnhancementLoss(tape.Constant(rot), msup).value().item(), 1e-28);
  EXPECT_THROW(EnhancementLoss(tape.Constant(rot), Tensor({2, 5, 3})), ShapeError);
}

}  // namespace
}  // namespace mcdc
