// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "mcdcunet/dcunet.h"

#include <cmath>
#include <stdexcept>

namespace mcdc {
namespace {

void CheckKernelPair(const Var &wr, const Var &wi, const char *where) {
  if (wr.shape() != wi.shape() || wr.shape().size() != 4)
    throw ShapeError(std::string(where) + ": real kernel " +
                     ShapeString(wr.shape()) + " and imaginary kernel " +
                     ShapeString(wi.shape()) + " must be identical 4-D shapes");
}

// Halves of a planar complex map along the channel axis.
std::pair<Var, Var> Planes(const Var &x) {
  const int64_t c = x.size(1) / 2;
  return {ops::Slice(x, 1, 0, c), ops::Slice(x, 1, c, c)};
}

}  // namespace

Var ComplexConv2d(const Var &x, const Var &wr, const Var &wi,
                  const ops::Conv2dGeometry &geom) {
  CheckKernelPair(wr, wi, "ComplexConv2d");
  if (x.shape().size() != 4 || x.size(1) != 2 * wr.size(1))
    throw ShapeError("ComplexConv2d: input " + ShapeString(x.shape()) +
                     " does not carry " + std::to_string(wr.size(1)) +
                     " complex channels");
  // Rows: outputs (real, imag); columns: inputs (real, imag).
  Var neg_wi = ops::Scale(wi, -1.0);
  Var top = ops::Concat({wr, neg_wi}, 1);
  Var bottom = ops::Concat({wi, wr}, 1);
  return ops::Conv2d(x, ops::Concat({top, bottom}, 0), geom);
}

Var ComplexConvTranspose2d(const Var &x, const Var &wr, const Var &wi,
                           const ops::Conv2dGeometry &geom, int64_t out_h,
                           int64_t out_w) {
  CheckKernelPair(wr, wi, "ComplexConvTranspose2d");
  if (x.shape().size() != 4 || x.size(1) != 2 * wr.size(0))
    throw ShapeError("ComplexConvTranspose2d: input " + ShapeString(x.shape()) +
                     " does not carry " + std::to_string(wr.size(0)) +
                     " complex channels");
  // Rows: inputs (real, imag); columns: outputs (real, imag).
  Var neg_wi = ops::Scale(wi, -1.0);
  Var top = ops::Concat({wr, wi}, 1);
  Var bottom = ops::Concat({neg_wi, wr}, 1);
  return ops::ConvTranspose2d(x, ops::Concat({top, bottom}, 0), geom, out_h,
                              out_w);
}

Var ComplexConcat(const Var &a, const Var &b) {
  auto [ar, ai] = Planes(a);
  auto [br, bi] = Planes(b);
  return ops::Concat({ar, br, ai, bi}, 1);
}

Tensor ToPlanar(const Spectrogram &s) {
  const int64_t C = s.channels(), F = s.bins(), T = s.frames();
  Tensor out({1, 2 * C, F, T});
  std::copy_n(s.data.real.data(), C * F * T, out.data());
  std::copy_n(s.data.imag.data(), C * F * T, out.data() + C * F * T);
  return out;
}

Spectrogram FromPlanar(const Tensor &planar, const StftConfig &cfg,
                       int64_t batch) {
  if (planar.dim() != 4 || planar.size(1) % 2 != 0)
    throw ShapeError("FromPlanar: expected planar (N, 2C, F, T), got " +
                     ShapeString(planar.shape()));
  const int64_t C = planar.size(1) / 2, F = planar.size(2), T = planar.size(3);
  Spectrogram s;
  s.config = cfg;
  s.data = ComplexTensor(Shape{C, F, T});
  const double *src = planar.data() + batch * 2 * C * F * T;
  std::copy_n(src, C * F * T, s.data.real.data());
  std::copy_n(src + C * F * T, C * F * T, s.data.imag.data());
  return s;
}

Tensor PlanarInput(const Spectrogram &mic1, const Spectrogram &mic2,
                   const Spectrogram &reference) {
  for (const Spectrogram *s : {&mic1, &mic2, &reference})
    if (s->channels() != 1)
      throw ShapeError("PlanarInput: each input must be single-channel, got " +
                       ShapeString(s->data.shape()));
  return ToPlanar(Spectrogram::Stack({mic1, mic2, reference}));
}

Dcunet::Dcunet(DcunetConfig cfg) : cfg_(std::move(cfg)) {
  const size_t depth = cfg_.encoder_channels.size();
  if (depth == 0 || cfg_.encoder_kernels.size() != depth)
    throw std::invalid_argument("Dcunet: encoder channels and kernels must have "
                                "the same non-zero length");
  int in = cfg_.input_channels;
  for (size_t i = 0; i < depth; ++i) {
    const auto [kh, kw] = cfg_.encoder_kernels[i];
    if (kh % 2 == 0 || kw % 2 == 0)
      throw std::invalid_argument("Dcunet: kernels must be odd");
    ComplexLayerSpec s;
    s.name = "enc" + std::to_string(i + 1);
    s.in_channels = in;
    s.out_channels = cfg_.encoder_channels[i];
    s.kernel_h = kh;
    s.kernel_w = kw;
    encoder_.push_back(s);
    in = s.out_channels;
  }
  // Decoder stage j undoes encoder stage depth-1-j. Its output joins the
  // matching encoder activation; the last stage emits one complex map.
  for (size_t j = 0; j < depth; ++j) {
    const ComplexLayerSpec &mirror = encoder_[depth - 1 - j];
    ComplexLayerSpec s;
    s.name = "dec" + std::to_string(j + 1);
    s.transposed = true;
    s.in_channels = j == 0 ? mirror.out_channels : 2 * mirror.out_channels;
    s.kernel_h = mirror.kernel_h;
    s.kernel_w = mirror.kernel_w;
    const bool last = j + 1 == depth;
    s.out_channels = last ? 1 : encoder_[depth - 2 - j].out_channels;
    s.batch_norm = s.activation = !last;
    decoder_.push_back(s);
  }
}

int64_t Dcunet::MinFrames() const { return int64_t{1} << encoder_.size(); }

void Dcunet::InitParameters(ParameterStore &ps, std::mt19937_64 &rng) const {
  auto add_layer = [&](const ComplexLayerSpec &s) {
    const int64_t fan_in =
        int64_t{s.in_channels} * s.kernel_h * s.kernel_w;
    const int64_t fan_out =
        int64_t{s.out_channels} * s.kernel_h * s.kernel_w;
    // Complex Glorot: Var(W) = 2 / (fan_in + fan_out), split over two parts.
    const double stddev = std::sqrt(1.0 / static_cast<double>(fan_in + fan_out));
    const Shape shape = s.transposed
                            ? Shape{s.in_channels, s.out_channels, s.kernel_h, s.kernel_w}
                            : Shape{s.out_channels, s.in_channels, s.kernel_h, s.kernel_w};
    ps.Add(s.name + ".wr", Tensor::Randn(shape, rng, stddev));
    ps.Add(s.name + ".wi", Tensor::Randn(shape, rng, stddev));
    if (s.batch_norm) {
      const int64_t planes = 2 * int64_t{s.out_channels};
      ps.Add(s.name + ".bn.gamma", Tensor::Ones({planes}));
      ps.Add(s.name + ".bn.beta", Tensor::Zeros({planes}));
      ps.Add(s.name + ".bn.mean", Tensor::Zeros({planes}), false);
      ps.Add(s.name + ".bn.var", Tensor::Ones({planes}), false);
    }
  };
  for (const auto &s : encoder_) add_layer(s);
  for (const auto &s : decoder_) add_layer(s);
}

Var Dcunet::Block(Tape &tape, ParameterStore &ps, const ComplexLayerSpec &spec,
                  const Var &x, bool training, int64_t out_h,
                  int64_t out_w) const {
  Var wr = tape.Param(ps.Get(spec.name + ".wr"));
  Var wi = tape.Param(ps.Get(spec.name + ".wi"));
  const auto geom = ops::Conv2dGeometry::Same(spec.kernel_h, spec.kernel_w,
                                              spec.stride_h, spec.stride_w);
  Var y = spec.transposed ? ComplexConvTranspose2d(x, wr, wi, geom, out_h, out_w)
                          : ComplexConv2d(x, wr, wi, geom);
  if (spec.batch_norm) {
    // Real and imaginary planes are independent BN channels.
    ops::BatchNormState st{&ps.Get(spec.name + ".bn.mean"),
                           &ps.Get(spec.name + ".bn.var"), cfg_.bn_momentum,
                           cfg_.bn_eps};
    y = ops::BatchNorm(y, tape.Param(ps.Get(spec.name + ".bn.gamma")),
                       tape.Param(ps.Get(spec.name + ".bn.beta")), st, training);
  }
  if (spec.activation) y = ops::LeakyRelu(y, cfg_.leaky_slope);
  return y;
}

Dcunet::Encoded Dcunet::Encode(Tape &tape, ParameterStore &ps, const Var &x,
                               bool training) const {
  const Shape &s = x.shape();
  if (s.size() != 4 || s[1] != 2 * cfg_.input_channels)
    throw ShapeError("Dcunet: expected planar input (N, " +
                     std::to_string(2 * cfg_.input_channels) +
                     ", bins, frames), got " + ShapeString(s));
  if (s[3] < MinFrames() || s[2] < MinFrames())
    throw std::invalid_argument(
        "Dcunet: input of " + std::to_string(s[2]) + " bins x " +
        std::to_string(s[3]) + " frames is too short for " +
        std::to_string(encoder_.size()) + " stride-2 stages; minimum is " +
        std::to_string(MinFrames()) + " frames and bins");
  Encoded enc;
  enc.geometry.emplace_back(s[2], s[3]);
  Var h = x;
  for (size_t i = 0; i < encoder_.size(); ++i) {
    h = Block(tape, ps, encoder_[i], h, training);
    enc.geometry.emplace_back(h.size(2), h.size(3));
    if (i + 1 < encoder_.size()) enc.skips.push_back(h);
  }
  enc.bottleneck = h;
  return enc;
}

Var Dcunet::Decode(Tape &tape, ParameterStore &ps, const Encoded &enc,
                   bool training) const {
  const size_t depth = decoder_.size();
  Var h = enc.bottleneck;
  for (size_t j = 0; j < depth; ++j) {
    const auto [oh, ow] = enc.geometry[depth - 1 - j];
    h = Block(tape, ps, decoder_[j], h, training, oh, ow);
    if (j + 1 < depth) h = ComplexConcat(h, enc.skips[depth - 2 - j]);
  }
  return h;
}

Var Dcunet::Forward(Tape &tape, ParameterStore &ps, const Var &x,
                    bool training) const {
  return Decode(tape, ps, Encode(tape, ps, x, training), training);
}

Spectrogram Dcunet::Enhance(ParameterStore &ps,
                            const Spectrogram &three_channel) const {
  if (three_channel.channels() != cfg_.input_channels)
    throw ShapeError("Dcunet::Enhance: expected " +
                     std::to_string(cfg_.input_channels) +
                     " channels, got " + ShapeString(three_channel.data.shape()));
  Tape tape(false);
  Var y = Forward(tape, ps, tape.Constant(ToPlanar(three_channel)), false);
  return FromPlanar(y.value(), three_channel.config);
}

Var EnhancementLoss(const Var &prediction, const Tensor &supervision) {
  const Shape &p = prediction.shape();
  if (p.size() != 4 || p[1] != 2)
    throw ShapeError("EnhancementLoss: prediction must be planar (N, 2, F, T), "
                     "got " + ShapeString(p));
  CheckSameShape(Shape{p[0], p[2], p[3]}, supervision.shape(),
                 "EnhancementLoss supervision");
  Var mag = ops::Magnitude(ops::Slice(prediction, 1, 0, 1),
                           ops::Slice(prediction, 1, 1, 1));
  return ops::MseLoss(ops::Reshape(mag, {p[0], p[2], p[3]}), supervision);
}

}  // namespace mcdc
