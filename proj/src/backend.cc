// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "mcdcunet/backend.h"

#include <cmath>
#include <stdexcept>

#include "mcdcunet/ops.h"

namespace mcdc {
namespace {

std::vector<int64_t> BridgePerm(int64_t channels) {
  const int64_t c = channels / 2;
  std::vector<int64_t> perm(channels);
  for (int64_t k = 0; k < c; ++k) {
    perm[2 * k] = k;
    perm[2 * k + 1] = c + k;
  }
  return perm;
}

void CheckEvenChannels(const Var &x, const char *where) {
  if (x.shape().size() < 2 || x.size(1) % 2 != 0)
    throw ShapeError(std::string(where) + ": expected an even channel count, got " +
                     ShapeString(x.shape()));
}

int64_t Ceil(int64_t n, int64_t d) { return (n + d - 1) / d; }

}  // namespace

Var BridgeComplexToReal(const Var &planar) {
  CheckEvenChannels(planar, "BridgeComplexToReal");
  return ops::PermuteChannels(planar, BridgePerm(planar.size(1)));
}

Var UnbridgeRealToComplex(const Var &bridged) {
  CheckEvenChannels(bridged, "UnbridgeRealToComplex");
  const auto fwd = BridgePerm(bridged.size(1));
  std::vector<int64_t> inv(fwd.size());
  for (size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = static_cast<int64_t>(i);
  return ops::PermuteChannels(bridged, inv);
}

BackendConfig BackendConfig::PaperScale() {
  BackendConfig c;
  c.tdnn_layers = 12;
  c.hidden = 1024;
  c.num_classes = 2888;
  return c;
}

int64_t BackendConfig::Conv2Height() const {
  return Ceil(Ceil(in_height, freq_stride), freq_stride);
}

void BackendConfig::Validate() const {
  if (in_channels <= 0 || in_height <= 0 || conv1_filters <= 0 ||
      conv2_filters <= 0 || hidden <= 0 || num_classes <= 0)
    throw std::invalid_argument("BackendConfig: sizes must be positive");
  if (tdnn_layers < 1)
    throw std::invalid_argument("BackendConfig: need at least the output layer");
  if (context < 0 || dilation < 1 || freq_stride < 1)
    throw std::invalid_argument("BackendConfig: invalid context, dilation or stride");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("BackendConfig: dropout must lie in [0, 1)");
}

Backend::Backend(BackendConfig cfg, std::string prefix)
    : cfg_(cfg), prefix_(std::move(prefix)) {
  cfg_.Validate();
}

void Backend::InitParameters(ParameterStore &ps, std::mt19937_64 &rng) const {
  auto he = [](int64_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  auto add_bn = [&](const std::string &name, int64_t ch) {
    ps.Add(name + ".bn.gamma", Tensor::Ones({ch}));
    ps.Add(name + ".bn.beta", Tensor::Zeros({ch}));
    ps.Add(name + ".bn.mean", Tensor::Zeros({ch}), false);
    ps.Add(name + ".bn.var", Tensor::Ones({ch}), false);
  };
  const std::string p = prefix_ + ".";
  ps.Add(p + "conv1.w",
         Tensor::Randn({cfg_.conv1_filters, cfg_.in_channels, cfg_.conv1_kh, cfg_.conv1_kw},
                       rng, he(int64_t{cfg_.in_channels} * cfg_.conv1_kh * cfg_.conv1_kw)));
  add_bn(p + "conv1", cfg_.conv1_filters);
  ps.Add(p + "conv2.w",
         Tensor::Randn({cfg_.conv2_filters, cfg_.conv1_filters, cfg_.conv2_kh, cfg_.conv2_kw},
                       rng, he(int64_t{cfg_.conv1_filters} * cfg_.conv2_kh * cfg_.conv2_kw)));
  add_bn(p + "conv2", cfg_.conv2_filters);
  int64_t in = cfg_.conv2_filters * cfg_.Conv2Height();
  const int64_t width = 2 * cfg_.context + 1;
  for (int l = 1; l < cfg_.tdnn_layers; ++l) {
    const std::string name = p + "tdnn" + std::to_string(l);
    ps.Add(name + ".w", Tensor::Randn({cfg_.hidden, in, 1, width}, rng, he(in * width)));
    add_bn(name, cfg_.hidden);
    in = cfg_.hidden;
  }
  ps.Add(p + "out.w", Tensor::Randn({cfg_.num_classes, in, 1, 1}, rng,
                                    std::sqrt(1.0 / static_cast<double>(in))));
  ps.Add(p + "out.b", Tensor::Zeros({cfg_.num_classes}));
}

Var Backend::Forward(Tape &tape, ParameterStore &ps, const Var &features,
                     bool training, std::mt19937_64 &rng) const {
  const Shape &s = features.shape();
  if (s.size() != 4 || s[1] != cfg_.in_channels || s[2] != cfg_.in_height)
    throw ShapeError("Backend: expected features (N, " +
                     std::to_string(cfg_.in_channels) + ", " +
                     std::to_string(cfg_.in_height) + ", frames), got " +
                     ShapeString(s));
  const std::string p = prefix_ + ".";
  auto bn_relu = [&](const Var &x, const std::string &name) {
    ops::BatchNormState st{&ps.Get(name + ".bn.mean"), &ps.Get(name + ".bn.var"),
                           cfg_.bn_momentum};
    return ops::Relu(ops::BatchNorm(x, tape.Param(ps.Get(name + ".bn.gamma")),
                                    tape.Param(ps.Get(name + ".bn.beta")), st,
                                    training));
  };
  Var h = ApplyDropout(features, cfg_.dropout, training, rng);
  h = ops::Conv2d(h, tape.Param(ps.Get(p + "conv1.w")),
                  ops::Conv2dGeometry::Same(cfg_.conv1_kh, cfg_.conv1_kw,
                                            cfg_.freq_stride, 1));
  h = bn_relu(h, p + "conv1");
  h = ops::Conv2d(h, tape.Param(ps.Get(p + "conv2.w")),
                  ops::Conv2dGeometry::Same(cfg_.conv2_kh, cfg_.conv2_kw,
                                            cfg_.freq_stride, 1));
  h = bn_relu(h, p + "conv2");
  const int64_t N = s[0], T = s[3];
  // (channels x frequency) become the TDNN feature dimension.
  h = ops::Reshape(h, {N, h.size(1) * h.size(2), 1, T});
  const int width = 2 * cfg_.context + 1;
  for (int l = 1; l < cfg_.tdnn_layers; ++l) {
    const std::string name = p + "tdnn" + std::to_string(l);
    h = ops::Conv2d(h, tape.Param(ps.Get(name + ".w")),
                    ops::Conv2dGeometry::Same(1, width, 1, 1, 1, cfg_.dilation));
    h = bn_relu(h, name);
  }
  h = ops::Conv2d(h, tape.Param(ps.Get(p + "out.w")), {});
  h = ops::AddChannelBias(ops::Reshape(h, {N, cfg_.num_classes, T}),
                          tape.Param(ps.Get(p + "out.b")));
  return ops::LogSoftmax(h);
}

Var CeProxyLoss(const Var &log_probs, const std::vector<int> &labels) {
  return ops::NllLoss(log_probs, labels);
}

Var ApplyDropout(const Var &x, double p, bool training, std::mt19937_64 &rng) {
  return ops::Dropout(x, p, training, rng);
}

}  // namespace mcdc
