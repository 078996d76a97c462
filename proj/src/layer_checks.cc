// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "mcdcunet/layer_checks.h"

#include <chrono>
#include <cstdio>

#include "mcdcunet/ops.h"

namespace mcdc {
namespace {

using Init = std::function<void(ParameterStore &, std::mt19937_64 &)>;

LayerCheck Check(const std::string &layer, const Shape &x_shape, Graph::Builder build,
                 const Init &init, double tolerance, uint64_t seed,
                 int64_t max_coords = 32, bool check_inputs = true) {
  const auto t0 = std::chrono::steady_clock::now();
  Graph g({{"x", x_shape}}, std::move(build));
  std::mt19937_64 rng(seed);
  if (init) init(g.parameters(), rng);
  GradcheckOptions opts;
  opts.max_coords = max_coords;
  opts.check_inputs = check_inputs;
  opts.seed = seed;
  LayerCheck out;
  out.layer = layer;
  out.report = Gradcheck(g, {{"x", Tensor::Randn(x_shape, rng)}}, tolerance, opts);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

void AddBn(ParameterStore &ps, const std::string &name, int64_t ch, std::mt19937_64 &rng) {
  ps.Add(name + ".gamma", Tensor::Uniform({ch}, rng, 0.5, 1.5));
  ps.Add(name + ".beta", Tensor::Randn({ch}, rng, 0.1));
  ps.Add(name + ".mean", Tensor::Zeros({ch}), false);
  ps.Add(name + ".var", Tensor::Ones({ch}), false);
}

Var ApplyBn(Tape &tape, ParameterStore &ps, const std::string &name, const Var &x) {
  ops::BatchNormState st{&ps.Get(name + ".mean"), &ps.Get(name + ".var")};
  return ops::BatchNorm(x, tape.Param(ps.Get(name + ".gamma")),
                        tape.Param(ps.Get(name + ".beta")), st, true);
}

}  // namespace

std::vector<LayerCheck> RunLayerGradchecks(double tolerance, const ModelPreset &preset,
                                           uint64_t seed) {
  std::vector<LayerCheck> out;
  const auto same = [](int kh, int kw, int sh, int sw) {
    return ops::Conv2dGeometry::Same(kh, kw, sh, sw);
  };

  out.push_back(Check(
      "complex_conv2d", {2, 4, 7, 6},
      [&](Tape &tape, ParameterStore &ps, const VarMap &in) {
        return VarMap{{"y", ComplexConv2d(in.at("x"), tape.Param(ps.Get("wr")),
                                          tape.Param(ps.Get("wi")), same(3, 3, 2, 2))}};
      },
      [](ParameterStore &ps, std::mt19937_64 &rng) {
        ps.Add("wr", Tensor::Randn({3, 2, 3, 3}, rng, 0.3));
        ps.Add("wi", Tensor::Randn({3, 2, 3, 3}, rng, 0.3));
      },
      tolerance, seed));

  out.push_back(Check(
      "complex_conv_transpose2d", {2, 6, 4, 3},
      [&](Tape &tape, ParameterStore &ps, const VarMap &in) {
        return VarMap{{"y", ComplexConvTranspose2d(in.at("x"), tape.Param(ps.Get("wr")),
                                                   tape.Param(ps.Get("wi")),
                                                   same(3, 3, 2, 2), 7, 6)}};
      },
      [](ParameterStore &ps, std::mt19937_64 &rng) {
        ps.Add("wr", Tensor::Randn({3, 2, 3, 3}, rng, 0.3));
        ps.Add("wi", Tensor::Randn({3, 2, 3, 3}, rng, 0.3));
      },
      tolerance, seed));

  // Real and imaginary planes of a complex map are separate BN channels.
  out.push_back(Check(
      "split_batch_norm", {3, 4, 3, 4},
      [&](Tape &tape, ParameterStore &ps, const VarMap &in) {
        return VarMap{{"y", ApplyBn(tape, ps, "bn", in.at("x"))}};
      },
      [](ParameterStore &ps, std::mt19937_64 &rng) { AddBn(ps, "bn", 4, rng); }, tolerance,
      seed));

  out.push_back(Check(
      "leaky_relu", {2, 3, 4, 5},
      [&](Tape &, ParameterStore &, const VarMap &in) {
        return VarMap{{"y", ops::LeakyRelu(in.at("x"), preset.dcunet.leaky_slope)}};
      },
      nullptr, tolerance, seed));

  out.push_back(Check(
      "bridge", {2, 8, 3, 4},
      [&](Tape &, ParameterStore &, const VarMap &in) {
        return VarMap{{"y", BridgeComplexToReal(in.at("x"))}};
      },
      nullptr, tolerance, seed));

  out.push_back(Check(
      "real_cnn", {2, 1, 12, 6},
      [&](Tape &tape, ParameterStore &ps, const VarMap &in) {
        Var y = ops::Conv2d(in.at("x"), tape.Param(ps.Get("w")), same(5, 3, 2, 1));
        return VarMap{{"y", ops::Relu(ApplyBn(tape, ps, "bn", y))}};
      },
      [](ParameterStore &ps, std::mt19937_64 &rng) {
        ps.Add("w", Tensor::Randn({4, 1, 5, 3}, rng, 0.4));
        AddBn(ps, "bn", 4, rng);
      },
      tolerance, seed));

  out.push_back(Check(
      "tdnn", {2, 10, 1, 9},
      [&](Tape &tape, ParameterStore &ps, const VarMap &in) {
        Var y = ops::Conv2d(in.at("x"), tape.Param(ps.Get("w")),
                            ops::Conv2dGeometry::Same(1, 5, 1, 1, 1, 2));
        return VarMap{{"y", y}};
      },
      [](ParameterStore &ps, std::mt19937_64 &rng) {
        ps.Add("w", Tensor::Randn({6, 10, 1, 5}, rng, 0.3));
      },
      tolerance, seed));

  out.push_back(Check(
      "log_softmax", {2, 8, 5},
      [&](Tape &, ParameterStore &, const VarMap &in) {
        return VarMap{{"y", ops::LogSoftmax(in.at("x"))}};
      },
      nullptr, tolerance, seed));

  {
    std::mt19937_64 rng(seed + 1);
    const Tensor sup = Tensor::Uniform({2, 5, 4}, rng, 0.0, 2.0);
    out.push_back(Check(
        "magnitude_mse_loss", {2, 2, 5, 4},
        [sup](Tape &, ParameterStore &, const VarMap &in) {
          return VarMap{{"loss", EnhancementLoss(in.at("x"), sup)}};
        },
        nullptr, tolerance, seed));
  }

  {
    std::vector<int> labels(2 * 6);
    for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>((i * 5) % 8);
    out.push_back(Check(
        "ce_proxy_loss", {2, 8, 6},
        [labels](Tape &, ParameterStore &, const VarMap &in) {
          return VarMap{{"loss", CeProxyLoss(ops::LogSoftmax(in.at("x")), labels)}};
        },
        nullptr, tolerance, seed));
  }

  {
    NnfbConfig cfg = preset.nnfb;
    cfg.directions = 4;
    const NnfbLayer layer(cfg, preset.stft);
    out.push_back(Check(
        "nnfb", {1, 4, preset.stft.num_bins(), 6},
        [&layer](Tape &tape, ParameterStore &ps, const VarMap &in) {
          return VarMap{{"y", layer.Forward(tape, ps, in.at("x"))}};
        },
        [&layer](ParameterStore &ps, std::mt19937_64 &rng) { layer.InitParameters(ps, rng); },
        tolerance, seed, 40, false));
  }

  {
    BackendConfig cfg = preset.backend;
    cfg.in_channels = 1;
    cfg.in_height = preset.mel.num_filters;
    cfg.dropout = 0.0;
    const Backend am(cfg);
    out.push_back(Check(
        "backend", {2, 1, cfg.in_height, 8},
        [&am](Tape &tape, ParameterStore &ps, const VarMap &in) {
          std::mt19937_64 unused(0);
          return VarMap{{"y", am.Forward(tape, ps, in.at("x"), true, unused)}};
        },
        [&am](ParameterStore &ps, std::mt19937_64 &rng) { am.InitParameters(ps, rng); },
        tolerance, seed, 12));
  }

  {
    const Dcunet net(preset.dcunet);
    const int64_t n = net.MinFrames() + 1;
    out.push_back(Check(
        "dcunet", {2, 2 * preset.dcunet.input_channels, n, n},
        [&net](Tape &tape, ParameterStore &ps, const VarMap &in) {
          return VarMap{{"y", net.Forward(tape, ps, in.at("x"), true)}};
        },
        [&net](ParameterStore &ps, std::mt19937_64 &rng) { net.InitParameters(ps, rng); },
        tolerance, seed, 8));
  }
  return out;
}

std::string FormatLayerCheck(const LayerCheck &c) {
  std::string worst;
  double worst_err = -1.0;
  int64_t coords = 0;
  for (const auto &e : c.report.entries) {
    coords += e.coords_checked;
    if (e.max_rel_error > worst_err) {
      worst_err = e.max_rel_error;
      worst = e.name;
    }
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s %-26s max_rel_err=%.3e worst=%s coords=%lld time=%.2fs",
                c.report.passed() ? "PASS" : "FAIL", c.layer.c_str(), c.report.max_rel_error(),
                worst.c_str(), static_cast<long long>(coords), c.seconds);
  return buf;
}

}  // namespace mcdc
