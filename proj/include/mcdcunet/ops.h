// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef MCDCUNET_OPS_H_
#define MCDCUNET_OPS_H_

#include <random>
#include <vector>

#include "mcdcunet/autodiff.h"

namespace mcdc::ops {

// Elementwise, operands of identical shape.
Var Add(const Var &a, const Var &b);
Var Sub(const Var &a, const Var &b);
Var Mul(const Var &a, const Var &b);
Var Scale(const Var &a, double s);
Var Square(const Var &a);
Var Relu(const Var &a);
Var LeakyRelu(const Var &a, double slope);
// log(max(a, floor)); zero gradient where the floor is active.
Var LogFloor(const Var &a, double floor);

Var Sum(const Var &a);
Var Mean(const Var &a);
// a1*w1 + a2*w2 + ... for scalar weights.
Var LinearCombination(const std::vector<Var> &terms,
                      const std::vector<double> &weights);

Var Reshape(const Var &a, Shape shape);
Var Concat(const std::vector<Var> &parts, int axis);
Var Slice(const Var &a, int axis, int64_t start, int64_t length);
// out[:, i] = a[:, perm[i]] along axis 1.
Var PermuteChannels(const Var &a, const std::vector<int64_t> &perm);
// Nearest-neighbour repetition along the last axis, cropped to out_len:
// out[t] = a[min((t + offset) / factor, len - 1)].
Var RepeatLastAxis(const Var &a, int64_t factor, int64_t out_len,
                   int64_t offset = 0);

// Magnitude sqrt(re^2 + im^2) with the subgradient at 0 defined as 0.
Var Magnitude(const Var &re, const Var &im);
Var Power(const Var &re, const Var &im);

// out[n, m, t] = sum_f w[m, f] * x[n, f, t] for x of shape (N, F, T).
Var MatMulAxis1(const Var &w, const Var &x);
// Adds a per-channel bias (axis 1).
Var AddChannelBias(const Var &x, const Var &bias);

struct Conv2dGeometry {
  int stride_h = 1, stride_w = 1;
  int pad_h = 0, pad_w = 0;
  int dilation_h = 1, dilation_w = 1;

  int64_t OutH(int64_t in_h, int64_t kh) const;
  int64_t OutW(int64_t in_w, int64_t kw) const;
  // Stride-preserving "same" padding for odd kernels.
  static Conv2dGeometry Same(int kh, int kw, int stride_h = 1, int stride_w = 1,
                             int dilation_h = 1, int dilation_w = 1);
};

// x: (N, Cin, H, W), w: (Cout, Cin, kh, kw) -> (N, Cout, Ho, Wo).
Var Conv2d(const Var &x, const Var &w, const Conv2dGeometry &geom);
// Adjoint of Conv2d mapping (N, Cin, Hi, Wi) back to (N, Cout, out_h, out_w).
// w: (Cin, Cout, kh, kw); Conv2d with the same geometry must map
// (out_h, out_w) to (Hi, Wi).
Var ConvTranspose2d(const Var &x, const Var &w, const Conv2dGeometry &geom,
                    int64_t out_h, int64_t out_w);

struct BatchNormState {
  Parameter *running_mean = nullptr;
  Parameter *running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Normalizes over every axis except axis 1. In training mode uses batch
// statistics and updates the running estimates.
Var BatchNorm(const Var &x, const Var &gamma, const Var &beta,
              BatchNormState &state, bool training);

// Along axis 1 of an (N, K, ...) tensor.
Var LogSoftmax(const Var &x);
Var Softmax(const Var &x);

// Mean of -logp[n, label, t] over all frames; labels indexed n * T + t.
Var NllLoss(const Var &log_probs, const std::vector<int> &labels);
// mean((a - target)^2); target is constant.
Var MseLoss(const Var &a, const Tensor &target);

// Inverted dropout; identity when !training or p == 0.
Var Dropout(const Var &x, double p, bool training, std::mt19937_64 &rng);

// x: (N, 2C, F, T) planar complex (real planes then imaginary planes);
// w_re, w_im: (D, C, F). Returns |sum_c conj(w[d,c,f]) x[c,f,t]|^2 as
// (N, D, F, T).
Var BeamformPower(const Var &x, const Var &w_re, const Var &w_im);
// feats: (N, D, M, T), weights: (N, D, T) -> sum_d weights * feats, (N, M, T).
Var CombineDirections(const Var &feats, const Var &weights);

}  // namespace mcdc::ops

#endif  // MCDCUNET_OPS_H_
