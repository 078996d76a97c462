// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Recognition back-end: two real conv layers, a TDNN stack and a per-frame
// log-softmax, plus the complex-to-real bridge used by the multi-task model.

#ifndef MCDCUNET_BACKEND_H_
#define MCDCUNET_BACKEND_H_

#include <random>
#include <string>
#include <vector>

#include "mcdcunet/autodiff.h"

namespace mcdc {

// Planar complex (N, 2C, H, W) -> interleaved real (N, 2C, H, W) where
// channel 2k is the real and 2k+1 the imaginary plane of complex map k.
Var BridgeComplexToReal(const Var &planar);
// Inverse of BridgeComplexToReal.
Var UnbridgeRealToComplex(const Var &bridged);

struct BackendConfig {
  int in_channels = 1;   // 1 for log-FBank, 128 for bridged encoder maps
  int in_height = 80;    // feature bins entering conv1
  int conv1_filters = 64;
  int conv1_kh = 5, conv1_kw = 3;
  int conv2_filters = 128;
  int conv2_kh = 3, conv2_kw = 3;
  int freq_stride = 2;   // conv strides over frequency; time stride is 1
  // Number of TDNN layers including the output layer.
  int tdnn_layers = 4;
  int hidden = 64;
  int num_classes = 8;
  int context = 2;       // each hidden TDNN layer sees frames t-2..t+2
  int dilation = 1;
  double dropout = 0.2;  // applied to the features entering conv1
  double bn_momentum = 0.1;

  // 12 TDNN layers with 1024 hidden units and 2888 outputs.
  static BackendConfig PaperScale();
  int64_t Conv2Height() const;
  void Validate() const;
};

class Backend {
 public:
  explicit Backend(BackendConfig cfg = {}, std::string prefix = "am");

  const BackendConfig &config() const { return cfg_; }
  const std::string &prefix() const { return prefix_; }
  void InitParameters(ParameterStore &ps, std::mt19937_64 &rng) const;

  // features: (N, in_channels, in_height, T). Returns log-probabilities
  // (N, num_classes, T). Dropout draws from rng only when training.
  Var Forward(Tape &tape, ParameterStore &ps, const Var &features, bool training,
              std::mt19937_64 &rng) const;

 private:
  BackendConfig cfg_;
  std::string prefix_;
};

// Mean negative log-probability of the labelled class; labels are indexed
// n * T + t and must lie in [0, K).
Var CeProxyLoss(const Var &log_probs, const std::vector<int> &labels);

// Inverted dropout; identity when !training. p must lie in [0, 1).
Var ApplyDropout(const Var &x, double p, bool training, std::mt19937_64 &rng);

}  // namespace mcdc

#endif  // MCDCUNET_BACKEND_H_
