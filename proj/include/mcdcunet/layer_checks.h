// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Finite-difference gradient checks for every layer type of the toolkit,
// shared by the command-line tool, the acceptance suite and the bindings.

#ifndef MCDCUNET_LAYER_CHECKS_H_
#define MCDCUNET_LAYER_CHECKS_H_

#include <string>
#include <vector>

#include "mcdcunet/autodiff.h"
#include "mcdcunet/trainer.h"

namespace mcdc {

struct LayerCheck {
  std::string layer;
  GradcheckReport report;
  double seconds = 0.0;
};

// One entry per layer type: complex_conv2d, complex_conv_transpose2d,
// split_batch_norm, leaky_relu, bridge, real_cnn, tdnn, log_softmax,
// magnitude_mse_loss, ce_proxy_loss, nnfb, backend, dcunet. The last two use
// the preset's network dimensions on a short input.
std::vector<LayerCheck> RunLayerGradchecks(double tolerance,
                                           const ModelPreset &preset = {},
                                           uint64_t seed = 1);

// "PASS layer  max_rel_err=...  worst=...  coords=...  time=..."
std::string FormatLayerCheck(const LayerCheck &check);

}  // namespace mcdc

#endif  // MCDCUNET_LAYER_CHECKS_H_
