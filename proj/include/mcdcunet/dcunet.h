// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Multi-channel Deep Complex U-Net over planar complex feature maps.
//
// A complex map with C channels travels as a real tensor (N, 2C, H, W): the
// C real planes first, then the C imaginary planes. Complex convolution is
// then one real convolution with the block kernel [[Wr, -Wi], [Wi, Wr]].

#ifndef MCDCUNET_DCUNET_H_
#define MCDCUNET_DCUNET_H_

#include <random>
#include <string>
#include <vector>

#include "mcdcunet/autodiff.h"
#include "mcdcunet/dsp.h"
#include "mcdcunet/ops.h"

namespace mcdc {

// Complex convolution of a planar input with kernels wr, wi shaped
// (Cout, Cin, kh, kw): real = Wr*R - Wi*I, imag = Wr*I + Wi*R.
Var ComplexConv2d(const Var &x, const Var &wr, const Var &wi,
                  const ops::Conv2dGeometry &geom);
// Adjoint-style complex transposed convolution; wr, wi shaped
// (Cin, Cout, kh, kw).
Var ComplexConvTranspose2d(const Var &x, const Var &wr, const Var &wi,
                           const ops::Conv2dGeometry &geom, int64_t out_h,
                           int64_t out_w);
// Channel concatenation of two planar complex maps.
Var ComplexConcat(const Var &a, const Var &b);

// Stacks mic1, mic2 and reference spectrograms into a planar (1, 6, F, T)
// network input. Channels must share STFT geometry.
Tensor PlanarInput(const Spectrogram &mic1, const Spectrogram &mic2,
                   const Spectrogram &reference);
// Planar tensor (C, F, T) complex spectrogram <-> (1, 2C, F, T).
Tensor ToPlanar(const Spectrogram &s);
Spectrogram FromPlanar(const Tensor &planar, const StftConfig &cfg, int64_t batch = 0);

struct ComplexLayerSpec {
  std::string name;  // parameter prefix, e.g. "enc1"
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 1, kernel_w = 1;
  int stride_h = 2, stride_w = 2;
  bool transposed = false;
  bool batch_norm = true;
  bool activation = true;
};

struct DcunetConfig {
  int input_channels = 3;
  std::vector<int> encoder_channels{16, 32, 64, 64};
  // (frequency, time) kernel extents per encoder block.
  std::vector<std::pair<int, int>> encoder_kernels{{7, 5}, {7, 5}, {7, 5}, {5, 3}};
  double leaky_slope = 0.1;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

class Dcunet {
 public:
  explicit Dcunet(DcunetConfig cfg = {});

  // Fewest frames (and bins) accepted: one per stride-2 stage doubling.
  int64_t MinFrames() const;
  const std::vector<ComplexLayerSpec> &encoder() const { return encoder_; }
  const std::vector<ComplexLayerSpec> &decoder() const { return decoder_; }
  const DcunetConfig &config() const { return cfg_; }

  // Complex Glorot-style weights, unit BN scale, zero shift.
  void InitParameters(ParameterStore &ps, std::mt19937_64 &rng) const;

  struct Encoded {
    std::vector<Var> skips;  // enc1..enc3 activations
    Var bottleneck;          // enc4 activation, planar (N, 2*64, F/16, T/16)
    std::vector<std::pair<int64_t, int64_t>> geometry;  // input, enc1..enc4
  };

  // x: planar (N, 2*input_channels, F, T).
  Encoded Encode(Tape &tape, ParameterStore &ps, const Var &x, bool training) const;
  // Returns the predicted complex spectrogram, planar (N, 2, F, T).
  Var Decode(Tape &tape, ParameterStore &ps, const Encoded &enc, bool training) const;
  Var Forward(Tape &tape, ParameterStore &ps, const Var &x, bool training) const;

  // Eval-mode enhancement of a three-channel spectrogram.
  Spectrogram Enhance(ParameterStore &ps, const Spectrogram &three_channel) const;

 private:
  Var Block(Tape &tape, ParameterStore &ps, const ComplexLayerSpec &spec,
            const Var &x, bool training, int64_t out_h = 0,
            int64_t out_w = 0) const;

  DcunetConfig cfg_;
  std::vector<ComplexLayerSpec> encoder_;
  std::vector<ComplexLayerSpec> decoder_;
};

// mean((M_sup - |O|)^2) for prediction planar (N, 2, F, T) and supervision
// magnitudes (N, F, T).
Var EnhancementLoss(const Var &prediction, const Tensor &supervision);

}  // namespace mcdc

#endif  // MCDCUNET_DCUNET_H_
