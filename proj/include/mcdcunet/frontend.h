// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Conventional two-microphone front-end: STFT-domain Wiener echo
// cancellation, delay-and-sum and superdirective fixed beamformers, and the
// trainable neural fixed beamformer (NNFB) with soft beam selection.

#ifndef MCDCUNET_FRONTEND_H_
#define MCDCUNET_FRONTEND_H_

#include <complex>
#include <random>
#include <string>
#include <vector>

#include "mcdcunet/autodiff.h"
#include "mcdcunet/dsp.h"

namespace mcdc {

struct ArrayGeometry {
  double mic_spacing = 0.07;  // meters
  double sound_speed = 343.0;
  int sample_rate = kSampleRate;

  // Arrival delay of mic2 relative to mic1 for a far-field source at the
  // given azimuth (0 deg = endfire on the mic1 side, 90 deg = broadside).
  double Delay(double azimuth_deg) const;
};

// Steering vector [1, exp(-j w tau)] at FFT bin k.
std::vector<std::complex<double>> SteeringVector(const ArrayGeometry &geom,
                                                 double azimuth_deg, int bin,
                                                 int fft_size);

// Beamformer coefficients, planes shaped (directions, channels, bins); the
// output of direction d is sum_c conj(w[d, c, k]) x_c.
struct BeamformerWeights {
  ComplexTensor coeffs;
  std::vector<double> azimuths_deg;
  ArrayGeometry geometry;

  int64_t directions() const { return coeffs.real.size(0); }
  int64_t channels() const { return coeffs.real.size(1); }
  int64_t bins() const { return coeffs.real.size(2); }
  std::complex<double> at(int64_t d, int64_t c, int64_t k) const;
};

// Uniform azimuths in [0, 180) degrees.
std::vector<double> LookDirections(int count = 8);

BeamformerWeights DelayAndSumWeights(const ArrayGeometry &geom,
                                     const std::vector<double> &azimuths_deg,
                                     int num_bins, int fft_size);
// MVDR weights against the diffuse-noise (sinc) coherence of the mic pair,
// loaded by diagonal_loading * trace / channels.
BeamformerWeights SuperdirectiveWeights(const ArrayGeometry &geom,
                                        const std::vector<double> &azimuths_deg,
                                        int num_bins, int fft_size,
                                        double diagonal_loading = 1e-2);

// Output of one look direction for a multichannel spectrogram.
Spectrogram ApplyBeamformer(const Spectrogram &multi,
                            const BeamformerWeights &weights, int64_t direction);
Spectrogram DelayAndSum(const Spectrogram &multi, double azimuth_deg,
                        const ArrayGeometry &geom = {});

struct AecConfig {
  int filter_length_frames = 1;
  double regularization = 1e-6;
  double smoothing = 0.98;

  void Validate() const;
};

// Per-bin Wiener echo canceller driven by recursively smoothed reference
// auto- and cross-spectra. Inputs and output are single-channel.
Spectrogram AecWiener(const Spectrogram &mic, const Spectrogram &reference,
                      const AecConfig &cfg = {});

// Energy of a spectrogram, optionally starting at a given frame.
double SpectralEnergy(const Spectrogram &s, int64_t first_frame = 0);

struct NnfbConfig {
  int directions = 8;
  int mel_filters = 80;
  int selector_context = 5;
  double diagonal_loading = 1e-2;
  ArrayGeometry geometry;
};

// Trainable fixed beamformer over several look directions. Beam selection is
// a per-frame softmax predicted by one TDNN layer from the directional
// log-FBanks. Parameters live under "<prefix>.".
class NnfbLayer {
 public:
  NnfbLayer(const NnfbConfig &cfg, const StftConfig &stft,
            std::string prefix = "nnfb");

  // Beamformer coefficients start at the superdirective design.
  void InitParameters(ParameterStore &ps, std::mt19937_64 &rng) const;
  // Overwrites the beamformer coefficients; the direction count must match.
  void SetBeamformer(ParameterStore &ps, const BeamformerWeights &weights) const;

  // x: (N, 4, bins, frames) planar two-channel spectrogram.
  // Returns directional log-FBanks (N, D, mel, frames).
  Var DirectionalFbank(Tape &tape, ParameterStore &ps, const Var &x) const;
  // Returns per-frame direction weights (N, D, frames) summing to one.
  Var SelectorWeights(Tape &tape, ParameterStore &ps,
                      const Var &directional) const;
  // Convex combination of directional features, (N, mel, frames).
  Var Combine(const Var &directional, const Var &weights) const;
  Var Forward(Tape &tape, ParameterStore &ps, const Var &x) const;

  const NnfbConfig &config() const { return cfg_; }

 private:
  NnfbConfig cfg_;
  StftConfig stft_;
  std::string prefix_;
  Tensor mel_;
};

}  // namespace mcdc

#endif  // MCDCUNET_FRONTEND_H_
