// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// STFT analysis/synthesis, log mel-filterbank features and PCM16 WAV I/O.

#ifndef MCDCUNET_DSP_H_
#define MCDCUNET_DSP_H_

#include <string>
#include <vector>

#include "mcdcunet/tensor.h"

namespace mcdc {

constexpr int kSampleRate = 16000;

enum class ChannelId { kMono, kMic1, kMic2, kReference };

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;
  ChannelId channel = ChannelId::kMono;

  int64_t size() const { return static_cast<int64_t>(samples.size()); }
};

enum class WindowType { kHann, kRectangular };

struct StftConfig {
  int window_length = 400;  // 25 ms at 16 kHz
  int shift = 160;          // 10 ms
  int fft_size = 512;
  WindowType window = WindowType::kHann;

  int num_bins() const { return fft_size / 2 + 1; }
  int64_t NumFrames(int64_t num_samples) const;
  // Samples produced by istft for the given number of frames.
  int64_t NumSamples(int64_t num_frames) const;
  // 25 ms window / 10 ms shift at the given rate, FFT size rounded up to a
  // power of two.
  static StftConfig FromDurations(double window_ms, double shift_ms,
                                  int sample_rate = kSampleRate);
};

// Complex STFT of one or more channels, planes shaped (channels, bins, frames).
struct Spectrogram {
  ComplexTensor data;
  StftConfig config;

  int64_t channels() const { return data.real.size(0); }
  int64_t bins() const { return data.real.size(1); }
  int64_t frames() const { return data.real.size(2); }
  // Single channel c as a (1, bins, frames) spectrogram.
  Spectrogram Channel(int64_t c) const;
  static Spectrogram Stack(const std::vector<Spectrogram> &channels);
};

// Periodic Hann window.
std::vector<double> HannWindow(int length);
std::vector<double> AnalysisWindow(const StftConfig &cfg);

// Windowed DFT frames; the first frame starts at sample 0 and a trailing
// partial frame is dropped.
Spectrogram Stft(const Waveform &w, const StftConfig &cfg = {});
Spectrogram Stft(const std::vector<Waveform> &channels,
                 const StftConfig &cfg = {});
// Weighted overlap-add normalized by the summed squared window. Only single
// channel spectrograms are accepted.
Waveform Istft(const Spectrogram &s);

// |X|^2 of a single-channel spectrogram, shaped (bins, frames).
Tensor PowerSpectrum(const Spectrogram &s, int64_t channel = 0);
// |X| of a single-channel spectrogram, shaped (bins, frames).
Tensor MagnitudeSpectrum(const Spectrogram &s, int64_t channel = 0);

struct MelConfig {
  int num_filters = 80;
  double low_hz = 0.0;
  double high_hz = 8000.0;
  double log_floor = 1e-10;
};

double HzToMel(double hz);
double MelToHz(double mel);
// Triangular filters in the mel domain, shaped (num_filters, fft_size/2 + 1).
Tensor MelFilterbank(const MelConfig &mel, const StftConfig &stft = {},
                     int sample_rate = kSampleRate);
// power: (bins, frames), non-negative. Returns (frames, num_filters).
Tensor LogFbank(const Tensor &power, const MelConfig &mel = {},
                const StftConfig &stft = {});

// Delays a signal by a possibly fractional number of samples through a
// linear phase shift of its zero-padded spectrum. Output keeps the input
// length; samples shifted past the end are dropped.
std::vector<double> FractionalDelay(const std::vector<double> &x,
                                    double delay_samples);

// RIFF/WAVE PCM16 at 16 kHz. Samples map to [-1, 1) by division by 32768.
std::vector<Waveform> ReadWav(const std::string &path);
void WriteWav(const std::string &path, const std::vector<Waveform> &channels);
void WriteWav(const std::string &path, const Waveform &mono);

class WavError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mcdc

#endif  // MCDCUNET_DSP_H_
