// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "mcdcunet/dsp.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>

namespace mcdc {
namespace {

// FFTW plans are created once per size under a lock; execution with the
// new-array interface is thread-safe.
class FftPlans {
 public:
  static FftPlans &Get() {
    static FftPlans instance;
    return instance;
  }

  fftw_plan Forward(int n) { return Lookup(n, true); }
  fftw_plan Inverse(int n) { return Lookup(n, false); }

 private:
  fftw_plan Lookup(int n, bool forward) {
    std::lock_guard<std::mutex> lock(mu_);
    auto &cache = forward ? forward_ : inverse_;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<double> real(n);
    std::vector<fftw_complex> spec(n / 2 + 1);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fftw_plan p = forward
                      ? fftw_plan_dft_r2c_1d(n, real.data(), spec.data(), flags)
                      : fftw_plan_dft_c2r_1d(n, spec.data(), real.data(), flags);
    cache[n] = p;
    return p;
  }

  std::mutex mu_;
  std::map<int, fftw_plan> forward_, inverse_;
};

}  // namespace

int64_t StftConfig::NumFrames(int64_t num_samples) const {
  if (num_samples < window_length) return 0;
  return (num_samples - window_length) / shift + 1;
}

int64_t StftConfig::NumSamples(int64_t num_frames) const {
  return num_frames <= 0 ? 0 : (num_frames - 1) * shift + window_length;
}

StftConfig StftConfig::FromDurations(double window_ms, double shift_ms,
                                     int sample_rate) {
  StftConfig cfg;
  cfg.window_length = static_cast<int>(std::lround(window_ms * sample_rate / 1000.0));
  cfg.shift = static_cast<int>(std::lround(shift_ms * sample_rate / 1000.0));
  cfg.fft_size = 1;
  while (cfg.fft_size < cfg.window_length) cfg.fft_size *= 2;
  return cfg;
}

Spectrogram Spectrogram::Channel(int64_t c) const {
  if (c < 0 || c >= channels())
    throw std::out_of_range("spectrogram channel " + std::to_string(c));
  const int64_t plane = bins() * frames();
  Spectrogram out;
  out.config = config;
  out.data = ComplexTensor(Shape{1, bins(), frames()});
  std::copy_n(data.real.data() + c * plane, plane, out.data.real.data());
  std::copy_n(data.imag.data() + c * plane, plane, out.data.imag.data());
  return out;
}

Spectrogram Spectrogram::Stack(const std::vector<Spectrogram> &channels) {
  if (channels.empty()) throw std::invalid_argument("Stack: no channels");
  const int64_t bins = channels[0].bins(), frames = channels[0].frames();
  int64_t total = 0;
  for (const auto &s : channels) {
    if (s.bins() != bins || s.frames() != frames)
      throw ShapeError("Stack: channel geometry mismatch " +
                       ShapeString(s.data.shape()) + " vs " +
                       ShapeString(channels[0].data.shape()));
    total += s.channels();
  }
  Spectrogram out;
  out.config = channels[0].config;
  out.data = ComplexTensor(Shape{total, bins, frames});
  int64_t offset = 0;
  for (const auto &s : channels) {
    std::copy(s.data.real.storage().begin(), s.data.real.storage().end(),
              out.data.real.data() + offset);
    std::copy(s.data.imag.storage().begin(), s.data.imag.storage().end(),
              out.data.imag.data() + offset);
    offset += s.data.real.numel();
  }
  return out;
}

std::vector<double> FractionalDelay(const std::vector<double> &x,
                                    double delay_samples) {
  if (!std::isfinite(delay_samples))
    throw std::invalid_argument("FractionalDelay: delay must be finite");
  const int64_t len = static_cast<int64_t>(x.size());
  if (len == 0) return {};
  // Padding keeps the circular shift from wrapping the tail onto the head.
  const int64_t guard = static_cast<int64_t>(std::ceil(std::abs(delay_samples))) + 64;
  int n = 1;
  while (n < len + 2 * guard) n *= 2;
  std::vector<double> buf(n, 0.0);
  std::copy(x.begin(), x.end(), buf.begin() + guard);
  std::vector<fftw_complex> spec(n / 2 + 1);
  fftw_execute_dft_r2c(FftPlans::Get().Forward(n), buf.data(), spec.data());
  for (int k = 0; k <= n / 2; ++k) {
    const double phi = -2.0 * std::numbers::pi * k * delay_samples / n;
    double c = std::cos(phi), s = std::sin(phi);
    if (k == n / 2) s = 0.0;  // the Nyquist bin must stay real
    const double re = spec[k][0], im = spec[k][1];
    spec[k][0] = (re * c - im * s) / n;
    spec[k][1] = (re * s + im * c) / n;
  }
  fftw_execute_dft_c2r(FftPlans::Get().Inverse(n), spec.data(), buf.data());
  return std::vector<double>(buf.begin() + guard, buf.begin() + guard + len);
}

std::vector<double> HannWindow(int length) {
  std::vector<double> w(length);
  for (int n = 0; n < length; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length);
  return w;
}

std::vector<double> AnalysisWindow(const StftConfig &cfg) {
  if (cfg.window == WindowType::kRectangular)
    return std::vector<double>(cfg.window_length, 1.0);
  return HannWindow(cfg.window_length);
}

Spectrogram Stft(const std::vector<Waveform> &channels, const StftConfig &cfg) {
  if (channels.empty()) throw std::invalid_argument("Stft: no channels");
  if (cfg.fft_size < cfg.window_length || cfg.fft_size % 2 != 0 || cfg.shift <= 0)
    throw std::invalid_argument("Stft: invalid geometry");
  const int64_t len = channels[0].size();
  for (const auto &w : channels)
    if (w.size() != len)
      throw ShapeError("Stft: channel lengths differ (" +
                       std::to_string(w.size()) + " vs " + std::to_string(len) +
                       ")");
  if (len < cfg.window_length)
    throw std::invalid_argument(
        "Stft: signal of " + std::to_string(len) +
        " samples is shorter than one window (" +
        std::to_string(cfg.window_length) + ")");
  const int64_t frames = cfg.NumFrames(len), bins = cfg.num_bins();
  const int64_t nch = static_cast<int64_t>(channels.size());
  const std::vector<double> window = AnalysisWindow(cfg);
  Spectrogram out;
  out.config = cfg;
  out.data = ComplexTensor(Shape{nch, bins, frames});
  fftw_plan plan = FftPlans::Get().Forward(cfg.fft_size);
  std::vector<double> buf(cfg.fft_size);
  std::vector<fftw_complex> spec(bins);
  for (int64_t c = 0; c < nch; ++c) {
    const auto &x = channels[c].samples;
    for (int64_t t = 0; t < frames; ++t) {
      std::fill(buf.begin(), buf.end(), 0.0);
      for (int n = 0; n < cfg.window_length; ++n)
        buf[n] = x[t * cfg.shift + n] * window[n];
      fftw_execute_dft_r2c(plan, buf.data(), spec.data());
      for (int64_t k = 0; k < bins; ++k) {
        out.data.real[(c * bins + k) * frames + t] = spec[k][0];
        out.data.imag[(c * bins + k) * frames + t] = spec[k][1];
      }
    }
  }
  return out;
}

Spectrogram Stft(const Waveform &w, const StftConfig &cfg) {
  return Stft(std::vector<Waveform>{w}, cfg);
}

Waveform Istft(const Spectrogram &s) {
  const StftConfig &cfg = s.config;
  if (s.data.real.dim() != 3 || s.channels() != 1)
    throw ShapeError("Istft: expected a single-channel (1, bins, frames) "
                     "spectrogram, got " + ShapeString(s.data.shape()));
  if (s.bins() != cfg.num_bins())
    throw ShapeError("Istft: " + std::to_string(s.bins()) +
                     " bins inconsistent with fft size " +
                     std::to_string(cfg.fft_size));
  const int64_t frames = s.frames(), bins = s.bins();
  const std::vector<double> window = AnalysisWindow(cfg);
  Waveform out;
  out.samples.assign(cfg.NumSamples(frames), 0.0);
  std::vector<double> norm(out.samples.size(), 0.0);
  fftw_plan plan = FftPlans::Get().Inverse(cfg.fft_size);
  std::vector<fftw_complex> spec(bins);
  std::vector<double> buf(cfg.fft_size);
  for (int64_t t = 0; t < frames; ++t) {
    for (int64_t k = 0; k < bins; ++k) {
      spec[k][0] = s.data.real[k * frames + t];
      spec[k][1] = s.data.imag[k * frames + t];
    }
    // DC and Nyquist of a real signal are real.
    spec[0][1] = 0.0;
    spec[bins - 1][1] = 0.0;
    fftw_execute_dft_c2r(plan, spec.data(), buf.data());
    for (int n = 0; n < cfg.window_length; ++n) {
      const int64_t i = t * cfg.shift + n;
      out.samples[i] += window[n] * buf[n] / cfg.fft_size;
      norm[i] += window[n] * window[n];
    }
  }
  for (size_t i = 0; i < norm.size(); ++i)
    out.samples[i] = norm[i] > 1e-8 ? out.samples[i] / norm[i] : 0.0;
  return out;
}

Tensor PowerSpectrum(const Spectrogram &s, int64_t channel) {
  const int64_t plane = s.bins() * s.frames();
  Tensor p({s.bins(), s.frames()});
  const double *re = s.data.real.data() + channel * plane;
  const double *im = s.data.imag.data() + channel * plane;
  for (int64_t i = 0; i < plane; ++i) p[i] = re[i] * re[i] + im[i] * im[i];
  return p;
}

Tensor MagnitudeSpectrum(const Spectrogram &s, int64_t channel) {
  const int64_t plane = s.bins() * s.frames();
  Tensor m({s.bins(), s.frames()});
  const double *re = s.data.real.data() + channel * plane;
  const double *im = s.data.imag.data() + channel * plane;
  for (int64_t i = 0; i < plane; ++i) m[i] = std::hypot(re[i], im[i]);
  return m;
}

double HzToMel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
double MelToHz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

Tensor MelFilterbank(const MelConfig &mel, const StftConfig &stft,
                     int sample_rate) {
  if (mel.num_filters <= 0 || mel.high_hz <= mel.low_hz ||
      mel.high_hz > sample_rate / 2.0)
    throw std::invalid_argument("MelFilterbank: invalid band");
  const int bins = stft.num_bins();
  const double lo = HzToMel(mel.low_hz), hi = HzToMel(mel.high_hz);
  const double step = (hi - lo) / (mel.num_filters + 1);
  Tensor fb({mel.num_filters, bins});
  for (int m = 0; m < mel.num_filters; ++m) {
    const double left = lo + m * step, center = left + step, right = center + step;
    for (int k = 0; k < bins; ++k) {
      const double mk = HzToMel(static_cast<double>(k) * sample_rate / stft.fft_size);
      double w = 0.0;
      if (mk > left && mk <= center)
        w = (mk - left) / (center - left);
      else if (mk > center && mk < right)
        w = (right - mk) / (right - center);
      fb[m * bins + k] = w;
    }
  }
  return fb;
}

Tensor LogFbank(const Tensor &power, const MelConfig &mel,
                const StftConfig &stft) {
  if (power.dim() != 2 || power.size(0) != stft.num_bins())
    throw ShapeError("LogFbank: expected (" + std::to_string(stft.num_bins()) +
                     ", frames) power spectrum, got " +
                     ShapeString(power.shape()));
  for (double v : power.values())
    if (v < 0.0 || !std::isfinite(v))
      throw std::invalid_argument("LogFbank: power spectrum must be finite and "
                                  "non-negative");
  const Tensor fb = MelFilterbank(mel, stft);
  const int64_t bins = power.size(0), frames = power.size(1);
  Tensor out({frames, mel.num_filters});
  for (int64_t t = 0; t < frames; ++t)
    for (int m = 0; m < mel.num_filters; ++m) {
      double e = 0.0;
      for (int64_t k = 0; k < bins; ++k) e += fb[m * bins + k] * power[k * frames + t];
      out[t * mel.num_filters + m] = std::log(std::max(e, mel.log_floor));
    }
  return out;
}

// ---------------------------------------------------------------------------
// WAV

namespace {

uint32_t ReadU32(const unsigned char *p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t ReadU16(const unsigned char *p) { return p[0] | (p[1] << 8); }

void PutU32(std::string &s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void PutU16(std::string &s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace

std::vector<Waveform> ReadWav(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  const auto *p = reinterpret_cast<const unsigned char *>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) || std::memcmp(p + 8, "WAVE", 4))
    throw WavError(path + ": not a RIFF/WAVE file (field 'riff_id')");
  size_t pos = 12;
  int channels = 0;
  bool have_fmt = false;
  while (pos + 8 <= bytes.size()) {
    const uint32_t size = ReadU32(p + pos + 4);
    const unsigned char *body = p + pos + 8;
    if (pos + 8 + size > bytes.size())
      throw WavError(path + ": truncated chunk (field 'chunk_size')");
    if (!std::memcmp(p + pos, "fmt ", 4)) {
      if (size < 16) throw WavError(path + ": short fmt chunk (field 'fmt_size')");
      const uint16_t format = ReadU16(body);
      channels = ReadU16(body + 2);
      const uint32_t rate = ReadU32(body + 4);
      const uint16_t bits = ReadU16(body + 14);
      if (format != 1)
        throw WavError(path + ": unsupported encoding " + std::to_string(format) +
                       " (field 'audio_format', expected 1 = PCM)");
      if (bits != 16)
        throw WavError(path + ": unsupported sample width " +
                       std::to_string(bits) + " (field 'bits_per_sample')");
      if (rate != kSampleRate)
        throw WavError(path + ": unsupported sample rate " + std::to_string(rate) +
                       " (field 'sample_rate', expected 16000)");
      if (channels < 1) throw WavError(path + ": zero channels (field 'num_channels')");
      have_fmt = true;
    } else if (!std::memcmp(p + pos, "data", 4)) {
      if (!have_fmt) throw WavError(path + ": data before fmt (field 'fmt')");
      const int64_t frames = size / (2 * channels);
      std::vector<Waveform> out(channels);
      for (auto &w : out) w.samples.resize(frames);
      for (int64_t i = 0; i < frames; ++i)
        for (int c = 0; c < channels; ++c) {
          const auto v = static_cast<int16_t>(ReadU16(body + 2 * (i * channels + c)));
          out[c].samples[i] = v / 32768.0;
        }
      return out;
    }
    pos += 8 + size + (size & 1);
  }
  throw WavError(path + ": no data chunk (field 'data')");
}

void WriteWav(const std::string &path, const std::vector<Waveform> &channels) {
  if (channels.empty()) throw WavError("WriteWav: no channels");
  const int64_t frames = channels[0].size();
  for (const auto &w : channels) {
    if (w.size() != frames) throw WavError("WriteWav: channel lengths differ");
    if (w.sample_rate != kSampleRate)
      throw WavError("WriteWav: unsupported sample rate " +
                     std::to_string(w.sample_rate));
  }
  const uint16_t nch = static_cast<uint16_t>(channels.size());
  const uint32_t data_bytes = static_cast<uint32_t>(frames * nch * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  PutU32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  PutU32(out, 16);
  PutU16(out, 1);
  PutU16(out, nch);
  PutU32(out, kSampleRate);
  PutU32(out, kSampleRate * nch * 2);
  PutU16(out, nch * 2);
  PutU16(out, 16);
  out += "data";
  PutU32(out, data_bytes);
  for (int64_t i = 0; i < frames; ++i)
    for (const auto &w : channels) {
      const double scaled = std::round(w.samples[i] * 32768.0);
      const auto v = static_cast<int16_t>(std::clamp(scaled, -32768.0, 32767.0));
      PutU16(out, static_cast<uint16_t>(v));
    }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw WavError("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw WavError("failed writing " + path);
}

void WriteWav(const std::string &path, const Waveform &mono) {
  WriteWav(path, std::vector<Waveform>{mono});
}

}  // namespace mcdc
