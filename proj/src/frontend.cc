// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "mcdcunet/frontend.h"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>

#include "mcdcunet/ops.h"

namespace mcdc {
namespace {

using cd = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

double BinHz(int bin, int fft_size, int sample_rate) {
  return static_cast<double>(bin) * sample_rate / fft_size;
}

double Sinc(double x) { return std::abs(x) < 1e-12 ? 1.0 : std::sin(x) / x; }

void CheckTwoChannel(const Spectrogram &multi, const char *where) {
  if (multi.data.real.dim() != 3 || multi.channels() != 2)
    throw ShapeError(std::string(where) +
                     ": expected a 2-channel spectrogram, got " +
                     ShapeString(multi.data.shape()));
}

void CheckSingleChannel(const Spectrogram &s, const char *what) {
  if (s.data.real.dim() != 3 || s.channels() != 1)
    throw ShapeError(std::string("AecWiener: ") + what +
                     " must be single-channel, got " +
                     ShapeString(s.data.shape()));
}

BeamformerWeights MakeWeights(const ArrayGeometry &geom,
                              const std::vector<double> &azimuths, int bins) {
  BeamformerWeights w;
  w.geometry = geom;
  w.azimuths_deg = azimuths;
  w.coeffs = ComplexTensor(Shape{static_cast<int64_t>(azimuths.size()), 2, bins});
  return w;
}

void SetCoeff(BeamformerWeights &w, int64_t d, int64_t c, int64_t k, cd v) {
  const int64_t i = (d * w.channels() + c) * w.bins() + k;
  w.coeffs.real[i] = v.real();
  w.coeffs.imag[i] = v.imag();
}

}  // namespace

double ArrayGeometry::Delay(double azimuth_deg) const {
  double c = std::cos(azimuth_deg * std::numbers::pi / 180.0);
  if (std::abs(c) < 1e-15) c = 0.0;  // broadside is exactly zero delay
  return mic_spacing * c / sound_speed;
}

std::vector<cd> SteeringVector(const ArrayGeometry &geom, double azimuth_deg,
                               int bin, int fft_size) {
  const double omega =
      2.0 * std::numbers::pi * BinHz(bin, fft_size, geom.sample_rate);
  return {cd(1.0, 0.0), std::polar(1.0, -omega * geom.Delay(azimuth_deg))};
}

cd BeamformerWeights::at(int64_t d, int64_t c, int64_t k) const {
  const int64_t i = (d * channels() + c) * bins() + k;
  return {coeffs.real[i], coeffs.imag[i]};
}

std::vector<double> LookDirections(int count) {
  if (count <= 0) throw std::invalid_argument("LookDirections: count must be > 0");
  std::vector<double> out(count);
  for (int i = 0; i < count; ++i) out[i] = 180.0 * i / count;
  return out;
}

BeamformerWeights DelayAndSumWeights(const ArrayGeometry &geom,
                                     const std::vector<double> &azimuths_deg,
                                     int num_bins, int fft_size) {
  BeamformerWeights w = MakeWeights(geom, azimuths_deg, num_bins);
  for (size_t d = 0; d < azimuths_deg.size(); ++d)
    for (int k = 0; k < num_bins; ++k) {
      const auto v = SteeringVector(geom, azimuths_deg[d], k, fft_size);
      for (int c = 0; c < 2; ++c) SetCoeff(w, d, c, k, 0.5 * v[c]);
    }
  return w;
}

BeamformerWeights SuperdirectiveWeights(const ArrayGeometry &geom,
                                        const std::vector<double> &azimuths_deg,
                                        int num_bins, int fft_size,
                                        double diagonal_loading) {
  if (!(diagonal_loading > 0.0))
    throw std::invalid_argument("SuperdirectiveWeights: diagonal loading must "
                                "be positive");
  BeamformerWeights w = MakeWeights(geom, azimuths_deg, num_bins);
  constexpr int kMics = 2;
  for (int k = 0; k < num_bins; ++k) {
    const double f = BinHz(k, fft_size, geom.sample_rate);
    const double coh =
        Sinc(2.0 * std::numbers::pi * f * geom.mic_spacing / geom.sound_speed);
    CMat gamma(kMics, kMics);
    gamma << 1.0, coh, coh, 1.0;
    const double load = diagonal_loading * gamma.trace().real() / kMics;
    gamma += load * CMat::Identity(kMics, kMics);
    Eigen::FullPivLU<CMat> lu(gamma);
    if (!lu.isInvertible() || lu.rcond() < 1e-14)
      throw std::runtime_error("SuperdirectiveWeights: loaded coherence matrix "
                               "is singular at bin " + std::to_string(k));
    for (size_t d = 0; d < azimuths_deg.size(); ++d) {
      const auto sv = SteeringVector(geom, azimuths_deg[d], k, fft_size);
      CVec v(kMics);
      v << sv[0], sv[1];
      const CVec g = lu.solve(v);
      const cd denom = v.dot(g);  // v^H g
      for (int c = 0; c < kMics; ++c) SetCoeff(w, d, c, k, g(c) / denom);
    }
  }
  return w;
}

Spectrogram ApplyBeamformer(const Spectrogram &multi,
                            const BeamformerWeights &weights, int64_t direction) {
  CheckTwoChannel(multi, "ApplyBeamformer");
  if (weights.channels() != multi.channels() || weights.bins() != multi.bins())
    throw ShapeError("ApplyBeamformer: weights " +
                     ShapeString(weights.coeffs.shape()) +
                     " do not match spectrogram " +
                     ShapeString(multi.data.shape()));
  if (direction < 0 || direction >= weights.directions())
    throw std::out_of_range("ApplyBeamformer: direction " +
                            std::to_string(direction));
  const int64_t F = multi.bins(), T = multi.frames();
  Spectrogram out;
  out.config = multi.config;
  out.data = ComplexTensor(Shape{1, F, T});
  for (int64_t c = 0; c < multi.channels(); ++c)
    for (int64_t k = 0; k < F; ++k) {
      const cd wc = std::conj(weights.at(direction, c, k));
      const int64_t base = (c * F + k) * T;
      for (int64_t t = 0; t < T; ++t) {
        const cd y = wc * cd(multi.data.real[base + t], multi.data.imag[base + t]);
        out.data.real[k * T + t] += y.real();
        out.data.imag[k * T + t] += y.imag();
      }
    }
  return out;
}

Spectrogram DelayAndSum(const Spectrogram &multi, double azimuth_deg,
                        const ArrayGeometry &geom) {
  CheckTwoChannel(multi, "DelayAndSum");
  const auto w = DelayAndSumWeights(geom, {azimuth_deg},
                                    static_cast<int>(multi.bins()),
                                    multi.config.fft_size);
  return ApplyBeamformer(multi, w, 0);
}

void AecConfig::Validate() const {
  if (filter_length_frames < 1)
    throw std::invalid_argument("AecConfig: filter_length_frames must be >= 1");
  if (!(regularization > 0.0))
    throw std::invalid_argument("AecConfig: regularization must be > 0");
  if (!(smoothing > 0.0 && smoothing < 1.0))
    throw std::invalid_argument("AecConfig: smoothing must lie in (0, 1)");
}

Spectrogram AecWiener(const Spectrogram &mic, const Spectrogram &reference,
                      const AecConfig &cfg) {
  cfg.Validate();
  CheckSingleChannel(mic, "mic");
  CheckSingleChannel(reference, "reference");
  if (mic.bins() != reference.bins() || mic.frames() != reference.frames() ||
      mic.config.fft_size != reference.config.fft_size ||
      mic.config.shift != reference.config.shift)
    throw ShapeError("AecWiener: mic " + ShapeString(mic.data.shape()) +
                     " and reference " + ShapeString(reference.data.shape()) +
                     " differ in frame geometry");
  const int64_t F = mic.bins(), T = mic.frames();
  const int L = cfg.filter_length_frames;
  const double a = cfg.smoothing, b = 1.0 - cfg.smoothing;
  Spectrogram out = mic;
  const auto &Xr = reference.data.real, &Xi = reference.data.imag;
  const auto &Yr = mic.data.real, &Yi = mic.data.imag;

  for (int64_t k = 0; k < F; ++k) {
    const int64_t base = k * T;
    if (L == 1) {
      // Scalar recursion; h = r / (R + reg).
      double R = 0.0;
      cd r = 0.0;
      for (int64_t t = 0; t < T; ++t) {
        const cd x(Xr[base + t], Xi[base + t]);
        const cd y(Yr[base + t], Yi[base + t]);
        R = a * R + b * std::norm(x);
        r = a * r + b * x * std::conj(y);
        const cd h = r / (R + cfg.regularization);
        const cd e = y - std::conj(h) * x;
        out.data.real[base + t] = e.real();
        out.data.imag[base + t] = e.imag();
      }
      continue;
    }
    CMat R = CMat::Zero(L, L);
    CVec r = CVec::Zero(L);
    CVec x(L);
    const CMat reg = cfg.regularization * CMat::Identity(L, L);
    for (int64_t t = 0; t < T; ++t) {
      for (int l = 0; l < L; ++l)
        x(l) = t - l >= 0 ? cd(Xr[base + t - l], Xi[base + t - l]) : cd(0.0);
      const cd y(Yr[base + t], Yi[base + t]);
      R = a * R + b * (x * x.adjoint());
      r = a * r + b * x * std::conj(y);
      const CVec h = (R + reg).ldlt().solve(r);
      const cd e = y - h.dot(x);  // h^H x
      out.data.real[base + t] = e.real();
      out.data.imag[base + t] = e.imag();
    }
  }
  return out;
}

double SpectralEnergy(const Spectrogram &s, int64_t first_frame) {
  const int64_t T = s.frames();
  const int64_t planes = s.channels() * s.bins();
  double e = 0.0;
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t t = std::max<int64_t>(first_frame, 0); t < T; ++t) {
      const double re = s.data.real[p * T + t], im = s.data.imag[p * T + t];
      e += re * re + im * im;
    }
  return e;
}

NnfbLayer::NnfbLayer(const NnfbConfig &cfg, const StftConfig &stft,
                     std::string prefix)
    : cfg_(cfg), stft_(stft), prefix_(std::move(prefix)) {
  if (cfg_.directions <= 0 || cfg_.mel_filters <= 0)
    throw std::invalid_argument("NnfbLayer: directions and mel filters must be "
                                "positive");
  if (cfg_.selector_context <= 0 || cfg_.selector_context % 2 == 0)
    throw std::invalid_argument("NnfbLayer: selector context must be odd");
  MelConfig mel;
  mel.num_filters = cfg_.mel_filters;
  mel_ = MelFilterbank(mel, stft_);
}

void NnfbLayer::InitParameters(ParameterStore &ps, std::mt19937_64 &rng) const {
  const auto sd = SuperdirectiveWeights(cfg_.geometry,
                                        LookDirections(cfg_.directions),
                                        stft_.num_bins(), stft_.fft_size,
                                        cfg_.diagonal_loading);
  ps.Add(prefix_ + ".w_re", sd.coeffs.real);
  ps.Add(prefix_ + ".w_im", sd.coeffs.imag);
  const int64_t D = cfg_.directions, in = D * cfg_.mel_filters;
  const double std = 1.0 / std::sqrt(static_cast<double>(in * cfg_.selector_context));
  ps.Add(prefix_ + ".sel.w",
         Tensor::Randn({D, in, 1, cfg_.selector_context}, rng, std));
  ps.Add(prefix_ + ".sel.b", Tensor::Zeros({D}));
}

void NnfbLayer::SetBeamformer(ParameterStore &ps,
                              const BeamformerWeights &weights) const {
  if (weights.directions() != cfg_.directions)
    throw ShapeError("NnfbLayer: beamformer has " +
                     std::to_string(weights.directions()) +
                     " directions, layer expects " +
                     std::to_string(cfg_.directions));
  const Shape want{cfg_.directions, 2, stft_.num_bins()};
  CheckSameShape(want, weights.coeffs.shape(), "NnfbLayer beamformer");
  ps.Get(prefix_ + ".w_re").value = weights.coeffs.real;
  ps.Get(prefix_ + ".w_im").value = weights.coeffs.imag;
}

Var NnfbLayer::DirectionalFbank(Tape &tape, ParameterStore &ps,
                                const Var &x) const {
  const Shape &s = x.shape();
  if (s.size() != 4 || s[1] != 4 || s[2] != stft_.num_bins())
    throw ShapeError("NnfbLayer: expected (N, 4, " +
                     std::to_string(stft_.num_bins()) +
                     ", frames) two-channel input, got " + ShapeString(s));
  Var w_re = tape.Param(ps.Get(prefix_ + ".w_re"));
  Var w_im = tape.Param(ps.Get(prefix_ + ".w_im"));
  if (w_re.size(0) != cfg_.directions)
    throw ShapeError("NnfbLayer: beamformer parameters hold " +
                     std::to_string(w_re.size(0)) + " directions, expected " +
                     std::to_string(cfg_.directions));
  const int64_t N = s[0], D = cfg_.directions, F = s[2], T = s[3];
  const int64_t M = cfg_.mel_filters;
  Var power = ops::BeamformPower(x, w_re, w_im);  // (N, D, F, T)
  Var mel = ops::MatMulAxis1(tape.Constant(mel_), ops::Reshape(power, {N * D, F, T}));
  return ops::Reshape(ops::LogFloor(mel, MelConfig{}.log_floor), {N, D, M, T});
}

Var NnfbLayer::SelectorWeights(Tape &tape, ParameterStore &ps,
                               const Var &directional) const {
  const Shape &s = directional.shape();
  if (s.size() != 4 || s[1] != cfg_.directions || s[2] != cfg_.mel_filters)
    throw ShapeError("NnfbLayer selector: expected (N, " +
                     std::to_string(cfg_.directions) + ", " +
                     std::to_string(cfg_.mel_filters) + ", frames), got " +
                     ShapeString(s));
  const int64_t N = s[0], D = s[1], M = s[2], T = s[3];
  Var w = tape.Param(ps.Get(prefix_ + ".sel.w"));
  Var b = tape.Param(ps.Get(prefix_ + ".sel.b"));
  Var flat = ops::Reshape(directional, {N, D * M, 1, T});
  Var logits = ops::Conv2d(flat, w,
                           ops::Conv2dGeometry::Same(1, cfg_.selector_context));
  logits = ops::AddChannelBias(ops::Reshape(logits, {N, D, T}), b);
  return ops::Softmax(logits);
}

Var NnfbLayer::Combine(const Var &directional, const Var &weights) const {
  if (weights.shape().size() != 3 || weights.size(1) != directional.size(1))
    throw ShapeError("NnfbLayer: selector weights " +
                     ShapeString(weights.shape()) + " do not match " +
                     std::to_string(directional.size(1)) + " directions");
  return ops::CombineDirections(directional, weights);
}

Var NnfbLayer::Forward(Tape &tape, ParameterStore &ps, const Var &x) const {
  Var feats = DirectionalFbank(tape, ps, x);
  return Combine(feats, SelectorWeights(tape, ps, feats));
}

}  // namespace mcdc
