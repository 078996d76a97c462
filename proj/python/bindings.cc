// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Python bindings for the signal-processing front-end, the complex
// convolution, the multi-task loss, scene synthesis and the gradient checks.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <complex>

#include "mcdcunet/layer_checks.h"
#include "mcdcunet/trainer.h"

namespace py = pybind11;
using namespace mcdc;

namespace {

using RealArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ComplexArray =
    py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>;

Shape ShapeOf(const py::array &a) {
  return Shape(a.shape(), a.shape() + a.ndim());
}

Tensor ToTensor(const RealArray &a) {
  Tensor t(ShapeOf(a));
  std::copy_n(a.data(), t.numel(), t.data());
  return t;
}

RealArray FromTensor(const Tensor &t) {
  RealArray a(t.shape());
  std::copy_n(t.data(), t.numel(), a.mutable_data());
  return a;
}

Waveform ToWaveform(const RealArray &a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-D signal");
  return Waveform{std::vector<double>(a.data(), a.data() + a.size())};
}

RealArray FromWaveform(const Waveform &w) {
  RealArray a(std::vector<py::ssize_t>{static_cast<py::ssize_t>(w.samples.size())});
  std::copy(w.samples.begin(), w.samples.end(), a.mutable_data());
  return a;
}

StftConfig MakeStft(int window_length, int shift, int fft_size) {
  StftConfig c;
  c.window_length = window_length;
  c.shift = shift;
  c.fft_size = fft_size;
  return c;
}

// (bins, frames) or (channels, bins, frames) complex array.
Spectrogram ToSpectrogram(const ComplexArray &a, const StftConfig &cfg) {
  if (a.ndim() != 2 && a.ndim() != 3)
    throw py::value_error("expected a (bins, frames) or (channels, bins, frames) array");
  Shape s = ShapeOf(a);
  if (s.size() == 2) s.insert(s.begin(), 1);
  Spectrogram sp;
  sp.config = cfg;
  sp.data = ComplexTensor(s);
  for (py::ssize_t i = 0; i < a.size(); ++i) {
    sp.data.real.data()[i] = a.data()[i].real();
    sp.data.imag.data()[i] = a.data()[i].imag();
  }
  return sp;
}

ComplexArray FromComplex(const ComplexTensor &c, bool squeeze_first) {
  Shape s = c.shape();
  if (squeeze_first && s.size() == 3 && s[0] == 1) s.erase(s.begin());
  ComplexArray a(s);
  for (int64_t i = 0; i < c.numel(); ++i)
    a.mutable_data()[i] = {c.real.data()[i], c.imag.data()[i]};
  return a;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-channel complex U-Net front-end toolkit";
  m.attr("SAMPLE_RATE") = kSampleRate;

  m.def(
      "stft",
      [](const RealArray &x, int window_length, int shift, int fft_size) {
        const StftConfig cfg = MakeStft(window_length, shift, fft_size);
        if (x.ndim() == 1) return FromComplex(Stft(ToWaveform(x), cfg).data, true);
        if (x.ndim() != 2) throw py::value_error("expected (samples,) or (channels, samples)");
        std::vector<Waveform> chans;
        const Tensor t = ToTensor(x);
        for (int64_t c = 0; c < t.size(0); ++c)
          chans.push_back(Waveform{std::vector<double>(t.data() + c * t.size(1),
                                                       t.data() + (c + 1) * t.size(1))});
        return FromComplex(Stft(chans, cfg).data, false);
      },
      py::arg("x"), py::arg("window_length") = 400, py::arg("shift") = 160,
      py::arg("fft_size") = 512,
      "Hann-windowed STFT; (bins, frames) for a 1-D signal, else (channels, bins, frames).");

  m.def(
      "istft",
      [](const ComplexArray &spec, int window_length, int shift, int fft_size) {
        return FromWaveform(Istft(ToSpectrogram(spec, MakeStft(window_length, shift, fft_size))));
      },
      py::arg("spec"), py::arg("window_length") = 400, py::arg("shift") = 160,
      py::arg("fft_size") = 512, "Weighted overlap-add inverse of stft.");

  m.def(
      "log_fbank",
      [](const RealArray &power, int num_filters, int fft_size) {
        MelConfig mel;
        mel.num_filters = num_filters;
        StftConfig stft;
        stft.fft_size = fft_size;
        return FromTensor(LogFbank(ToTensor(power), mel, stft));
      },
      py::arg("power"), py::arg("num_filters") = 80, py::arg("fft_size") = 512,
      "Log mel-filterbank of a (bins, frames) power spectrogram; returns (frames, filters).");

  m.def(
      "delay_and_sum",
      [](const ComplexArray &spec, double azimuth_deg, int fft_size) {
        StftConfig cfg;
        cfg.fft_size = fft_size;
        return FromComplex(DelayAndSum(ToSpectrogram(spec, cfg), azimuth_deg).data, true);
      },
      py::arg("spec"), py::arg("azimuth_deg") = 90.0, py::arg("fft_size") = 512,
      "Delay-and-sum of a two-channel (2, bins, frames) spectrogram.");

  m.def(
      "superdirective_weights",
      [](int directions, int fft_size, double diagonal_loading) {
        const auto w = SuperdirectiveWeights({}, LookDirections(directions), fft_size / 2 + 1,
                                             fft_size, diagonal_loading);
        return py::make_tuple(FromComplex(w.coeffs, false), w.azimuths_deg);
      },
      py::arg("directions") = 8, py::arg("fft_size") = 512, py::arg("diagonal_loading") = 1e-2,
      "Superdirective weights (directions, 2, bins) and their look azimuths in degrees.");

  m.def(
      "steering_vector",
      [](double azimuth_deg, int bin, int fft_size) {
        return SteeringVector({}, azimuth_deg, bin, fft_size);
      },
      py::arg("azimuth_deg"), py::arg("bin"), py::arg("fft_size") = 512);

  m.def(
      "aec",
      [](const ComplexArray &mic, const ComplexArray &reference, double smoothing) {
        AecConfig cfg;
        cfg.smoothing = smoothing;
        const StftConfig stft;
        return FromComplex(
            AecWiener(ToSpectrogram(mic, stft), ToSpectrogram(reference, stft), cfg).data, true);
      },
      py::arg("mic"), py::arg("reference"), py::arg("smoothing") = 0.98,
      "Per-bin Wiener echo cancellation of single-channel (bins, frames) spectrograms.");

  m.def(
      "complex_conv2d",
      [](const RealArray &x, const RealArray &wr, const RealArray &wi, std::pair<int, int> stride,
         std::pair<int, int> padding) {
        ops::Conv2dGeometry g;
        g.stride_h = stride.first;
        g.stride_w = stride.second;
        g.pad_h = padding.first;
        g.pad_w = padding.second;
        Tape tape(false);
        return FromTensor(ComplexConv2d(tape.Constant(ToTensor(x)), tape.Constant(ToTensor(wr)),
                                        tape.Constant(ToTensor(wi)), g)
                              .value());
      },
      py::arg("x"), py::arg("wr"), py::arg("wi"), py::arg("stride") = std::pair{1, 1},
      py::arg("padding") = std::pair{0, 0},
      "Complex convolution of a planar (N, 2C, H, W) input with (Cout, C, kh, kw) kernels.");

  m.def(
      "mtl_loss",
      [](double l_asr, double l_enh, int epoch, double beta, int t_enh) {
        TrainSchedule s;
        s.beta = beta;
        s.t_enh = t_enh;
        s.Validate();
        return MtlLoss(l_asr, l_enh, epoch, s);
      },
      py::arg("l_asr"), py::arg("l_enh"), py::arg("epoch"), py::arg("beta") = 0.8,
      py::arg("t_enh") = 3, "Scheduled multi-task loss at a 1-based epoch.");

  m.def(
      "synthesize_scene",
      [](int index, uint64_t seed, double duration_s, int num_scenes, bool supervision) {
        SceneConfig cfg;
        cfg.seed = seed;
        cfg.duration_s = duration_s;
        cfg.num_scenes = num_scenes;
        cfg.Validate();
        const Scene sc = SynthesizeScene(cfg, index);
        py::dict d;
        d["index"] = sc.index;
        d["mic1"] = FromWaveform(sc.mic1);
        d["mic2"] = FromWaveform(sc.mic2);
        d["reference"] = FromWaveform(sc.reference);
        d["clean"] = FromWaveform(sc.clean);
        d["azimuth_deg"] = sc.azimuth_deg;
        d["snr_db"] = sc.snr_db;
        d["has_echo"] = sc.has_echo;
        d["bucket"] = BucketName(sc.bucket);
        d["labels"] = sc.frame_labels;
        if (supervision) d["supervision"] = FromTensor(MakeSupervision(sc));
        return d;
      },
      py::arg("index"), py::arg("seed") = 1, py::arg("duration_s") = 1.0,
      py::arg("num_scenes") = 200, py::arg("supervision") = false,
      "Synthesize one labelled two-microphone scene with its loudspeaker reference.");

  m.def(
      "gradcheck",
      [](double tol, const std::string &preset, uint64_t seed) {
        py::list out;
        for (const LayerCheck &c : RunLayerGradchecks(tol, ModelPreset::Named(preset), seed)) {
          py::dict d;
          d["layer"] = c.layer;
          d["passed"] = c.report.passed();
          d["max_rel_error"] = c.report.max_rel_error();
          d["seconds"] = c.seconds;
          out.append(d);
        }
        return out;
      },
      py::arg("tol") = 1e-4, py::arg("preset") = "desk", py::arg("seed") = 1,
      "Finite-difference gradient check of every layer type.");

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
}
