// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "mcdcunet/scene.h"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace mcdc {
namespace {

enum Stream : uint64_t { kMeta = 1, kSource = 2, kEcho = 3, kNoise = 4 };

std::mt19937_64 StreamRng(const SceneConfig &cfg, int index, Stream s) {
  const uint64_t base = SplitMix64(cfg.seed ^ SplitMix64(static_cast<uint64_t>(index)));
  return std::mt19937_64(SplitMix64(base + s));
}

double Energy(const std::vector<double> &x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

// Labelled sequence of class patterns filling n samples.
std::vector<double> ClassSequence(const SceneConfig &cfg, int64_t n,
                                  std::mt19937_64 &rng,
                                  std::vector<int> *sample_labels) {
  const auto centers = ClassCenters(cfg.num_classes);
  const double spacing = cfg.num_classes > 1 ? centers[1] - centers[0] : 1000.0;
  const double bandwidth = std::min(300.0, spacing / 2.0);
  std::uniform_real_distribution<double> seg_ms(cfg.min_segment_ms, cfg.max_segment_ms);
  std::uniform_int_distribution<int> cls(0, cfg.num_classes - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr int kPartials = 10;
  constexpr int kRamp = 80;  // 5 ms fade in/out
  std::vector<double> out(n, 0.0);
  if (sample_labels) sample_labels->assign(n, 0);
  int64_t pos = 0;
  while (pos < n) {
    const int64_t len = std::min<int64_t>(
        n - pos, std::llround(seg_ms(rng) * kSampleRate / 1000.0));
    const int c = cls(rng);
    std::vector<double> seg(len, 0.0);
    for (int p = 0; p < kPartials; ++p) {
      const double hz = centers[c] + (unit(rng) - 0.5) * bandwidth;
      const double phase = 2.0 * std::numbers::pi * unit(rng);
      const double w = 2.0 * std::numbers::pi * hz / kSampleRate;
      for (int64_t i = 0; i < len; ++i) seg[i] += std::sin(w * i + phase);
    }
    for (int64_t i = 0; i < len; ++i) {
      const int64_t edge = std::min(i, len - 1 - i);
      if (edge < kRamp)
        seg[i] *= 0.5 - 0.5 * std::cos(std::numbers::pi * (edge + 0.5) / kRamp);
    }
    const double rms = std::sqrt(Energy(seg) / std::max<int64_t>(len, 1));
    const double gain = rms > 0.0 ? cfg.source_rms / rms : 0.0;
    for (int64_t i = 0; i < len; ++i) out[pos + i] = seg[i] * gain;
    if (sample_labels)
      std::fill(sample_labels->begin() + pos, sample_labels->begin() + pos + len, c);
    pos += len;
  }
  return out;
}

std::vector<double> RandomFir(int taps, std::mt19937_64 &rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> h(taps);
  for (int i = 0; i < taps; ++i) h[i] = g(rng) * std::exp(-i / 8.0);
  return h;
}

std::vector<double> Convolve(const std::vector<double> &x, const std::vector<double> &h) {
  std::vector<double> y(x.size(), 0.0);
  for (size_t n = 0; n < x.size(); ++n) {
    double acc = 0.0;
    for (size_t i = 0; i < h.size() && i <= n; ++i) acc += h[i] * x[n - i];
    y[n] = acc;
  }
  return y;
}

Waveform Wave(std::vector<double> samples, ChannelId ch) {
  Waveform w;
  w.samples = std::move(samples);
  w.channel = ch;
  return w;
}

std::string ScenePrefix(const std::string &dir, int index) {
  char name[32];
  std::snprintf(name, sizeof(name), "scene_%05d", index);
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace

uint64_t SplitMix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

const char *BucketName(Bucket b) {
  switch (b) {
    case Bucket::kEchoed: return "Echoed";
    case Bucket::kLowSnr: return "<5 dB";
    case Bucket::kMidSnr: return "[5,15) dB";
    case Bucket::kHighSnr: return ">=15 dB";
  }
  return "?";
}

int64_t SceneConfig::NumSamples() const {
  return std::llround(duration_s * kSampleRate);
}

void SceneConfig::Validate() const {
  auto fail = [](const std::string &field, const std::string &why) {
    throw std::invalid_argument("scene config: " + field + " " + why);
  };
  if (num_scenes <= 0) fail("num_scenes", "must be positive");
  if (!(duration_s > 0.0) || NumFrames() < 1)
    fail("duration_s", "must cover at least one STFT frame");
  if (num_classes < 1) fail("num_classes", "must be positive");
  if (!(min_segment_ms > 0.0)) fail("min_segment_ms", "must be positive");
  if (!(max_segment_ms >= min_segment_ms))
    fail("max_segment_ms", "must be >= min_segment_ms");
  if (!(echo_fraction >= 0.0 && echo_fraction <= 1.0))
    fail("echo_fraction", "must lie in [0, 1]");
  double total = echo_fraction;
  for (double f : snr_bucket_fractions) {
    if (!(f >= 0.0)) fail("snr_bucket_fractions", "entries must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    std::ostringstream os;
    os << "must sum to 1 together with echo_fraction (got " << total << ")";
    fail("snr_bucket_fractions", os.str());
  }
  if (!(min_snr_db < 5.0 && max_snr_db > 15.0))
    fail("min_snr_db/max_snr_db", "must straddle the 5 and 15 dB bucket edges");
  if (echo_fir_taps < 1 || echo_fir_taps > 32)
    fail("echo_fir_taps", "must lie in [1, 32]");
  if (!(source_rms > 0.0)) fail("source_rms", "must be positive");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    fail("test_fraction", "must lie in (0, 1)");
}

std::vector<double> ClassCenters(int num_classes) {
  std::vector<double> c(num_classes);
  constexpr double kLow = 400.0, kHigh = 6000.0;
  for (int k = 0; k < num_classes; ++k)
    c[k] = num_classes == 1 ? kLow : kLow + k * (kHigh - kLow) / (num_classes - 1);
  return c;
}

Scene SynthesizeScene(const SceneConfig &cfg, int index,
                      const SceneOverrides &overrides) {
  cfg.Validate();
  const int64_t n = cfg.NumSamples();
  Scene sc;
  sc.index = index;

  std::mt19937_64 meta = StreamRng(cfg, index, kMeta);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u_echo = unit(meta), u_bucket = unit(meta), u_snr = unit(meta),
               u_az = unit(meta);
  sc.has_echo = overrides.has_echo.value_or(u_echo < cfg.echo_fraction);
  double lo = cfg.min_snr_db, hi = cfg.max_snr_db;
  if (sc.has_echo) {
    sc.bucket = Bucket::kEchoed;
  } else {
    const auto &f = cfg.snr_bucket_fractions;
    const double rest = f[0] + f[1] + f[2];
    const double u = u_bucket * rest;
    if (u < f[0]) {
      sc.bucket = Bucket::kLowSnr;
      hi = 5.0;
    } else if (u < f[0] + f[1]) {
      sc.bucket = Bucket::kMidSnr;
      lo = 5.0;
      hi = 15.0;
    } else {
      sc.bucket = Bucket::kHighSnr;
      lo = 15.0;
    }
  }
  sc.snr_db = overrides.snr_db.value_or(lo + u_snr * (hi - lo));
  sc.azimuth_deg = overrides.azimuth_deg.value_or(180.0 * u_az);
  if (overrides.snr_db && !sc.has_echo)
    sc.bucket = sc.snr_db < 5.0    ? Bucket::kLowSnr
                : sc.snr_db < 15.0 ? Bucket::kMidSnr
                                   : Bucket::kHighSnr;

  // Directional source with its inter-microphone delay.
  std::mt19937_64 src_rng = StreamRng(cfg, index, kSource);
  std::vector<int> sample_labels;
  std::vector<double> src = ClassSequence(cfg, n, src_rng, &sample_labels);
  const double delay = cfg.geometry.Delay(sc.azimuth_deg) * cfg.geometry.sample_rate;
  std::vector<double> src2 = delay == 0.0 ? src : FractionalDelay(src, delay);

  const int64_t frames = cfg.NumFrames();
  sc.frame_labels.resize(frames);
  for (int64_t t = 0; t < frames; ++t)
    sc.frame_labels[t] = sample_labels[t * cfg.stft.shift + cfg.stft.window_length / 2];

  // Loudspeaker playback and its echo paths.
  std::vector<double> ref(n, 0.0), echo1(n, 0.0), echo2(n, 0.0);
  if (sc.has_echo) {
    std::mt19937_64 echo_rng = StreamRng(cfg, index, kEcho);
    ref = ClassSequence(cfg, n, echo_rng, nullptr);
    echo1 = Convolve(ref, RandomFir(cfg.echo_fir_taps, echo_rng));
    echo2 = Convolve(ref, RandomFir(cfg.echo_fir_taps, echo_rng));
    const double e1 = Energy(echo1);
    const double target = Energy(src) * std::pow(10.0, -cfg.echo_to_signal_db / 10.0);
    const double g = e1 > 0.0 ? std::sqrt(target / e1) : 0.0;
    for (auto &v : echo1) v *= g;
    for (auto &v : echo2) v *= g;
  }

  // Independent sensor noise scaled to the exact SNR at mic1.
  std::vector<double> noise1(n, 0.0), noise2(n, 0.0);
  if (overrides.noise) {
    std::mt19937_64 noise_rng = StreamRng(cfg, index, kNoise);
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto &v : noise1) v = g(noise_rng);
    for (auto &v : noise2) v = g(noise_rng);
    const double target = Energy(src) * std::pow(10.0, -sc.snr_db / 10.0);
    const double g1 = std::sqrt(target / Energy(noise1));
    const double g2 = std::sqrt(target / Energy(noise2));
    for (auto &v : noise1) v *= g1;
    for (auto &v : noise2) v *= g2;
  }

  std::vector<double> m1(n), m2(n);
  for (int64_t i = 0; i < n; ++i) {
    m1[i] = src[i] + echo1[i] + noise1[i];
    m2[i] = src2[i] + echo2[i] + noise2[i];
  }
  sc.mic1 = Wave(std::move(m1), ChannelId::kMic1);
  sc.mic2 = Wave(std::move(m2), ChannelId::kMic2);
  sc.reference = Wave(ref, ChannelId::kReference);
  sc.clean = Wave(src, ChannelId::kMono);
  if (overrides.keep_components) {
    sc.components = SceneComponents{Wave(src2, ChannelId::kMic2),
                                    Wave(echo1, ChannelId::kMic1),
                                    Wave(echo2, ChannelId::kMic2),
                                    Wave(noise1, ChannelId::kMic1),
                                    Wave(noise2, ChannelId::kMic2)};
  }
  return sc;
}

Tensor MakeSupervision(const Scene &scene, const AecConfig &aec,
                       const StftConfig &stft) {
  const Spectrogram ref = Stft(scene.reference, stft);
  const Spectrogram e1 = AecWiener(Stft(scene.mic1, stft), ref, aec);
  const Spectrogram e2 = AecWiener(Stft(scene.mic2, stft), ref, aec);
  return MagnitudeSpectrum(DelayAndSum(Spectrogram::Stack({e1, e2}), 90.0));
}

namespace {

uint64_t SplitHash(const SceneConfig &cfg, int index) {
  return SplitMix64(SplitMix64(cfg.seed + 0x5bd1e995ULL) ^ static_cast<uint64_t>(index));
}

}  // namespace

DatasetSplit SplitIndices(const SceneConfig &cfg) {
  cfg.Validate();
  // Rank scenes by hash and hold out exactly round(test_fraction * n).
  std::vector<int> order(cfg.num_scenes);
  for (int i = 0; i < cfg.num_scenes; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const uint64_t ha = SplitHash(cfg, a), hb = SplitHash(cfg, b);
    return ha != hb ? ha < hb : a < b;
  });
  const auto n_test = static_cast<size_t>(std::llround(cfg.test_fraction * cfg.num_scenes));
  DatasetSplit split;
  split.test.assign(order.begin(), order.begin() + n_test);
  split.train.assign(order.begin() + n_test, order.end());
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

bool IsTestIndex(const SceneConfig &cfg, int index) {
  const auto split = SplitIndices(cfg);
  return std::binary_search(split.test.begin(), split.test.end(), index);
}

std::vector<Scene> BuildScenes(const SceneConfig &cfg, const std::vector<int> &indices) {
  std::vector<Scene> out;
  out.reserve(indices.size());
  for (int i : indices) {
    Scene sc = SynthesizeScene(cfg, i);
    sc.supervision = MakeSupervision(sc, {}, cfg.stft);
    out.push_back(std::move(sc));
  }
  return out;
}

void WriteSceneFiles(const std::string &dir, const Scene &scene) {
  std::filesystem::create_directories(dir);
  const std::string prefix = ScenePrefix(dir, scene.index);
  WriteWav(prefix + "_mic1.wav", scene.mic1);
  WriteWav(prefix + "_mic2.wav", scene.mic2);
  WriteWav(prefix + "_ref.wav", scene.reference);
  const std::string tmp = prefix + ".txt.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    char buf[64];
    out << "index=" << scene.index << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", scene.azimuth_deg);
    out << "azimuth_deg=" << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.17g", scene.snr_db);
    out << "snr_db=" << buf << "\n";
    out << "has_echo=" << (scene.has_echo ? 1 : 0) << "\n";
    out << "bucket=" << static_cast<int>(scene.bucket) << "\n";
    out << "labels=";
    for (size_t i = 0; i < scene.frame_labels.size(); ++i)
      out << (i ? " " : "") << scene.frame_labels[i];
    out << "\n";
  }
  std::filesystem::rename(tmp, prefix + ".txt");
}

Scene ReadSceneFiles(const std::string &dir, int index) {
  const std::string prefix = ScenePrefix(dir, index);
  std::ifstream in(prefix + ".txt");
  if (!in) throw std::runtime_error("missing scene sidecar " + prefix + ".txt");
  Scene sc;
  sc.index = index;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "index") {
      if (std::stoi(val) != index)
        throw std::runtime_error(prefix + ".txt: index " + val + " does not match file name");
    } else if (key == "azimuth_deg") {
      sc.azimuth_deg = std::stod(val);
    } else if (key == "snr_db") {
      sc.snr_db = std::stod(val);
    } else if (key == "has_echo") {
      sc.has_echo = val == "1";
    } else if (key == "bucket") {
      const int b = std::stoi(val);
      if (b < 0 || b >= kNumBuckets)
        throw std::runtime_error(prefix + ".txt: bad bucket " + val);
      sc.bucket = static_cast<Bucket>(b);
    } else if (key == "labels") {
      std::istringstream ls(val);
      int l;
      while (ls >> l) sc.frame_labels.push_back(l);
    } else {
      throw std::runtime_error(prefix + ".txt: unknown key '" + key + "'");
    }
  }
  auto load = [&](const std::string &suffix, ChannelId ch) {
    auto chans = ReadWav(prefix + suffix);
    if (chans.size() != 1)
      throw WavError(prefix + suffix + ": expected a mono file");
    chans[0].channel = ch;
    return chans[0];
  };
  sc.mic1 = load("_mic1.wav", ChannelId::kMic1);
  sc.mic2 = load("_mic2.wav", ChannelId::kMic2);
  sc.reference = load("_ref.wav", ChannelId::kReference);
  if (sc.mic1.size() != sc.mic2.size() || sc.mic1.size() != sc.reference.size())
    throw ShapeError(prefix + ": channel lengths differ");
  return sc;
}

std::vector<int> ListSceneFiles(const std::string &dir) {
  if (!std::filesystem::is_directory(dir))
    throw std::runtime_error("scene directory " + dir + " does not exist");
  static const std::regex kName(R"(scene_(\d+)\.txt)");
  std::vector<int> out;
  for (const auto &entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, kName)) out.push_back(std::stoi(m[1].str()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace mcdc
