// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "mcdcunet/scene.h"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

namespace mcdc {
namespace {

double Energy(const Waveform &w) {
  double e = 0.0;
  for (double v : w.samples) e += v * v;
  return e;
}

std::string TempDir(const std::string &name) {
  auto p = std::filesystem::temp_directory_path() /
           ("mcdc_scene_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p.string();
}

TEST(FractionalDelay, IntegerShiftIsExact) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(1000);
  for (auto &v : x) v = g(rng);
  const auto y = FractionalDelay(x, 3.0);
  for (size_t i = 3; i < x.size(); ++i) ASSERT_NEAR(y[i], x[i - 3], 1e-12);
}

TEST(FractionalDelay, SinusoidPhaseShift) {
  const double hz = 1000.0, d = 3.265;
  std::vector<double> x(4000);
  for (size_t i = 0; i < x.size(); ++i)
    x[i] = std::sin(2 * std::numbers::pi * hz * i / kSampleRate);
  const auto y = FractionalDelay(x, d);
  // The zero-padded signal has edges, so compare the interior only.
  for (size_t i = 500; i < 3500; ++i)
    ASSERT_NEAR(y[i], std::sin(2 * std::numbers::pi * hz * (i - d) / kSampleRate), 2e-3);
}

TEST(SceneConfig, DefaultsAndValidation) {
  SceneConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.echo_fraction, 0.235);
  EXPECT_DOUBLE_EQ(cfg.snr_bucket_fractions[0], 0.14);
  EXPECT_DOUBLE_EQ(cfg.snr_bucket_fractions[1], 0.32);
  EXPECT_DOUBLE_EQ(cfg.snr_bucket_fractions[2], 0.305);
  EXPECT_NO_THROW(cfg.Validate());
  EXPECT_EQ(cfg.NumFrames(), 98);

  SceneConfig bad = cfg;
  bad.snr_bucket_fractions[1] = 0.5;
  try {
    bad.Validate();
    FAIL();
  } catch (const std::invalid_argument &e) {
    EXPECT_NE(std::string(e.what()).find("snr_bucket_fractions"), std::string::npos);
  }
  bad = cfg;
  bad.echo_fraction = -0.1;
  EXPECT_THROW(SynthesizeScene(bad, 0), std::invalid_argument);
  bad = cfg;
  bad.echo_fir_taps = 33;
  EXPECT_THROW(bad.Validate(), std::invalid_argument);
}

TEST(Scene, AnalyticDelays) {
  const ArrayGeometry geom;
  EXPECT_NEAR(geom.Delay(0.0) * kSampleRate, 0.07 / 343.0 * 16000.0, 1e-12);
  EXPECT_NEAR(geom.Delay(0.0) * kSampleRate, 3.265, 1e-3);
  EXPECT_EQ(geom.Delay(90.0), 0.0);

  SceneConfig cfg;
  SceneOverrides ov;
  ov.azimuth_deg = 90.0;
  ov.keep_components = true;
  Scene sc = SynthesizeScene(cfg, 3, ov);
  EXPECT_EQ(sc.components->source_mic2.samples, sc.clean.samples);
}

TEST(Scene, CrossCorrelationPeakAtAnalyticDelay) {
  SceneConfig cfg;
  for (double az : {0.0, 45.0}) {
    SceneOverrides ov;
    ov.azimuth_deg = az;
    ov.keep_components = true;
    Scene sc = SynthesizeScene(cfg, 5, ov);
    const auto &a = sc.clean.samples, &b = sc.components->source_mic2.samples;
    int best = 0;
    double best_val = -INFINITY;
    for (int lag = -10; lag <= 10; ++lag) {
      double acc = 0.0;
      for (size_t i = 20; i + 20 < a.size(); ++i) acc += a[i] * b[i + lag];
      if (acc > best_val) {
        best_val = acc;
        best = lag;
      }
    }
    const double expect = cfg.geometry.Delay(az) * kSampleRate;
    EXPECT_LE(std::abs(best - expect), 1.0) << "azimuth " << az;
  }
}

TEST(Scene, MeasuredSnrMatchesRequest) {
  SceneConfig cfg;
  for (int i = 0; i < 30; ++i) {
    SceneOverrides ov;
    ov.keep_components = true;
    Scene sc = SynthesizeScene(cfg, i, ov);
    const double measured =
        10.0 * std::log10(Energy(sc.clean) / Energy(sc.components->noise_mic1));
    ASSERT_NEAR(measured, sc.snr_db, 0.5) << "scene " << i;
    ASSERT_NEAR(measured, sc.snr_db, 1e-9);
    if (!sc.has_echo) {
      const double lo = sc.bucket == Bucket::kLowSnr ? -1e9
                        : sc.bucket == Bucket::kMidSnr ? 5.0 : 15.0;
      const double hi = sc.bucket == Bucket::kLowSnr ? 5.0
                        : sc.bucket == Bucket::kMidSnr ? 15.0 : 1e9;
      EXPECT_GE(sc.snr_db, lo);
      EXPECT_LT(sc.snr_db, hi);
    }
  }
}

TEST(Scene, EchoAddsEnergy) {
  SceneConfig cfg;
  for (int i = 0; i < 10; ++i) {
    SceneOverrides with, without;
    with.has_echo = true;
    without.has_echo = false;
    Scene a = SynthesizeScene(cfg, i, with), b = SynthesizeScene(cfg, i, without);
    EXPECT_EQ(a.clean.samples, b.clean.samples);
    EXPECT_GT(Energy(a.mic1), Energy(b.mic1));
    EXPECT_GT(Energy(a.mic2), Energy(b.mic2));
    EXPECT_GT(Energy(a.reference), 0.0);
    EXPECT_EQ(Energy(b.reference), 0.0);
  }
}

TEST(Scene, LabelsFollowFrameCentres) {
  SceneConfig cfg;
  Scene sc = SynthesizeScene(cfg, 2);
  ASSERT_EQ(static_cast<int64_t>(sc.frame_labels.size()), Stft(sc.mic1).frames());
  for (int l : sc.frame_labels) {
    EXPECT_GE(l, 0);
    EXPECT_LT(l, cfg.num_classes);
  }
  // Segments last 100-400 ms, so labels change at most every 10 frames.
  int changes = 0;
  for (size_t t = 1; t < sc.frame_labels.size(); ++t)
    changes += sc.frame_labels[t] != sc.frame_labels[t - 1];
  EXPECT_LE(changes, 10);
}

TEST(Scene, DeterministicPerSeed) {
  SceneConfig cfg;
  Scene a = SynthesizeScene(cfg, 7), b = SynthesizeScene(cfg, 7);
  EXPECT_EQ(a.mic1.samples, b.mic1.samples);
  EXPECT_EQ(a.mic2.samples, b.mic2.samples);
  EXPECT_EQ(a.reference.samples, b.reference.samples);
  EXPECT_EQ(a.frame_labels, b.frame_labels);
  cfg.seed = 2;
  EXPECT_NE(SynthesizeScene(cfg, 7).mic1.samples, a.mic1.samples);
}

TEST(Scene, BucketProportions) {
  SceneConfig cfg;
  std::array<int, kNumBuckets> counts{};
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    // Only the metadata stream matters here; noise-free keeps it quick.
    SceneOverrides ov;
    ov.noise = false;
    ++counts[static_cast<int>(SynthesizeScene(cfg, i, ov).bucket)];
  }
  const double expect[] = {0.235, 0.14, 0.32, 0.305};
  for (int b = 0; b < kNumBuckets; ++b)
    EXPECT_NEAR(counts[b] / static_cast<double>(n), expect[b], 0.03) << BucketName(static_cast<Bucket>(b));
}

TEST(Dataset, SplitIsNinetyTen) {
  SceneConfig cfg;
  for (int scenes : {200, 5000}) {
    cfg.num_scenes = scenes;
    const auto split = SplitIndices(cfg);
    EXPECT_EQ(split.train.size() + split.test.size(), static_cast<size_t>(scenes));
    EXPECT_NEAR(split.test.size() / static_cast<double>(scenes), 0.1, 0.02);
    EXPECT_EQ(SplitIndices(cfg).test, split.test);
  }
}

TEST(Supervision, CleanBroadsideSceneRecoversSource) {
  SceneConfig cfg;
  SceneOverrides ov;
  ov.has_echo = false;
  ov.noise = false;
  ov.azimuth_deg = 90.0;
  Scene sc = SynthesizeScene(cfg, 4, ov);
  Tensor msup = MakeSupervision(sc);
  Tensor ref = MagnitudeSpectrum(Stft(sc.clean));
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < ref.numel(); ++i) {
    num += (msup[i] - ref[i]) * (msup[i] - ref[i]);
    den += ref[i] * ref[i];
    ASSERT_GE(msup[i], 0.0);
  }
  EXPECT_LT(std::sqrt(num / den), 0.05);
}

TEST(Supervision, ZeroSceneGivesZero) {
  Scene sc;
  sc.mic1.samples.assign(16000, 0.0);
  sc.mic2 = sc.reference = sc.mic1;
  EXPECT_EQ(MakeSupervision(sc).MaxAbs(), 0.0);
}

TEST(Supervision, NonNegativeOnEchoScenes) {
  SceneConfig cfg;
  SceneOverrides ov;
  ov.has_echo = true;
  Tensor msup = MakeSupervision(SynthesizeScene(cfg, 9, ov));
  EXPECT_EQ(msup.shape(), (Shape{257, 98}));
  for (double v : msup.values()) ASSERT_GE(v, 0.0);
}

TEST(SceneFiles, ExportAndReadBack) {
  const std::string dir = TempDir("export");
  SceneConfig cfg;
  Scene sc = SynthesizeScene(cfg, 12, SceneOverrides{.has_echo = true});
  WriteSceneFiles(dir, sc);
  for (const char *suffix : {"_mic1.wav", "_mic2.wav", "_ref.wav", ".txt"})
    EXPECT_TRUE(std::filesystem::exists(dir + "/scene_00012" + suffix)) << suffix;
  Scene back = ReadSceneFiles(dir, 12);
  EXPECT_EQ(back.frame_labels, sc.frame_labels);
  EXPECT_EQ(back.azimuth_deg, sc.azimuth_deg);
  EXPECT_EQ(back.snr_db, sc.snr_db);
  EXPECT_TRUE(back.has_echo);
  EXPECT_EQ(back.bucket, Bucket::kEchoed);
  ASSERT_EQ(back.mic1.size(), sc.mic1.size());
  for (int64_t i = 0; i < sc.mic1.size(); ++i)
    ASSERT_NEAR(back.mic1.samples[i], sc.mic1.samples[i], 1.0 / 32768);
  EXPECT_EQ(ListSceneFiles(dir), std::vector<int>{12});
  EXPECT_THROW(ReadSceneFiles(dir, 13), std::runtime_error);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace mcdc
