// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Synthetic two-microphone scenes with a loudspeaker reference channel,
// directional labelled sources, echo and additive noise.

#ifndef MCDCUNET_SCENE_H_
#define MCDCUNET_SCENE_H_

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mcdcunet/dsp.h"
#include "mcdcunet/frontend.h"

namespace mcdc {

enum class Bucket { kEchoed = 0, kLowSnr = 1, kMidSnr = 2, kHighSnr = 3 };
constexpr int kNumBuckets = 4;
// Column titles: "Echoed", "<5 dB", "[5,15) dB", ">=15 dB".
const char *BucketName(Bucket b);

struct SceneConfig {
  int num_scenes = 200;
  double duration_s = 1.0;
  int num_classes = 8;
  double min_segment_ms = 100.0;
  double max_segment_ms = 400.0;
  double echo_fraction = 0.235;
  // Shares of the non-echo SNR buckets <5, [5,15), >=15 dB. Together with
  // echo_fraction they must sum to one.
  std::array<double, 3> snr_bucket_fractions{0.14, 0.32, 0.305};
  // SNR range sampled for each bucket; echoed scenes draw from the union.
  double min_snr_db = 0.0;
  double max_snr_db = 25.0;
  double echo_to_signal_db = 0.0;
  int echo_fir_taps = 32;
  double source_rms = 0.05;
  double test_fraction = 0.1;
  uint64_t seed = 1;
  ArrayGeometry geometry;
  StftConfig stft;

  int64_t NumSamples() const;
  int64_t NumFrames() const { return stft.NumFrames(NumSamples()); }
  // Throws std::invalid_argument naming the offending field.
  void Validate() const;
};

// Centre frequency of each synthetic class pattern.
std::vector<double> ClassCenters(int num_classes);

// Signal components kept only on request (tests and diagnostics).
struct SceneComponents {
  Waveform source_mic2;
  Waveform echo_mic1, echo_mic2;
  Waveform noise_mic1, noise_mic2;
};

struct Scene {
  int index = 0;
  Waveform mic1, mic2, reference;
  Waveform clean;  // source at the mic1 position
  double azimuth_deg = 90.0;
  double snr_db = 0.0;
  bool has_echo = false;
  Bucket bucket = Bucket::kHighSnr;
  std::vector<int> frame_labels;
  Tensor supervision;  // (bins, frames), empty until MakeSupervision
  std::optional<SceneComponents> components;
};

// Per-call knobs used by tests to derive counterparts of the same scene.
struct SceneOverrides {
  std::optional<bool> has_echo;
  std::optional<double> azimuth_deg;
  std::optional<double> snr_db;
  bool noise = true;
  bool keep_components = false;
};

// Scene `index` is a pure function of (cfg, index).
Scene SynthesizeScene(const SceneConfig &cfg, int index,
                      const SceneOverrides &overrides = {});

// AEC on both mics, broadside delay-and-sum, then |STFT|.
Tensor MakeSupervision(const Scene &scene, const AecConfig &aec = {},
                       const StftConfig &stft = {});

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> test;
};
// Deterministic split: scenes ranked by a hash of (seed, index), the lowest
// round(test_fraction * num_scenes) held out.
DatasetSplit SplitIndices(const SceneConfig &cfg);
bool IsTestIndex(const SceneConfig &cfg, int index);

// Scenes of one split with supervision attached.
std::vector<Scene> BuildScenes(const SceneConfig &cfg, const std::vector<int> &indices);

// Writes scene_NNNNN_{mic1,mic2,ref}.wav and scene_NNNNN.txt into dir.
void WriteSceneFiles(const std::string &dir, const Scene &scene);
// Reads back one exported scene (mics, reference, metadata and labels).
Scene ReadSceneFiles(const std::string &dir, int index);
// Indices of every exported scene in dir, ascending.
std::vector<int> ListSceneFiles(const std::string &dir);

uint64_t SplitMix64(uint64_t x);

}  // namespace mcdc

#endif  // MCDCUNET_SCENE_H_
