// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Training systems built from the DCUnet, the classic front-end and the
// acoustic back-end, the multi-task loss schedule, Adam and evaluation.

#ifndef MCDCUNET_TRAINER_H_
#define MCDCUNET_TRAINER_H_

#include <array>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mcdcunet/backend.h"
#include "mcdcunet/checkpoint.h"
#include "mcdcunet/dcunet.h"
#include "mcdcunet/frontend.h"
#include "mcdcunet/scene.h"

namespace mcdc {

// kDcunet is the stand-alone enhancement network used for pretraining.
enum class SystemKind { kBaseline, kNnfb, kCascade, kMtl, kDcunet };

const char *SystemName(SystemKind kind);
// Accepts baseline, nnfb, cascade, mtl, dcunet.
SystemKind ParseSystem(const std::string &name);
bool HasRecognitionHead(SystemKind kind);
bool HasEnhancementOutput(SystemKind kind);
bool UsesDcunet(SystemKind kind);

struct OptimizerConfig {
  std::string kind = "adam";  // "adam" or "sgd"
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void Validate() const;
};

struct TrainSchedule {
  double beta = 0.8;
  int t_enh = 3;      // epochs that carry the enhancement loss
  int epochs = 10;
  int batch_size = 4;
  OptimizerConfig optimizer;
  uint64_t seed = 1;
  double dropout = 0.2;   // before the back-end
  std::string init_from;  // empty: random initialization

  void Validate() const;
  // Epochs are 1-based; the enhancement task is active for t <= t_enh.
  bool EnhancementActive(int t) const { return t <= t_enh; }
};

// (1 - beta) * l_asr + beta * l_enh while t <= t_enh, l_asr afterwards.
double MtlLoss(double l_asr, double l_enh, int t, const TrainSchedule &sched);
Var MtlLoss(const Var &l_asr, const Var &l_enh, int t, const TrainSchedule &sched);

struct ModelPreset {
  std::string name = "desk";
  DcunetConfig dcunet;
  BackendConfig backend;
  NnfbConfig nnfb;
  MelConfig mel;
  StftConfig stft;
  AecConfig aec;

  static ModelPreset Desk();
  static ModelPreset PaperScale();
  // "desk" or "paper".
  static ModelPreset Named(const std::string &name);
};

// One scene prepared for a given system.
struct Example {
  int index = 0;
  Bucket bucket = Bucket::kHighSnr;
  std::vector<int> labels;
  // Network input without the batch axis: planar (6, F, T) for DCUnet
  // systems, planar AEC output (4, F, T) for nnfb, log-FBank (1, M, T) for
  // the baseline.
  Tensor input;
  Tensor supervision;  // (F, T) target magnitudes
  Tensor unprocessed;  // (F, T) |STFT(mic1)|
};

// Computes the supervision when the scene does not carry it yet.
Example MakeExample(const Scene &scene, SystemKind kind, const ModelPreset &preset);
std::vector<Example> MakeExamples(const std::vector<Scene> &scenes, SystemKind kind,
                                  const ModelPreset &preset);

class SystemModel {
 public:
  SystemModel(SystemKind kind, ModelPreset preset, double dropout);

  SystemKind kind() const { return kind_; }
  const ModelPreset &preset() const { return preset_; }
  const Dcunet &dcunet() const { return dcunet_; }
  const Backend &backend() const { return backend_; }
  void InitParameters(ParameterStore &ps, std::mt19937_64 &rng) const;

  // Name prefixes of the shared encoder, the enhancement decoder and the
  // recognition branch.
  static std::vector<std::string> EncoderPrefixes();
  static std::vector<std::string> DecoderPrefixes();
  std::vector<std::string> RecognitionPrefixes() const;

  struct Output {
    Var log_probs;  // (N, K, T), absent for kDcunet
    Var enhanced;   // planar (N, 2, F, T), absent when not computed
  };
  // input: batched Example::input. The MTL decoder runs only when
  // run_decoder is set.
  Output Forward(Tape &tape, ParameterStore &ps, const Var &input, bool training,
                 bool run_decoder, std::mt19937_64 &rng) const;

 private:
  SystemKind kind_;
  ModelPreset preset_;
  Dcunet dcunet_;
  Backend backend_;
  NnfbLayer nnfb_;
  Tensor mel_;  // (M, F)
};

// Stacks inputs along a new batch axis; all examples must share one shape.
Tensor StackInputs(const std::vector<const Example *> &batch);
Tensor StackSupervision(const std::vector<const Example *> &batch);
std::vector<int> StackLabels(const std::vector<const Example *> &batch);

struct StepLosses {
  Var l_asr;  // absent for kDcunet
  Var l_enh;  // absent when the decoder was not run
  Var total;
};
// Loss of one batch at epoch t following the system's schedule: L_enh for
// kDcunet, L_asr for baseline, nnfb and cascade, MtlLoss for mtl.
StepLosses ComputeLosses(Tape &tape, ParameterStore &ps, const SystemModel &model,
                         const std::vector<const Example *> &batch, int t,
                         const TrainSchedule &sched, bool training,
                         std::mt19937_64 &rng);

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg, AdamState state = {});
  // Updates every trainable, non-frozen parameter from its gradient.
  void Step(ParameterStore &ps);
  const AdamState &state() const { return state_; }

 private:
  OptimizerConfig cfg_;
  AdamState state_;
};

struct BucketStats {
  int64_t scenes = 0;
  int64_t frames = 0;
  int64_t correct = 0;
  double nll_sum = 0.0;
  double enh_sq_sum = 0.0;
  double unprocessed_sq_sum = 0.0;
  int64_t enh_values = 0;

  // Absent for an empty bucket.
  std::optional<double> accuracy() const;
  std::optional<double> enhancement_mse() const;
  std::optional<double> unprocessed_mse() const;
  void Merge(const BucketStats &other);
};

struct EvalReport {
  SystemKind system = SystemKind::kBaseline;
  std::array<BucketStats, kNumBuckets> buckets{};
  BucketStats total;

  double l_asr() const;  // NaN without a recognition head
  double l_enh() const;  // NaN without an enhancement output
  // Plain-text table with columns Echoed, <5 dB, [5,15) dB, >=15 dB, Total.
  std::string Table() const;
};

// Eval-mode pass over the examples; the decoder always runs when present.
EvalReport Evaluate(const SystemModel &model, ParameterStore &ps,
                    const std::vector<Example> &examples);

struct EpochMetrics {
  int epoch = 0;  // 0 is the state before training
  double l_asr = 0.0;      // held-out, NaN when not applicable
  double l_enh = 0.0;      // held-out, NaN when not applicable
  double frame_acc = 0.0;  // held-out, NaN when not applicable
  double train_loss = 0.0; // mean scheduled loss over the epoch's batches

  // "epoch,system,L_asr,L_enh,frame_acc" with "-" for absent values.
  std::string Line(SystemKind system) const;
};

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::string checkpoint_path;  // rewritten after every epoch when set
  std::string metrics_path;     // appended after every epoch when set
  std::function<void(const EpochMetrics &)> on_epoch;
  // Test hook: called with the loss of every batch before the backward pass.
  std::function<void(int epoch, int batch, Var &total)> on_batch;
};

struct TrainResult {
  ParameterStore params;
  AdamState optimizer;
  std::vector<EpochMetrics> history;
  std::map<std::string, std::string> metadata;
};

std::map<std::string, std::string> CheckpointMetadata(SystemKind kind,
                                                      const ModelPreset &preset,
                                                      const TrainSchedule &sched,
                                                      int epoch);

// Builds the model a checkpoint was written for and loads its parameters.
struct LoadedSystem {
  SystemModel model;
  ParameterStore params;
  Checkpoint checkpoint;
};
LoadedSystem LoadSystem(const std::string &checkpoint_path);

// Trains `kind` on train_set, reporting held-out metrics after every epoch.
// A non-finite batch loss throws NonFiniteLossError; the checkpoint file then
// still holds the last completed epoch.
TrainResult Train(SystemKind kind, const ModelPreset &preset,
                  const TrainSchedule &sched, const std::vector<Example> &train_set,
                  const std::vector<Example> &heldout, const TrainOptions &opts = {});

// Trains the stand-alone DCUnet on the magnitude loss only.
TrainResult PretrainDcunet(const ModelPreset &preset, const TrainSchedule &sched,
                           const std::vector<Example> &train_set,
                           const std::vector<Example> &heldout,
                           const TrainOptions &opts = {});

}  // namespace mcdc

#endif  // MCDCUNET_TRAINER_H_
