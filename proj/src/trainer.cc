// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "mcdcunet/trainer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mcdcunet/ops.h"

namespace mcdc {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string Num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string Fixed(double v, const char *fmt) {
  if (std::isnan(v)) return "-";
  char buf[40];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

// Frequency extent after the encoder's stride-2 "same" convolutions.
int64_t BottleneckBins(const DcunetConfig &cfg, int64_t bins) {
  for (size_t i = 0; i < cfg.encoder_channels.size(); ++i) bins = (bins + 1) / 2;
  return bins;
}

BackendConfig BackendFor(SystemKind kind, const ModelPreset &p, double dropout) {
  BackendConfig b = p.backend;
  b.dropout = dropout;
  if (kind == SystemKind::kMtl) {
    b.in_channels = 2 * p.dcunet.encoder_channels.back();
    b.in_height = static_cast<int>(BottleneckBins(p.dcunet, p.stft.num_bins()));
  } else {
    b.in_channels = 1;
    b.in_height = p.mel.num_filters;
  }
  return b;
}

// Fisher-Yates driven by SplitMix64 so the order is the same on every
// platform.
std::vector<int> EpochOrder(size_t n, uint64_t seed, int epoch) {
  std::vector<int> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  uint64_t state = SplitMix64(seed ^ (0xa0761d6478bd642fULL * static_cast<uint64_t>(epoch)));
  for (size_t i = n; i > 1; --i) {
    state = SplitMix64(state);
    std::swap(order[i - 1], order[state % i]);
  }
  return order;
}

Tensor Unbatched(const Tensor &t) {
  Shape s = t.shape();
  s.erase(s.begin());
  return t.Reshaped(s);
}

Tensor Batched(const Tensor &t) {
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  return t.Reshaped(s);
}

void AppendMetrics(const std::string &path, const std::string &line) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to metrics log " + path);
  if (fresh) out << "epoch,system,L_asr,L_enh,frame_acc\n";
  out << line << "\n";
}

}  // namespace

const char *SystemName(SystemKind kind) {
  switch (kind) {
    case SystemKind::kBaseline: return "baseline";
    case SystemKind::kNnfb: return "nnfb";
    case SystemKind::kCascade: return "cascade";
    case SystemKind::kMtl: return "mtl";
    case SystemKind::kDcunet: return "dcunet";
  }
  return "?";
}

SystemKind ParseSystem(const std::string &name) {
  for (SystemKind k : {SystemKind::kBaseline, SystemKind::kNnfb, SystemKind::kCascade,
                       SystemKind::kMtl, SystemKind::kDcunet})
    if (name == SystemName(k)) return k;
  throw std::invalid_argument("unknown system '" + name +
                              "' (expected baseline, nnfb, cascade, mtl or dcunet)");
}

bool HasRecognitionHead(SystemKind kind) { return kind != SystemKind::kDcunet; }

bool HasEnhancementOutput(SystemKind kind) { return UsesDcunet(kind); }

bool UsesDcunet(SystemKind kind) {
  return kind == SystemKind::kCascade || kind == SystemKind::kMtl ||
         kind == SystemKind::kDcunet;
}

void OptimizerConfig::Validate() const {
  if (kind != "adam" && kind != "sgd")
    throw std::invalid_argument("optimizer: unknown kind '" + kind + "'");
  if (!(lr > 0.0)) throw std::invalid_argument("optimizer: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("optimizer: eps must be positive");
}

void TrainSchedule::Validate() const {
  if (!(beta >= 0.0 && beta <= 1.0))
    throw std::invalid_argument("beta must lie in [0, 1]");
  if (t_enh < 0) throw std::invalid_argument("t_enh must be non-negative");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("dropout must lie in [0, 1)");
  optimizer.Validate();
}

double MtlLoss(double l_asr, double l_enh, int t, const TrainSchedule &sched) {
  if (!sched.EnhancementActive(t)) return l_asr;
  return (1.0 - sched.beta) * l_asr + sched.beta * l_enh;
}

Var MtlLoss(const Var &l_asr, const Var &l_enh, int t, const TrainSchedule &sched) {
  if (!sched.EnhancementActive(t)) return l_asr;
  return ops::LinearCombination({l_asr, l_enh}, {1.0 - sched.beta, sched.beta});
}

ModelPreset ModelPreset::Desk() { return ModelPreset{}; }

ModelPreset ModelPreset::PaperScale() {
  ModelPreset p;
  p.name = "paper";
  p.backend = BackendConfig::PaperScale();
  return p;
}

ModelPreset ModelPreset::Named(const std::string &name) {
  if (name == "desk") return Desk();
  if (name == "paper") return PaperScale();
  throw std::invalid_argument("unknown preset '" + name + "' (expected desk or paper)");
}

Example MakeExample(const Scene &scene, SystemKind kind, const ModelPreset &preset) {
  Example ex;
  ex.index = scene.index;
  ex.bucket = scene.bucket;
  ex.labels = scene.frame_labels;
  const Spectrogram m1 = Stft(scene.mic1, preset.stft);
  const Spectrogram m2 = Stft(scene.mic2, preset.stft);
  const Spectrogram ref = Stft(scene.reference, preset.stft);
  if (static_cast<int64_t>(ex.labels.size()) != m1.frames())
    throw ShapeError("scene " + std::to_string(scene.index) + " has " +
                     std::to_string(ex.labels.size()) + " labels for " +
                     std::to_string(m1.frames()) + " frames");
  ex.supervision = scene.supervision.empty()
                       ? MakeSupervision(scene, preset.aec, preset.stft)
                       : scene.supervision;
  CheckSameShape(Shape{m1.bins(), m1.frames()}, ex.supervision.shape(),
                 "scene supervision");
  ex.unprocessed = MagnitudeSpectrum(m1);
  switch (kind) {
    case SystemKind::kBaseline: {
      Tensor power = ex.supervision;
      for (double &v : power.values()) v *= v;
      const Tensor fb = LogFbank(power, preset.mel, preset.stft);  // (T, M)
      const int64_t T = fb.size(0), M = fb.size(1);
      ex.input = Tensor({1, M, T});
      for (int64_t t = 0; t < T; ++t)
        for (int64_t m = 0; m < M; ++m) ex.input[m * T + t] = fb[t * M + m];
      break;
    }
    case SystemKind::kNnfb: {
      const Spectrogram e1 = AecWiener(m1, ref, preset.aec);
      const Spectrogram e2 = AecWiener(m2, ref, preset.aec);
      ex.input = Unbatched(ToPlanar(Spectrogram::Stack({e1, e2})));
      break;
    }
    default:
      ex.input = Unbatched(PlanarInput(m1, m2, ref));
  }
  return ex;
}

std::vector<Example> MakeExamples(const std::vector<Scene> &scenes, SystemKind kind,
                                  const ModelPreset &preset) {
  std::vector<Example> out;
  out.reserve(scenes.size());
  for (const auto &s : scenes) out.push_back(MakeExample(s, kind, preset));
  return out;
}

SystemModel::SystemModel(SystemKind kind, ModelPreset preset, double dropout)
    : kind_(kind),
      preset_(std::move(preset)),
      dcunet_(preset_.dcunet),
      backend_(BackendFor(kind, preset_, dropout)),
      nnfb_(preset_.nnfb, preset_.stft),
      mel_(MelFilterbank(preset_.mel, preset_.stft)) {
  if (preset_.nnfb.mel_filters != preset_.mel.num_filters)
    throw std::invalid_argument("preset: nnfb mel_filters must equal mel num_filters");
}

void SystemModel::InitParameters(ParameterStore &ps, std::mt19937_64 &rng) const {
  if (UsesDcunet(kind_)) dcunet_.InitParameters(ps, rng);
  if (kind_ == SystemKind::kNnfb) nnfb_.InitParameters(ps, rng);
  if (HasRecognitionHead(kind_)) backend_.InitParameters(ps, rng);
}

std::vector<std::string> SystemModel::EncoderPrefixes() { return {"enc"}; }

std::vector<std::string> SystemModel::DecoderPrefixes() { return {"dec"}; }

std::vector<std::string> SystemModel::RecognitionPrefixes() const {
  std::vector<std::string> p{backend_.prefix() + "."};
  if (kind_ == SystemKind::kNnfb) p.push_back("nnfb.");
  return p;
}

SystemModel::Output SystemModel::Forward(Tape &tape, ParameterStore &ps,
                                         const Var &input, bool training,
                                         bool run_decoder,
                                         std::mt19937_64 &rng) const {
  Output out;
  const int64_t N = input.size(0);
  auto log_mel = [&](const Var &planar) {
    const int64_t F = planar.size(2), T = planar.size(3);
    Var power = ops::Power(ops::Slice(planar, 1, 0, 1), ops::Slice(planar, 1, 1, 1));
    Var mel = ops::MatMulAxis1(tape.Constant(mel_), ops::Reshape(power, {N, F, T}));
    mel = ops::LogFloor(mel, preset_.mel.log_floor);
    return ops::Reshape(mel, {N, 1, mel_.size(0), T});
  };
  switch (kind_) {
    case SystemKind::kBaseline:
      out.log_probs = backend_.Forward(tape, ps, input, training, rng);
      break;
    case SystemKind::kNnfb: {
      Var f = nnfb_.Forward(tape, ps, input);
      f = ops::Reshape(f, {N, 1, f.size(1), f.size(2)});
      out.log_probs = backend_.Forward(tape, ps, f, training, rng);
      break;
    }
    case SystemKind::kCascade:
      out.enhanced = dcunet_.Forward(tape, ps, input, training);
      out.log_probs = backend_.Forward(tape, ps, log_mel(out.enhanced), training, rng);
      break;
    case SystemKind::kMtl: {
      const Dcunet::Encoded enc = dcunet_.Encode(tape, ps, input, training);
      if (run_decoder) out.enhanced = dcunet_.Decode(tape, ps, enc, training);
      // The bottleneck's real and imaginary planes become ordinary channels.
      Var lp = backend_.Forward(tape, ps, BridgeComplexToReal(enc.bottleneck), training, rng);
      int64_t factor = 1;
      for (const auto &spec : dcunet_.encoder()) factor *= spec.stride_w;
      // Bottleneck frame j is centred on input frame factor * j.
      out.log_probs = ops::RepeatLastAxis(lp, factor, input.size(3), factor / 2);
      break;
    }
    case SystemKind::kDcunet:
      out.enhanced = dcunet_.Forward(tape, ps, input, training);
      break;
  }
  return out;
}

Tensor StackInputs(const std::vector<const Example *> &batch) {
  if (batch.empty()) throw std::invalid_argument("StackInputs: empty batch");
  const Shape &s = batch[0]->input.shape();
  Shape out_shape = s;
  out_shape.insert(out_shape.begin(), static_cast<int64_t>(batch.size()));
  Tensor out(out_shape);
  const int64_t n = batch[0]->input.numel();
  for (size_t b = 0; b < batch.size(); ++b) {
    CheckSameShape(s, batch[b]->input.shape(), "StackInputs");
    std::copy_n(batch[b]->input.data(), n, out.data() + b * n);
  }
  return out;
}

Tensor StackSupervision(const std::vector<const Example *> &batch) {
  if (batch.empty()) throw std::invalid_argument("StackSupervision: empty batch");
  const Shape &s = batch[0]->supervision.shape();
  Tensor out({static_cast<int64_t>(batch.size()), s[0], s[1]});
  const int64_t n = batch[0]->supervision.numel();
  for (size_t b = 0; b < batch.size(); ++b) {
    CheckSameShape(s, batch[b]->supervision.shape(), "StackSupervision");
    std::copy_n(batch[b]->supervision.data(), n, out.data() + b * n);
  }
  return out;
}

std::vector<int> StackLabels(const std::vector<const Example *> &batch) {
  std::vector<int> out;
  for (const Example *e : batch) out.insert(out.end(), e->labels.begin(), e->labels.end());
  return out;
}

StepLosses ComputeLosses(Tape &tape, ParameterStore &ps, const SystemModel &model,
                         const std::vector<const Example *> &batch, int t,
                         const TrainSchedule &sched, bool training,
                         std::mt19937_64 &rng) {
  const SystemKind kind = model.kind();
  const bool mtl_enh = kind == SystemKind::kMtl && sched.EnhancementActive(t);
  auto out = model.Forward(tape, ps, tape.Constant(StackInputs(batch)), training,
                           mtl_enh, rng);
  StepLosses l;
  if (out.log_probs.valid()) l.l_asr = CeProxyLoss(out.log_probs, StackLabels(batch));
  if (out.enhanced.valid()) l.l_enh = EnhancementLoss(out.enhanced, StackSupervision(batch));
  switch (kind) {
    case SystemKind::kDcunet: l.total = l.l_enh; break;
    case SystemKind::kMtl: l.total = MtlLoss(l.l_asr, l.l_enh, t, sched); break;
    default: l.total = l.l_asr;
  }
  return l;
}

Optimizer::Optimizer(OptimizerConfig cfg, AdamState state)
    : cfg_(std::move(cfg)), state_(std::move(state)) {
  cfg_.Validate();
}

void Optimizer::Step(ParameterStore &ps) {
  ++state_.step;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(state_.step));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(state_.step));
  ps.ForEach([&](Parameter &p) {
    if (!p.trainable || p.frozen) return;
    if (cfg_.kind == "sgd") {
      p.value.AddInPlace(p.grad, -cfg_.lr);
      return;
    }
    auto [mit, fresh] = state_.m.try_emplace(p.name, p.value.shape());
    auto vit = state_.v.try_emplace(p.name, p.value.shape()).first;
    (void)fresh;
    double *m = mit->second.data(), *v = vit->second.data(), *w = p.value.data();
    const double *g = p.grad.data();
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
  });
}

std::optional<double> BucketStats::accuracy() const {
  if (frames == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(frames);
}

std::optional<double> BucketStats::enhancement_mse() const {
  if (enh_values == 0) return std::nullopt;
  return enh_sq_sum / static_cast<double>(enh_values);
}

std::optional<double> BucketStats::unprocessed_mse() const {
  if (enh_values == 0) return std::nullopt;
  return unprocessed_sq_sum / static_cast<double>(enh_values);
}

void BucketStats::Merge(const BucketStats &o) {
  scenes += o.scenes;
  frames += o.frames;
  correct += o.correct;
  nll_sum += o.nll_sum;
  enh_sq_sum += o.enh_sq_sum;
  unprocessed_sq_sum += o.unprocessed_sq_sum;
  enh_values += o.enh_values;
}

double EvalReport::l_asr() const {
  if (!HasRecognitionHead(system) || total.frames == 0) return kNaN;
  return total.nll_sum / static_cast<double>(total.frames);
}

double EvalReport::l_enh() const { return total.enhancement_mse().value_or(kNaN); }

std::string EvalReport::Table() const {
  std::ostringstream os;
  auto row = [&](const std::string &label, auto &&cell) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-12s", label.c_str());
    os << buf;
    for (int b = 0; b <= kNumBuckets; ++b) {
      const BucketStats &s = b < kNumBuckets ? buckets[b] : total;
      std::snprintf(buf, sizeof(buf), "%12s", cell(s).c_str());
      os << buf;
    }
    os << "\n";
  };
  auto opt = [](std::optional<double> v, const char *fmt) {
    return v ? Fixed(*v, fmt) : std::string("absent");
  };
  os << "system: " << SystemName(system) << "\n";
  row("", [&, b = 0](const BucketStats &) mutable {
    return std::string(b < kNumBuckets ? BucketName(static_cast<Bucket>(b++)) : "Total");
  });
  row("scenes", [](const BucketStats &s) { return std::to_string(s.scenes); });
  if (HasRecognitionHead(system))
    row("frame_acc", [&](const BucketStats &s) { return opt(s.accuracy(), "%.4f"); });
  if (HasEnhancementOutput(system)) {
    row("enh_mse", [&](const BucketStats &s) { return opt(s.enhancement_mse(), "%.6f"); });
    row("mic1_mse", [&](const BucketStats &s) { return opt(s.unprocessed_mse(), "%.6f"); });
  }
  return os.str();
}

EvalReport Evaluate(const SystemModel &model, ParameterStore &ps,
                    const std::vector<Example> &examples) {
  EvalReport report;
  report.system = model.kind();
  std::mt19937_64 unused(0);
  for (const Example &ex : examples) {
    Tape tape(false);
    auto out = model.Forward(tape, ps, tape.Constant(Batched(ex.input)), false, true, unused);
    BucketStats s;
    s.scenes = 1;
    if (out.log_probs.valid()) {
      const Tensor &lp = out.log_probs.value();
      const int64_t K = lp.size(1), T = lp.size(2);
      if (static_cast<int64_t>(ex.labels.size()) != T)
        throw ShapeError("Evaluate: labels do not match output frames");
      for (int64_t t = 0; t < T; ++t) {
        const int label = ex.labels[t];
        if (label < 0 || label >= K)
          throw std::out_of_range("Evaluate: label " + std::to_string(label) +
                                  " outside the model's " + std::to_string(K) + " classes");
        int64_t best = 0;
        for (int64_t k = 1; k < K; ++k)
          if (lp[k * T + t] > lp[best * T + t]) best = k;
        s.correct += best == label;
        s.nll_sum -= lp[label * T + t];
      }
      s.frames = T;
    }
    if (out.enhanced.valid()) {
      const Tensor &y = out.enhanced.value();
      const int64_t n = ex.supervision.numel();
      CheckSameShape(ex.supervision.shape(), Shape{y.size(2), y.size(3)}, "Evaluate");
      for (int64_t i = 0; i < n; ++i) {
        const double d = std::hypot(y[i], y[n + i]) - ex.supervision[i];
        const double u = ex.unprocessed[i] - ex.supervision[i];
        s.enh_sq_sum += d * d;
        s.unprocessed_sq_sum += u * u;
      }
      s.enh_values = n;
    }
    report.buckets[static_cast<int>(ex.bucket)].Merge(s);
  }
  for (const auto &b : report.buckets) report.total.Merge(b);
  return report;
}

std::string EpochMetrics::Line(SystemKind system) const {
  return std::to_string(epoch) + "," + SystemName(system) + "," +
         Fixed(l_asr, "%.8f") + "," + Fixed(l_enh, "%.8f") + "," +
         Fixed(frame_acc, "%.6f");
}

std::map<std::string, std::string> CheckpointMetadata(SystemKind kind,
                                                      const ModelPreset &preset,
                                                      const TrainSchedule &sched,
                                                      int epoch) {
  std::map<std::string, std::string> m{
      {"system", SystemName(kind)},
      {"preset", preset.name},
      {"seed", std::to_string(sched.seed)},
      {"beta", Num(sched.beta)},
      {"t_enh", std::to_string(sched.t_enh)},
      {"epochs", std::to_string(sched.epochs)},
      {"batch_size", std::to_string(sched.batch_size)},
      {"dropout", Num(sched.dropout)},
      {"optimizer", sched.optimizer.kind},
      {"lr", Num(sched.optimizer.lr)},
      {"betas", Num(sched.optimizer.beta1) + "," + Num(sched.optimizer.beta2)},
      {"init_from", sched.init_from.empty() ? "random" : sched.init_from},
  };
  std::string canon;
  for (const auto &[k, v] : m) canon += k + "=" + v + "\n";
  m["config_digest"] = Sha256Hex(canon);
  m["epoch"] = std::to_string(epoch);
  return m;
}

LoadedSystem LoadSystem(const std::string &checkpoint_path) {
  Checkpoint ckpt = LoadCheckpoint(checkpoint_path);
  const SystemKind kind = ParseSystem(ckpt.Meta("system"));
  SystemModel model(kind, ModelPreset::Named(ckpt.Meta("preset")),
                    std::stod(ckpt.Meta("dropout")));
  ParameterStore ps;
  std::mt19937_64 rng(0);
  model.InitParameters(ps, rng);
  RestoreParameters(ps, ckpt);
  return LoadedSystem{std::move(model), std::move(ps), std::move(ckpt)};
}

TrainResult Train(SystemKind kind, const ModelPreset &preset, const TrainSchedule &sched,
                  const std::vector<Example> &train_set,
                  const std::vector<Example> &heldout, const TrainOptions &opts) {
  sched.Validate();
  if (train_set.empty()) throw std::invalid_argument("Train: empty training set");
  const SystemModel model(kind, preset, sched.dropout);
  TrainResult res;
  std::mt19937_64 init_rng(sched.seed);
  model.InitParameters(res.params, init_rng);
  if (!sched.init_from.empty()) {
    const Checkpoint init = LoadCheckpoint(sched.init_from);
    // DCUnet systems take the enhancement network; others need an exact match.
    RestoreParameters(res.params, init,
                      UsesDcunet(kind) ? std::vector<std::string>{"enc", "dec"}
                                       : std::vector<std::string>{});
  }
  Optimizer opt(sched.optimizer);

  auto finish_epoch = [&](int epoch, double train_loss) {
    EpochMetrics m{epoch, kNaN, kNaN, kNaN, train_loss};
    if (!heldout.empty()) {
      const EvalReport r = Evaluate(model, res.params, heldout);
      m.l_asr = r.l_asr();
      m.l_enh = r.l_enh();
      m.frame_acc = r.total.accuracy().value_or(kNaN);
      if (!HasRecognitionHead(kind)) m.frame_acc = kNaN;
    }
    res.history.push_back(m);
    res.metadata = CheckpointMetadata(kind, preset, sched, epoch);
    if (!opts.checkpoint_path.empty())
      SaveCheckpoint(opts.checkpoint_path,
                     CaptureCheckpoint(res.params, opt.state(), res.metadata));
    if (!opts.metrics_path.empty()) AppendMetrics(opts.metrics_path, m.Line(kind));
    if (opts.on_epoch) opts.on_epoch(m);
  };

  finish_epoch(0, kNaN);
  for (int t = 1; t <= sched.epochs; ++t) {
    // After the cutover the decoder keeps its weights but stops training.
    if (kind == SystemKind::kMtl && !sched.EnhancementActive(t))
      res.params.SetFrozen("dec", true);
    const auto order = EpochOrder(train_set.size(), sched.seed, t);
    std::mt19937_64 rng(SplitMix64(sched.seed + 0x51ed2701ULL * static_cast<uint64_t>(t)));
    int batch_index = 0;
    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += sched.batch_size, ++batch_index) {
      std::vector<const Example *> batch;
      for (size_t i = start; i < std::min(order.size(), start + sched.batch_size); ++i)
        batch.push_back(&train_set[order[i]]);
      Tape tape;
      res.params.ZeroGrad();
      StepLosses l = ComputeLosses(tape, res.params, model, batch, t, sched, true, rng);
      if (opts.on_batch) opts.on_batch(t, batch_index, l.total);
      const double loss = l.total.value().item();
      if (!std::isfinite(loss))
        throw NonFiniteLossError("non-finite loss " + Num(loss) + " at epoch " +
                                 std::to_string(t) + ", batch " +
                                 std::to_string(batch_index) +
                                 "; keeping the checkpoint of epoch " +
                                 std::to_string(t - 1));
      loss_sum += loss;
      tape.Backward(l.total);
      opt.Step(res.params);
    }
    finish_epoch(t, loss_sum / batch_index);
  }
  res.optimizer = opt.state();
  return res;
}

TrainResult PretrainDcunet(const ModelPreset &preset, const TrainSchedule &sched,
                           const std::vector<Example> &train_set,
                           const std::vector<Example> &heldout,
                           const TrainOptions &opts) {
  return Train(SystemKind::kDcunet, preset, sched, train_set, heldout, opts);
}

}  // namespace mcdc
