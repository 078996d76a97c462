// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// mcdcunet: scene generation, training, evaluation, enhancement and gradient
// checks from the command line.

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mcdcunet/layer_checks.h"
#include "mcdcunet/trainer.h"

namespace fs = std::filesystem;
using namespace mcdc;

namespace {

// Usage and input errors; reported as "error: ..." with exit status 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  uint64_t seed = 1;
  std::string preset = "desk";
  SceneConfig scenes;
  TrainSchedule sched;
};

struct Key {
  std::function<void(RunConfig &, const std::string &)> set;
  std::function<std::string(const RunConfig &)> get;
};

template <typename T>
T ParseValue(const std::string &key, const std::string &text) {
  std::istringstream in(text);
  T v{};
  if (!(in >> v) || !(in >> std::ws).eof())
    throw UsageError("bad value '" + text + "' for " + key);
  return v;
}

// Shortest text that reads back to the same double.
std::string Str(double v) {
  char buf[32];
  return std::string(buf, std::to_chars(buf, buf + sizeof(buf), v).ptr);
}

// Every key accepted in a config file, as "section.key".
const std::map<std::string, Key> &Keys() {
  static const std::map<std::string, Key> keys = [] {
    std::map<std::string, Key> k;
    auto num = [&k](const std::string &name, auto member_of) {
      using T = std::remove_reference_t<decltype(member_of(std::declval<RunConfig &>()))>;
      k[name] = Key{[name, member_of](RunConfig &c, const std::string &v) {
                      member_of(c) = ParseValue<T>(name, v);
                    },
                    [member_of](const RunConfig &c) {
                      const T v = member_of(const_cast<RunConfig &>(c));
                      if constexpr (std::is_floating_point_v<T>) return Str(v);
                      else return std::to_string(v);
                    }};
    };
    auto text = [&k](const std::string &name, auto member_of) {
      k[name] = Key{[member_of](RunConfig &c, const std::string &v) { member_of(c) = v; },
                    [member_of](const RunConfig &c) {
                      return member_of(const_cast<RunConfig &>(c));
                    }};
    };
    num("run.seed", [](RunConfig &c) -> uint64_t & { return c.seed; });
    text("run.preset", [](RunConfig &c) -> std::string & { return c.preset; });

    num("scenes.num_scenes", [](RunConfig &c) -> int & { return c.scenes.num_scenes; });
    num("scenes.duration_s", [](RunConfig &c) -> double & { return c.scenes.duration_s; });
    num("scenes.num_classes", [](RunConfig &c) -> int & { return c.scenes.num_classes; });
    num("scenes.min_segment_ms",
        [](RunConfig &c) -> double & { return c.scenes.min_segment_ms; });
    num("scenes.max_segment_ms",
        [](RunConfig &c) -> double & { return c.scenes.max_segment_ms; });
    num("scenes.echo_fraction", [](RunConfig &c) -> double & { return c.scenes.echo_fraction; });
    num("scenes.snr_low_fraction",
        [](RunConfig &c) -> double & { return c.scenes.snr_bucket_fractions[0]; });
    num("scenes.snr_mid_fraction",
        [](RunConfig &c) -> double & { return c.scenes.snr_bucket_fractions[1]; });
    num("scenes.snr_high_fraction",
        [](RunConfig &c) -> double & { return c.scenes.snr_bucket_fractions[2]; });
    num("scenes.min_snr_db", [](RunConfig &c) -> double & { return c.scenes.min_snr_db; });
    num("scenes.max_snr_db", [](RunConfig &c) -> double & { return c.scenes.max_snr_db; });
    num("scenes.echo_to_signal_db",
        [](RunConfig &c) -> double & { return c.scenes.echo_to_signal_db; });
    num("scenes.source_rms", [](RunConfig &c) -> double & { return c.scenes.source_rms; });
    num("scenes.test_fraction", [](RunConfig &c) -> double & { return c.scenes.test_fraction; });

    num("train.epochs", [](RunConfig &c) -> int & { return c.sched.epochs; });
    num("train.batch_size", [](RunConfig &c) -> int & { return c.sched.batch_size; });
    num("train.beta", [](RunConfig &c) -> double & { return c.sched.beta; });
    num("train.t_enh", [](RunConfig &c) -> int & { return c.sched.t_enh; });
    num("train.dropout", [](RunConfig &c) -> double & { return c.sched.dropout; });
    text("train.optimizer", [](RunConfig &c) -> std::string & { return c.sched.optimizer.kind; });
    num("train.lr", [](RunConfig &c) -> double & { return c.sched.optimizer.lr; });
    text("train.init_from", [](RunConfig &c) -> std::string & { return c.sched.init_from; });
    return k;
  }();
  return keys;
}

void ApplyConfigFile(RunConfig &cfg, const std::string &path) {
  if (!fs::is_regular_file(path)) throw UsageError("config file not found: " + path);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(path);
  } catch (const CLI::Error &e) {
    throw UsageError(path + ": " + e.what());
  }
  for (const auto &item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const std::string key = item.fullname();
    const auto it = Keys().find(key);
    if (it == Keys().end()) throw UsageError(path + ": unknown key '" + key + "'");
    if (item.inputs.size() != 1) throw UsageError(path + ": key '" + key + "' needs one value");
    it->second.set(cfg, item.inputs[0]);
  }
}

void LogConfig(const std::string &command, const RunConfig &cfg) {
  std::cerr << "[" << command << "] resolved config\n";
  for (const auto &[name, key] : Keys())
    std::cerr << "  " << name << " = " << key.get(cfg) << "\n";
}

// Global options plus the per-command overrides registered with Override().
struct Options {
  std::string config_path;
  std::map<std::string, std::string> overrides;  // key -> command-line value
  std::map<std::string, std::string> flag_values;

  void Override(CLI::App *app, const std::string &flag, const std::string &key,
                const std::string &help) {
    app->add_option(flag, flag_values[key], help)->each([this, key](const std::string &v) {
      overrides[key] = v;
    });
  }

  // Defaults, then the environment seed, then the config file, then flags.
  RunConfig Resolve() const {
    RunConfig cfg;
    if (const char *env = std::getenv("MCDCUNET_SEED"); env && *env)
      cfg.seed = ParseValue<uint64_t>("MCDCUNET_SEED", env);
    if (!config_path.empty()) ApplyConfigFile(cfg, config_path);
    for (const auto &[key, value] : overrides) Keys().at(key).set(cfg, value);
    cfg.scenes.seed = cfg.seed;
    cfg.sched.seed = cfg.seed;
    ModelPreset::Named(cfg.preset);
    cfg.scenes.Validate();
    return cfg;
  }
};

// Scenes of the train and test splits, either read from an exported
// directory (DIR/train and DIR/test) or synthesized from the config.
struct SceneSets {
  std::vector<Scene> train, test;
};

std::vector<Scene> ReadSceneDir(const std::string &dir) {
  if (!fs::is_directory(dir)) throw UsageError("scene directory not found: " + dir);
  std::vector<Scene> out;
  for (int idx : ListSceneFiles(dir)) out.push_back(ReadSceneFiles(dir, idx));
  if (out.empty()) throw UsageError("no scenes in " + dir);
  return out;
}

SceneSets LoadScenes(const std::string &dir, const RunConfig &cfg) {
  SceneSets s;
  if (dir.empty()) {
    const DatasetSplit split = SplitIndices(cfg.scenes);
    std::cerr << "synthesizing " << cfg.scenes.num_scenes << " scenes from seed "
              << cfg.scenes.seed << "\n";
    s.train = BuildScenes(cfg.scenes, split.train);
    s.test = BuildScenes(cfg.scenes, split.test);
  } else {
    std::cerr << "reading scenes from " << dir << "\n";
    s.train = ReadSceneDir((fs::path(dir) / "train").string());
    s.test = ReadSceneDir((fs::path(dir) / "test").string());
  }
  return s;
}

// The scenes must fit the model: label count per STFT frame, label range and
// the DCUnet's minimum input size.
void CheckSceneGeometry(const std::vector<Scene> &scenes, const SystemModel &model) {
  const ModelPreset &p = model.preset();
  for (const Scene &sc : scenes) {
    const std::string where = "scene " + std::to_string(sc.index) + ": ";
    const int64_t frames = p.stft.NumFrames(sc.mic1.size());
    if (static_cast<int64_t>(sc.frame_labels.size()) != frames)
      throw UsageError(where + std::to_string(sc.frame_labels.size()) + " labels for " +
                       std::to_string(frames) + " STFT frames");
    if (UsesDcunet(model.kind()) && frames < model.dcunet().MinFrames())
      throw UsageError(where + std::to_string(frames) + " frames, the model needs at least " +
                       std::to_string(model.dcunet().MinFrames()));
    if (HasRecognitionHead(model.kind()))
      for (int l : sc.frame_labels)
        if (l < 0 || l >= model.backend().config().num_classes)
          throw UsageError(where + "label " + std::to_string(l) + " outside the model's " +
                           std::to_string(model.backend().config().num_classes) + " classes");
  }
}

int CmdSimulate(const Options &o, const std::string &out) {
  const RunConfig cfg = o.Resolve();
  LogConfig("simulate", cfg);
  const DatasetSplit split = SplitIndices(cfg.scenes);
  for (const auto &[name, indices] :
       {std::pair{"train", &split.train}, std::pair{"test", &split.test}}) {
    const fs::path dir = fs::path(out) / name;
    fs::create_directories(dir);
    for (int idx : *indices) WriteSceneFiles(dir.string(), SynthesizeScene(cfg.scenes, idx));
  }
  std::cout << "wrote " << split.train.size() << " train and " << split.test.size()
            << " test scenes to " << out << "\n";
  return 0;
}

int CmdTrain(const Options &o, const std::string &system, const std::string &scenes_dir,
             const std::string &out, const std::string &metrics) {
  const RunConfig cfg = o.Resolve();
  const SystemKind kind = ParseSystem(system);
  const std::string command = kind == SystemKind::kDcunet ? "pretrain" : "train " + system;
  LogConfig(command, cfg);
  cfg.sched.Validate();
  const ModelPreset preset = ModelPreset::Named(cfg.preset);
  if (!cfg.sched.init_from.empty() && !fs::is_regular_file(cfg.sched.init_from))
    throw UsageError("init checkpoint not found: " + cfg.sched.init_from);

  const SceneSets sets = LoadScenes(scenes_dir, cfg);
  const SystemModel probe(kind, preset, cfg.sched.dropout);
  CheckSceneGeometry(sets.train, probe);
  CheckSceneGeometry(sets.test, probe);
  const auto train_set = MakeExamples(sets.train, kind, preset);
  const auto heldout = MakeExamples(sets.test, kind, preset);

  TrainOptions opts;
  opts.checkpoint_path = out;
  opts.metrics_path = metrics;
  opts.on_epoch = [kind](const EpochMetrics &m) {
    if (m.epoch == 0) std::cout << "epoch,system,L_asr,L_enh,frame_acc\n";
    std::cout << m.Line(kind) << std::endl;
  };
  Train(kind, preset, cfg.sched, train_set, heldout, opts);
  std::cerr << "checkpoint written to " << out << "\n";
  return 0;
}

void LogCheckpoint(const std::string &command, const Checkpoint &ckpt) {
  std::cerr << "[" << command << "] checkpoint config\n";
  for (const auto &[k, v] : ckpt.metadata) std::cerr << "  " << k << " = " << v << "\n";
}

int CmdEvaluate(const std::string &checkpoint, const std::string &scenes_dir) {
  LoadedSystem sys = LoadSystem(checkpoint);
  LogCheckpoint("evaluate", sys.checkpoint);
  // An exported dataset root evaluates its test split.
  const fs::path test = fs::path(scenes_dir) / "test";
  const std::vector<Scene> scenes =
      ReadSceneDir(fs::is_directory(test) ? test.string() : scenes_dir);
  CheckSceneGeometry(scenes, sys.model);
  const auto examples = MakeExamples(scenes, sys.model.kind(), sys.model.preset());
  std::cout << Evaluate(sys.model, sys.params, examples).Table();
  return 0;
}

Waveform ReadMono(const std::string &path) {
  auto chans = ReadWav(path);
  if (chans.size() != 1) throw UsageError(path + ": expected a mono file");
  return chans[0];
}

int CmdEnhance(const std::string &checkpoint, const std::string &mic1, const std::string &mic2,
               const std::string &ref, const std::string &out) {
  LoadedSystem sys = LoadSystem(checkpoint);
  LogCheckpoint("enhance", sys.checkpoint);
  if (!UsesDcunet(sys.model.kind()))
    throw UsageError(checkpoint + ": system '" + SystemName(sys.model.kind()) +
                     "' has no enhancement network");
  const Waveform w1 = ReadMono(mic1), w2 = ReadMono(mic2), wr = ReadMono(ref);
  if (w1.size() != w2.size() || w1.size() != wr.size())
    throw UsageError("input lengths differ: mic1 " + std::to_string(w1.size()) + ", mic2 " +
                     std::to_string(w2.size()) + ", ref " + std::to_string(wr.size()) +
                     " samples");
  const StftConfig &stft = sys.model.preset().stft;
  const Spectrogram spec = Stft(std::vector<Waveform>{w1, w2, wr}, stft);
  if (spec.frames() < sys.model.dcunet().MinFrames())
    throw UsageError("input too short: " + std::to_string(spec.frames()) +
                     " frames, need at least " +
                     std::to_string(sys.model.dcunet().MinFrames()));
  Waveform y = Istft(sys.model.dcunet().Enhance(sys.params, spec));
  y.samples.resize(w1.samples.size(), 0.0);
  WriteWav(out, y);
  std::cout << "wrote " << y.size() << " samples to " << out << "\n";
  return 0;
}

int CmdGradcheck(const Options &o, double tol) {
  const RunConfig cfg = o.Resolve();
  LogConfig("gradcheck", cfg);
  std::cerr << "  tolerance = " << Str(tol) << "\n";
  bool ok = true;
  for (const LayerCheck &c : RunLayerGradchecks(tol, ModelPreset::Named(cfg.preset), cfg.seed)) {
    std::cout << FormatLayerCheck(c) << std::endl;
    ok = ok && c.report.passed();
  }
  std::cout << (ok ? "all layers pass" : "gradient check FAILED") << " at tolerance "
            << Str(tol) << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Multi-channel complex U-Net front-end toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config_path, "INI file with [run], [scenes] and [train] sections");
  o.Override(&app, "--seed", "run.seed", "Seed (default: $MCDCUNET_SEED, else 1)");
  o.Override(&app, "--preset", "run.preset", "Model preset: desk or paper");

  auto scene_flags = [&o](CLI::App *cmd) {
    o.Override(cmd, "--num-scenes", "scenes.num_scenes", "Scenes to synthesize");
    o.Override(cmd, "--duration", "scenes.duration_s", "Scene length in seconds");
    o.Override(cmd, "--test-fraction", "scenes.test_fraction", "Held-out share of scenes");
    o.Override(cmd, "--echo-fraction", "scenes.echo_fraction", "Share of echoed scenes");
  };
  auto train_flags = [&o](CLI::App *cmd) {
    o.Override(cmd, "--epochs", "train.epochs", "Training epochs");
    o.Override(cmd, "--batch-size", "train.batch_size", "Scenes per batch");
    o.Override(cmd, "--beta", "train.beta", "Enhancement weight of the multi-task loss");
    o.Override(cmd, "--t-enh", "train.t_enh", "Last epoch with the enhancement loss");
    o.Override(cmd, "--dropout", "train.dropout", "Dropout before the back-end");
    o.Override(cmd, "--lr", "train.lr", "Learning rate");
    o.Override(cmd, "--optimizer", "train.optimizer", "adam or sgd");
    o.Override(cmd, "--init-from", "train.init_from", "Checkpoint to initialize from");
  };

  std::string out, scenes_dir, metrics, system, checkpoint, mic1, mic2, ref;
  double tol = 1e-4;

  CLI::App *simulate = app.add_subcommand("simulate", "Synthesize and export scenes");
  simulate->add_option("--out", out, "Output directory")->required();
  scene_flags(simulate);

  CLI::App *pretrain = app.add_subcommand("pretrain", "Pretrain the DCUnet on L_enh");
  CLI::App *train = app.add_subcommand("train", "Train baseline, nnfb, cascade or mtl");
  train->add_option("system", system, "System to train")
      ->required()
      ->check(CLI::IsMember({"baseline", "nnfb", "cascade", "mtl"}));
  for (CLI::App *cmd : {pretrain, train}) {
    cmd->add_option("--scenes", scenes_dir, "Exported scene directory (default: synthesize)");
    cmd->add_option("--out", out, "Checkpoint path")->required();
    cmd->add_option("--metrics", metrics, "Per-epoch metrics CSV");
    scene_flags(cmd);
    train_flags(cmd);
  }

  CLI::App *evaluate = app.add_subcommand("evaluate", "Bucketed held-out report");
  evaluate->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  evaluate->add_option("--scenes", scenes_dir, "Scene directory")->required();

  CLI::App *enhance = app.add_subcommand("enhance", "Enhance a three-channel recording");
  enhance->add_option("--checkpoint", checkpoint, "Checkpoint with a DCUnet")->required();
  enhance->add_option("--mic1", mic1, "First microphone WAV")->required();
  enhance->add_option("--mic2", mic2, "Second microphone WAV")->required();
  enhance->add_option("--ref", ref, "Loudspeaker reference WAV")->required();
  enhance->add_option("--out", out, "Output WAV")->required();

  CLI::App *gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--tol", tol, "Relative tolerance")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (simulate->parsed()) return CmdSimulate(o, out);
    if (pretrain->parsed()) return CmdTrain(o, "dcunet", scenes_dir, out, metrics);
    if (train->parsed()) return CmdTrain(o, system, scenes_dir, out, metrics);
    if (evaluate->parsed()) return CmdEvaluate(checkpoint, scenes_dir);
    if (enhance->parsed()) return CmdEnhance(checkpoint, mic1, mic2, ref, out);
    if (gradcheck->parsed()) return CmdGradcheck(o, tol);
  } catch (const CheckpointMismatch &e) {
    std::cerr << "error: incompatible checkpoint\n";
    for (const auto &line : e.diff()) std::cerr << "  " << line << "\n";
    return 3;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
