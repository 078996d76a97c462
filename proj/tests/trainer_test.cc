// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "mcdcunet/trainer.h"

#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mcdcunet/ops.h"

namespace mcdc {
namespace {

std::string TempPath(const std::string &name) {
  return (std::filesystem::temp_directory_path() /
          ("mcdc_trainer_" + std::to_string(::getpid()) + "_" + name))
      .string();
}

std::string ReadBytes(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Short scenes keep each epoch to a fraction of a second.
std::vector<Example> SmallSet(SystemKind kind, int count, int first = 0,
                              double duration = 0.25) {
  SceneConfig cfg;
  cfg.duration_s = duration;
  std::vector<int> idx;
  for (int i = first; i < first + count; ++i) idx.push_back(i);
  return MakeExamples(BuildScenes(cfg, idx), kind, ModelPreset::Desk());
}

std::vector<const Example *> Pointers(const std::vector<Example> &v) {
  std::vector<const Example *> out;
  for (const auto &e : v) out.push_back(&e);
  return out;
}

bool StartsWithAny(const std::string &name, const std::vector<std::string> &prefixes) {
  for (const auto &p : prefixes)
    if (name.rfind(p, 0) == 0) return true;
  return false;
}

TEST(MtlLoss, ScheduleArithmetic) {
  TrainSchedule s;
  s.beta = 0.8;
  s.t_enh = 3;
  EXPECT_NEAR(MtlLoss(1.0, 2.0, 1, s), 1.8, 1e-15);
  EXPECT_NEAR(MtlLoss(1.0, 2.0, 3, s), 1.8, 1e-15);
  EXPECT_EQ(MtlLoss(1.0, 2.0, 4, s), 1.0);
  EXPECT_EQ(MtlLoss(0.37, 1e9, 4, s), 0.37);
  s.beta = 0.0;
  EXPECT_EQ(MtlLoss(0.37, 2.0, 1, s), 0.37);
  s.t_enh = 0;
  s.beta = 0.5;
  EXPECT_EQ(MtlLoss(0.37, 2.0, 1, s), 0.37);

  Tape tape;
  s.t_enh = 3;
  s.beta = 0.2;
  Var a = tape.Constant(Tensor::Scalar(1.5)), b = tape.Constant(Tensor::Scalar(0.5));
  EXPECT_NEAR(MtlLoss(a, b, 2, s).value().item(), 0.8 * 1.5 + 0.2 * 0.5, 1e-15);
  EXPECT_EQ(MtlLoss(a, b, 4, s).id(), a.id());
}

TEST(TrainSchedule, Validation) {
  TrainSchedule s;
  EXPECT_NO_THROW(s.Validate());
  EXPECT_DOUBLE_EQ(s.optimizer.lr, 1e-3);
  EXPECT_DOUBLE_EQ(s.optimizer.beta1, 0.9);
  EXPECT_DOUBLE_EQ(s.optimizer.beta2, 0.999);
  EXPECT_EQ(s.batch_size, 4);
  for (double beta : {-0.1, 1.1}) {
    TrainSchedule b = s;
    b.beta = beta;
    EXPECT_THROW(b.Validate(), std::invalid_argument);
  }
  TrainSchedule t = s;
  t.t_enh = -1;
  EXPECT_THROW(t.Validate(), std::invalid_argument);
  t = s;
  t.optimizer.kind = "rmsprop";
  EXPECT_THROW(t.Validate(), std::invalid_argument);
  EXPECT_EQ(ParseSystem("mtl"), SystemKind::kMtl);
  EXPECT_THROW(ParseSystem("lstm"), std::invalid_argument);
}

TEST(Examples, InputLayoutPerSystem) {
  SceneConfig cfg;
  Scene sc = SynthesizeScene(cfg, 0);
  const ModelPreset p = ModelPreset::Desk();
  EXPECT_EQ(MakeExample(sc, SystemKind::kBaseline, p).input.shape(), (Shape{1, 80, 98}));
  EXPECT_EQ(MakeExample(sc, SystemKind::kNnfb, p).input.shape(), (Shape{4, 257, 98}));
  const Example ex = MakeExample(sc, SystemKind::kMtl, p);
  EXPECT_EQ(ex.input.shape(), (Shape{6, 257, 98}));
  EXPECT_EQ(ex.supervision.shape(), (Shape{257, 98}));
  EXPECT_EQ(ex.labels.size(), 98u);
  sc.frame_labels.pop_back();
  EXPECT_THROW(MakeExample(sc, SystemKind::kMtl, p), ShapeError);
}

class MtlGradients : public ::testing::Test {
 protected:
  void SetUp() override {
    examples_ = SmallSet(SystemKind::kMtl, 2);
    sched_.dropout = 0.0;
    model_ = std::make_unique<SystemModel>(SystemKind::kMtl, ModelPreset::Desk(), 0.0);
    std::mt19937_64 rng(3);
    model_->InitParameters(ps_, rng);
  }

  // Gradients of every parameter after back-propagating `which` of the
  // losses at epoch t: 0 total, 1 L_asr alone, 2 L_enh alone.
  std::map<std::string, Tensor> Grads(int t, int which) {
    Tape tape;
    ps_.ZeroGrad();
    std::mt19937_64 rng(0);
    StepLosses l = ComputeLosses(tape, ps_, *model_, Pointers(examples_), t, sched_, true, rng);
    tape.Backward(which == 0 ? l.total : which == 1 ? l.l_asr : l.l_enh);
    std::map<std::string, Tensor> g;
    ps_.ForEach([&](const Parameter &p) {
      if (p.trainable) g[p.name] = p.grad;
    });
    return g;
  }

  std::vector<Example> examples_;
  TrainSchedule sched_;
  std::unique_ptr<SystemModel> model_;
  ParameterStore ps_;
};

TEST_F(MtlGradients, DecoderGradientsVanishAfterCutover) {
  sched_.t_enh = 3;
  auto g = Grads(4, 0);
  double enc = 0.0;
  for (const auto &[name, grad] : g) {
    if (StartsWithAny(name, SystemModel::DecoderPrefixes()))
      ASSERT_EQ(grad.MaxAbs(), 0.0) << name;
    if (StartsWithAny(name, SystemModel::EncoderPrefixes())) enc += grad.MaxAbs();
  }
  EXPECT_GT(enc, 0.0);
  // Before the cutover the decoder does receive gradient.
  g = Grads(3, 0);
  EXPECT_GT(g.at("dec4.wr").MaxAbs(), 0.0);
}

TEST_F(MtlGradients, EncoderGradientIsBetaWeighted) {
  for (double beta : {0.2, 0.8}) {
    sched_.beta = beta;
    const auto total = Grads(1, 0), asr = Grads(1, 1), enh = Grads(1, 2);
    double worst = 0.0, scale = 0.0;
    for (const auto &[name, g] : total) {
      if (!StartsWithAny(name, SystemModel::EncoderPrefixes())) continue;
      for (int64_t i = 0; i < g.numel(); ++i) {
        const double expect = (1.0 - beta) * asr.at(name)[i] + beta * enh.at(name)[i];
        worst = std::max(worst, std::abs(g[i] - expect));
        scale = std::max(scale, std::abs(expect));
      }
    }
    EXPECT_GT(scale, 0.0);
    EXPECT_LE(worst, 1e-10) << "beta " << beta;
  }
}

TEST_F(MtlGradients, BetaOneSilencesRecognitionBranch) {
  sched_.beta = 1.0;
  const auto g = Grads(1, 0);
  for (const auto &[name, grad] : g)
    if (StartsWithAny(name, model_->RecognitionPrefixes()))
      ASSERT_EQ(grad.MaxAbs(), 0.0) << name;
  EXPECT_GT(g.at("enc1.wr").MaxAbs(), 0.0);
}

TEST(Optimizer, AdamFirstStepAndFrozenParameters) {
  ParameterStore ps;
  Parameter &a = ps.Add("a", Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}));
  Parameter &b = ps.Add("b", Tensor({2}, 1.0));
  Parameter &buf = ps.Add("buf", Tensor({1}, 4.0), false);
  a.grad = Tensor({3}, std::vector<double>{0.3, -0.01, 0.0});
  b.grad = Tensor({2}, 5.0);
  buf.grad = Tensor({1}, 1.0);
  b.frozen = true;
  Optimizer opt({});
  opt.Step(ps);
  // After one step m_hat = g and v_hat = g^2, so the move is lr * g / (|g| + eps).
  EXPECT_NEAR(a.value[0], 1.0 - 1e-3 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(a.value[1], -2.0 + 1e-3 * 0.01 / (0.01 + 1e-8), 1e-15);
  EXPECT_EQ(a.value[2], 0.5);
  EXPECT_EQ(b.value[0], 1.0);
  EXPECT_EQ(buf.value[0], 4.0);
  EXPECT_EQ(opt.state().step, 1);
  EXPECT_EQ(opt.state().m.count("b"), 0u);

  // Second step against a scalar recurrence.
  a.grad = Tensor({3}, std::vector<double>{-0.2, 0.0, 0.0});
  const double before = a.value[0];
  opt.Step(ps);
  const double m = 0.9 * 0.1 * 0.3 + 0.1 * -0.2;
  const double v = 0.999 * 0.001 * 0.09 + 0.001 * 0.04;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  EXPECT_NEAR(a.value[0], before - 1e-3 * mh / (std::sqrt(vh) + 1e-8), 1e-15);
}

Checkpoint SampleCheckpoint() {
  ParameterStore ps;
  std::mt19937_64 rng(9);
  ps.Add("enc1.wr", Tensor::Randn({2, 3, 2, 2}, rng));
  ps.Add("enc1.bn.mean", Tensor::Randn({2}, rng), false);
  ps.Add("am.out.b", Tensor::Randn({8}, rng)).frozen = true;
  AdamState st;
  st.step = 7;
  st.m["enc1.wr"] = Tensor::Randn({2, 3, 2, 2}, rng);
  st.v["enc1.wr"] = Tensor::Uniform({2, 3, 2, 2}, rng, 0.0, 1.0);
  return CaptureCheckpoint(ps, st, {{"system", "mtl"}, {"epoch", "3"}});
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const Checkpoint ck = SampleCheckpoint();
  const std::string bytes = SerializeCheckpoint(ck);
  EXPECT_EQ(bytes.substr(0, 8), std::string("MCDCKPT\0", 8));
  const Checkpoint back = ParseCheckpoint(bytes);
  EXPECT_EQ(SerializeCheckpoint(back), bytes);
  EXPECT_EQ(back.optimizer.step, 7);
  EXPECT_TRUE(back.parameters.at("am.out.b").frozen);
  EXPECT_FALSE(back.parameters.at("enc1.bn.mean").trainable);
  EXPECT_EQ(back.Meta("epoch"), "3");
  EXPECT_THROW(back.Meta("nope"), CheckpointError);

  const std::string path = TempPath("rt.ckpt");
  SaveCheckpoint(path, ck);
  EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));
  EXPECT_EQ(ReadBytes(path), bytes);
  SaveCheckpoint(path, LoadCheckpoint(path));
  EXPECT_EQ(ReadBytes(path), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const std::string bytes = SerializeCheckpoint(SampleCheckpoint());
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  EXPECT_THROW(ParseCheckpoint(flipped), CheckpointError);
  EXPECT_THROW(ParseCheckpoint(bytes.substr(0, bytes.size() - 1)), CheckpointError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(ParseCheckpoint(magic), CheckpointError);
  EXPECT_THROW(LoadCheckpoint(TempPath("missing.ckpt")), CheckpointError);
}

TEST(Checkpoint, MismatchListsParameters) {
  const Checkpoint ck = SampleCheckpoint();
  ParameterStore ps;
  ps.Add("enc1.wr", Tensor({2, 3, 2, 3}));
  ps.Add("enc1.bn.mean", Tensor({2}), false);
  ps.Add("enc2.wr", Tensor({1}));
  try {
    RestoreParameters(ps, ck);
    FAIL();
  } catch (const CheckpointMismatch &e) {
    const std::string all = e.what();
    EXPECT_NE(all.find("shape mismatch: enc1.wr"), std::string::npos) << all;
    EXPECT_NE(all.find("missing from checkpoint: enc2.wr"), std::string::npos) << all;
    EXPECT_NE(all.find("unexpected in checkpoint: am.out.b"), std::string::npos) << all;
    EXPECT_EQ(e.diff().size(), 3u);
  }
  // Restricting to the bn buffer succeeds and copies the value.
  RestoreParameters(ps, ck, {"enc1.bn"});
  EXPECT_EQ(ps.Get("enc1.bn.mean").value.storage(),
            ck.parameters.at("enc1.bn.mean").value.storage());
}

TEST(Train, SameSeedGivesIdenticalCheckpoints) {
  const auto train = SmallSet(SystemKind::kMtl, 5), test = SmallSet(SystemKind::kMtl, 2, 50);
  TrainSchedule s;
  s.epochs = 2;
  s.t_enh = 1;
  const std::string a = TempPath("a.ckpt"), b = TempPath("b.ckpt");
  TrainOptions oa, ob;
  oa.checkpoint_path = a;
  ob.checkpoint_path = b;
  Train(SystemKind::kMtl, ModelPreset::Desk(), s, train, test, oa);
  Train(SystemKind::kMtl, ModelPreset::Desk(), s, train, test, ob);
  const std::string bytes = ReadBytes(a);
  EXPECT_FALSE(bytes.empty());
  EXPECT_EQ(bytes, ReadBytes(b));
  // The decoder is frozen after the cutover but kept.
  const Checkpoint ck = LoadCheckpoint(a);
  EXPECT_TRUE(ck.parameters.at("dec1.wr").frozen);
  EXPECT_FALSE(ck.parameters.at("enc1.wr").frozen);
  EXPECT_EQ(ck.Meta("epoch"), "2");
  s.seed = 2;
  Train(SystemKind::kMtl, ModelPreset::Desk(), s, train, test, ob);
  EXPECT_NE(ReadBytes(b), bytes);
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST(Train, PretrainThenInitializeCascade) {
  const auto train = SmallSet(SystemKind::kDcunet, 8), test = SmallSet(SystemKind::kDcunet, 3, 60);
  TrainSchedule s;
  s.epochs = 5;
  const std::string ckpt = TempPath("pre.ckpt"), metrics = TempPath("pre.csv");
  TrainOptions o;
  o.checkpoint_path = ckpt;
  o.metrics_path = metrics;
  const TrainResult pre = PretrainDcunet(ModelPreset::Desk(), s, train, test, o);

  ASSERT_EQ(pre.history.size(), 6u);
  for (int e = 2; e <= 5; ++e)
    EXPECT_LE(pre.history[e].train_loss, pre.history[e - 1].train_loss + 1e-6) << "epoch " << e;
  EXPECT_LT(pre.history[5].l_enh, pre.history[0].l_enh);

  // Exactly the enhancement network's layers.
  const Checkpoint ck = LoadCheckpoint(ckpt);
  std::set<std::string> layers;
  for (const auto &[name, rec] : ck.parameters) layers.insert(name.substr(0, name.find('.')));
  EXPECT_EQ(layers, (std::set<std::string>{"dec1", "dec2", "dec3", "dec4", "enc1", "enc2",
                                           "enc3", "enc4"}));

  // Reloading reproduces the final held-out loss.
  LoadedSystem loaded = LoadSystem(ckpt);
  EXPECT_NEAR(Evaluate(loaded.model, loaded.params, test).l_enh(), pre.history.back().l_enh,
              1e-10);

  const auto ctrain = SmallSet(SystemKind::kCascade, 8), ctest = SmallSet(SystemKind::kCascade, 3, 60);
  TrainSchedule cs;
  cs.epochs = 0;
  cs.init_from = ckpt;
  const TrainResult cas = Train(SystemKind::kCascade, ModelPreset::Desk(), cs, ctrain, ctest);
  EXPECT_NEAR(cas.history[0].l_enh, pre.history.back().l_enh, 1e-10);

  // Metrics log: header plus one line per epoch.
  std::ifstream in(metrics);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,system,L_asr,L_enh,frame_acc");
  int rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(line.rfind(std::to_string(rows) + ",dcunet,-,", 0), 0u) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 6);
  std::filesystem::remove(ckpt);
  std::filesystem::remove(metrics);
}

TEST(Train, IncompatibleInitCheckpointIsRejected) {
  const auto train = SmallSet(SystemKind::kBaseline, 4);
  TrainSchedule s;
  s.epochs = 0;
  const std::string ckpt = TempPath("base.ckpt");
  TrainOptions o;
  o.checkpoint_path = ckpt;
  Train(SystemKind::kBaseline, ModelPreset::Desk(), s, train, {}, o);
  s.init_from = ckpt;
  const auto mtl = SmallSet(SystemKind::kMtl, 2);
  try {
    Train(SystemKind::kMtl, ModelPreset::Desk(), s, mtl, {});
    FAIL();
  } catch (const CheckpointMismatch &e) {
    EXPECT_NE(std::string(e.what()).find("missing from checkpoint: enc1.wr"), std::string::npos);
  }
  std::filesystem::remove(ckpt);
}

TEST(Train, NonFiniteLossKeepsLastGoodCheckpoint) {
  const auto train = SmallSet(SystemKind::kBaseline, 6);
  TrainSchedule s;
  s.epochs = 3;
  const std::string ckpt = TempPath("nan.ckpt");
  TrainOptions o;
  o.checkpoint_path = ckpt;
  o.on_batch = [](int epoch, int batch, Var &total) {
    if (epoch == 2 && batch == 1) total = ops::Scale(total, std::nan(""));
  };
  EXPECT_THROW(Train(SystemKind::kBaseline, ModelPreset::Desk(), s, train, {}, o),
               NonFiniteLossError);
  const Checkpoint ck = LoadCheckpoint(ckpt);
  EXPECT_EQ(ck.Meta("epoch"), "1");
  EXPECT_FALSE(std::filesystem::exists(ckpt + ".tmp"));
  std::filesystem::remove(ckpt);
}

TEST(Evaluate, UntrainedModelIsAtChance) {
  // A random network maps each class pattern to some fixed output, so one
  // initialization can sit far from 1/8; chance holds on average over inits.
  const auto examples = SmallSet(SystemKind::kBaseline, 30);
  const SystemModel model(SystemKind::kBaseline, ModelPreset::Desk(), 0.2);
  const int inits = 64;
  double mean = 0.0;
  for (int seed = 0; seed < inits; ++seed) {
    ParameterStore ps;
    std::mt19937_64 rng(1000 + seed);
    model.InitParameters(ps, rng);
    const EvalReport r = Evaluate(model, ps, examples);
    mean += *r.total.accuracy() / inits;
    if (seed == 0) {
      int64_t scenes = 0, frames = 0;
      for (const auto &b : r.buckets) {
        scenes += b.scenes;
        frames += b.frames;
      }
      EXPECT_EQ(scenes, 30);
      EXPECT_EQ(scenes, r.total.scenes);
      EXPECT_EQ(frames, r.total.frames);
    }
  }
  EXPECT_NEAR(mean, 0.125, 0.02);
}

TEST(Evaluate, ReportLayoutAndAbsentBuckets) {
  // Two echo-free high-SNR scenes leave the other buckets empty.
  SceneConfig cfg;
  cfg.duration_s = 0.25;
  std::vector<Example> ex;
  for (int i = 0; i < 2; ++i) {
    SceneOverrides ov;
    ov.has_echo = false;
    ov.snr_db = 20.0;
    Scene sc = SynthesizeScene(cfg, i, ov);
    sc.bucket = Bucket::kHighSnr;
    ex.push_back(MakeExample(sc, SystemKind::kMtl, ModelPreset::Desk()));
  }
  const SystemModel model(SystemKind::kMtl, ModelPreset::Desk(), 0.2);
  ParameterStore ps;
  std::mt19937_64 rng(12);
  model.InitParameters(ps, rng);
  const EvalReport r = Evaluate(model, ps, ex);
  EXPECT_FALSE(r.buckets[0].accuracy().has_value());
  EXPECT_TRUE(r.buckets[3].accuracy().has_value());
  EXPECT_TRUE(r.total.enhancement_mse().has_value());
  const std::string table = r.Table();
  std::istringstream lines(table);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "system: mtl");
  std::getline(lines, line);
  size_t pos = 0;
  for (const char *col : {"Echoed", "<5 dB", "[5,15) dB", ">=15 dB", "Total"}) {
    const size_t at = line.find(col, pos);
    ASSERT_NE(at, std::string::npos) << col;
    pos = at;
  }
  EXPECT_NE(table.find("absent"), std::string::npos);
  EXPECT_NE(table.find("frame_acc"), std::string::npos);
  EXPECT_NE(table.find("enh_mse"), std::string::npos);
  EXPECT_EQ(Evaluate(model, ps, ex).Table(), table);
}

}  // namespace
}  // namespace mcdc
