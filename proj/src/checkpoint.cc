// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "mcdcunet/checkpoint.h"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

namespace mcdc {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'M', 'C', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr size_t kDigestBytes = 32;

std::array<unsigned char, kDigestBytes> Sha256(const char *data, size_t n) {
  std::array<unsigned char, kDigestBytes> out{};
  unsigned int len = 0;
  if (EVP_Digest(data, n, out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != kDigestBytes)
    throw CheckpointError("SHA-256 computation failed");
  return out;
}

class Writer {
 public:
  template <typename T>
  void Pod(T v) {
    const char *p = reinterpret_cast<const char *>(&v);
    buf_.append(p, sizeof(T));
  }
  void Str(const std::string &s) {
    Pod(static_cast<uint32_t>(s.size()));
    buf_.append(s);
  }
  void Doubles(const Tensor &t) {
    buf_.append(reinterpret_cast<const char *>(t.data()), t.numel() * sizeof(double));
  }
  void Raw(const char *p, size_t n) { buf_.append(p, n); }
  std::string &buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const char *p, size_t n) : p_(p), end_(p + n) {}

  template <typename T>
  T Pod() {
    Need(sizeof(T));
    T v;
    std::memcpy(&v, p_, sizeof(T));
    p_ += sizeof(T);
    return v;
  }
  std::string Str() {
    const uint32_t n = Pod<uint32_t>();
    Need(n);
    std::string s(p_, n);
    p_ += n;
    return s;
  }
  Tensor Doubles(const Shape &shape) {
    Tensor t(shape);
    const size_t bytes = static_cast<size_t>(t.numel()) * sizeof(double);
    Need(bytes);
    std::memcpy(t.data(), p_, bytes);
    p_ += bytes;
    return t;
  }
  const char *Bytes(size_t n) {
    Need(n);
    const char *p = p_;
    p_ += n;
    return p;
  }
  bool done() const { return p_ == end_; }

 private:
  void Need(size_t n) const {
    if (static_cast<size_t>(end_ - p_) < n) throw CheckpointError("checkpoint truncated");
  }
  const char *p_;
  const char *end_;
};

bool Selected(const std::string &name, const std::vector<std::string> &prefixes) {
  if (prefixes.empty()) return true;
  for (const auto &p : prefixes)
    if (name.rfind(p, 0) == 0) return true;
  return false;
}

std::string JoinDiff(const std::vector<std::string> &diff) {
  std::string msg = "checkpoint does not match the model:";
  for (const auto &d : diff) msg += "\n  " + d;
  return msg;
}

}  // namespace

std::string Checkpoint::Meta(const std::string &key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw CheckpointError("checkpoint lacks metadata key '" + key + "'");
  return it->second;
}

CheckpointMismatch::CheckpointMismatch(std::vector<std::string> diff)
    : CheckpointError(JoinDiff(diff)), diff_(std::move(diff)) {}

std::string SerializeCheckpoint(const Checkpoint &ckpt) {
  Writer w;
  w.Raw(kMagic, sizeof(kMagic));
  w.Pod(Checkpoint::kVersion);
  w.Pod(static_cast<uint32_t>(ckpt.metadata.size()));
  for (const auto &[k, v] : ckpt.metadata) {
    w.Str(k);
    w.Str(v);
  }
  w.Pod(static_cast<uint64_t>(ckpt.parameters.size()));
  for (const auto &[name, rec] : ckpt.parameters) {
    w.Str(name);
    w.Pod(static_cast<uint8_t>((rec.trainable ? 1 : 0) | (rec.frozen ? 2 : 0)));
    w.Pod(static_cast<uint32_t>(rec.value.dim()));
    for (int64_t d : rec.value.shape()) w.Pod(d);
    w.Doubles(rec.value);
  }
  const AdamState &opt = ckpt.optimizer;
  w.Pod(static_cast<uint64_t>(opt.step));
  w.Pod(static_cast<uint64_t>(opt.m.size()));
  for (const auto &[name, m] : opt.m) {
    auto v = opt.v.find(name);
    if (v == opt.v.end() || v->second.shape() != m.shape())
      throw CheckpointError("optimizer moments for '" + name + "' are inconsistent");
    w.Str(name);
    w.Doubles(m);
    w.Doubles(v->second);
  }
  const auto digest = Sha256(w.buffer().data(), w.buffer().size());
  w.Raw(reinterpret_cast<const char *>(digest.data()), digest.size());
  return std::move(w.buffer());
}

Checkpoint ParseCheckpoint(const std::string &bytes) {
  if (bytes.size() < sizeof(kMagic) + kDigestBytes ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint file (bad magic)");
  const size_t payload = bytes.size() - kDigestBytes;
  const auto digest = Sha256(bytes.data(), payload);
  if (std::memcmp(digest.data(), bytes.data() + payload, kDigestBytes) != 0)
    throw CheckpointError("checkpoint digest mismatch (corrupted file)");

  Reader r(bytes.data(), payload);
  r.Bytes(sizeof(kMagic));
  const auto version = r.Pod<uint32_t>();
  if (version != Checkpoint::kVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const auto n_meta = r.Pod<uint32_t>();
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.Str();
    ckpt.metadata[k] = r.Str();
  }
  const auto n_param = r.Pod<uint64_t>();
  std::map<std::string, Shape> shapes;
  for (uint64_t i = 0; i < n_param; ++i) {
    std::string name = r.Str();
    const auto flags = r.Pod<uint8_t>();
    const auto ndim = r.Pod<uint32_t>();
    if (ndim > 8) throw CheckpointError("implausible rank for '" + name + "'");
    Shape shape(ndim);
    for (auto &d : shape) {
      d = r.Pod<int64_t>();
      if (d < 0) throw CheckpointError("negative extent for '" + name + "'");
    }
    CheckpointRecord rec;
    rec.value = r.Doubles(shape);
    rec.trainable = flags & 1;
    rec.frozen = flags & 2;
    shapes[name] = shape;
    ckpt.parameters[name] = std::move(rec);
  }
  ckpt.optimizer.step = static_cast<int64_t>(r.Pod<uint64_t>());
  const auto n_moment = r.Pod<uint64_t>();
  for (uint64_t i = 0; i < n_moment; ++i) {
    std::string name = r.Str();
    auto it = shapes.find(name);
    if (it == shapes.end())
      throw CheckpointError("optimizer state for unknown parameter '" + name + "'");
    ckpt.optimizer.m[name] = r.Doubles(it->second);
    ckpt.optimizer.v[name] = r.Doubles(it->second);
  }
  if (!r.done()) throw CheckpointError("trailing bytes before checkpoint digest");
  return ckpt;
}

void SaveCheckpoint(const std::string &path, const Checkpoint &ckpt) {
  const std::string bytes = SerializeCheckpoint(ckpt);
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw CheckpointError("cannot write " + tmp);
    }
  }
  std::filesystem::rename(tmp, target);
}

Checkpoint LoadCheckpoint(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  return ParseCheckpoint(bytes);
}

Checkpoint CaptureCheckpoint(const ParameterStore &ps, const AdamState &opt,
                             std::map<std::string, std::string> metadata) {
  Checkpoint ckpt;
  ckpt.metadata = std::move(metadata);
  ps.ForEach([&](const Parameter &p) {
    ckpt.parameters[p.name] = CheckpointRecord{p.value, p.trainable, p.frozen};
  });
  ckpt.optimizer = opt;
  return ckpt;
}

std::vector<std::string> ParameterDiff(const ParameterStore &ps, const Checkpoint &ckpt,
                                       const std::vector<std::string> &prefixes) {
  std::vector<std::string> diff;
  for (const auto &name : ps.Names()) {
    if (!Selected(name, prefixes)) continue;
    auto it = ckpt.parameters.find(name);
    if (it == ckpt.parameters.end()) {
      diff.push_back("missing from checkpoint: " + name);
    } else if (it->second.value.shape() != ps.Get(name).value.shape()) {
      diff.push_back("shape mismatch: " + name + " model " +
                     ShapeString(ps.Get(name).value.shape()) + " checkpoint " +
                     ShapeString(it->second.value.shape()));
    }
  }
  for (const auto &[name, rec] : ckpt.parameters)
    if (Selected(name, prefixes) && !ps.Contains(name))
      diff.push_back("unexpected in checkpoint: " + name);
  return diff;
}

void RestoreParameters(ParameterStore &ps, const Checkpoint &ckpt,
                       const std::vector<std::string> &prefixes) {
  auto diff = ParameterDiff(ps, ckpt, prefixes);
  bool any = false;
  for (const auto &name : ps.Names()) any = any || Selected(name, prefixes);
  if (!any) diff.push_back("model has no parameters to restore");
  if (!diff.empty()) throw CheckpointMismatch(std::move(diff));
  for (const auto &name : ps.Names()) {
    if (!Selected(name, prefixes)) continue;
    Parameter &p = ps.Get(name);
    const CheckpointRecord &rec = ckpt.parameters.at(name);
    p.value = rec.value;
  }
}

std::string Sha256Hex(const std::string &bytes) {
  const auto d = Sha256(bytes.data(), bytes.size());
  static const char *hex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : d) {
    out.push_back(hex[c >> 4]);
    out.push_back(hex[c & 15]);
  }
  return out;
}

}  // namespace mcdc
