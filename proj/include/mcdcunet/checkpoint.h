// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Versioned binary checkpoints. Layout, all integers little-endian:
//
//   "MCDCKPT\0"  u32 version
//   u32 n_meta   { str key, str value } * n_meta
//   u64 n_param  { str name, u8 flags, u32 ndim, i64 dims[ndim], f64 data } *
//   u64 step  u64 n_moment  { str name, f64 m[numel], f64 v[numel] } *
//   u8 sha256[32] over everything above
//
// where str is a u32 length followed by the bytes and flags bit 0 marks a
// trainable parameter, bit 1 a frozen one.

#ifndef MCDCUNET_CHECKPOINT_H_
#define MCDCUNET_CHECKPOINT_H_

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcdcunet/autodiff.h"

namespace mcdc {

// First and second moments of Adam, keyed by parameter name.
struct AdamState {
  int64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

struct CheckpointRecord {
  Tensor value;
  bool trainable = true;
  bool frozen = false;
};

struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::map<std::string, std::string> metadata;
  std::map<std::string, CheckpointRecord> parameters;
  AdamState optimizer;

  std::string Meta(const std::string &key) const;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Architecture mismatch; what() and diff list each offending parameter.
class CheckpointMismatch : public CheckpointError {
 public:
  explicit CheckpointMismatch(std::vector<std::string> diff);
  const std::vector<std::string> &diff() const { return diff_; }

 private:
  std::vector<std::string> diff_;
};

std::string SerializeCheckpoint(const Checkpoint &ckpt);
// Throws CheckpointError on bad magic, version, truncation or digest.
Checkpoint ParseCheckpoint(const std::string &bytes);

// Writes path.tmp and renames it over path, so readers never see a partial
// file.
void SaveCheckpoint(const std::string &path, const Checkpoint &ckpt);
Checkpoint LoadCheckpoint(const std::string &path);

Checkpoint CaptureCheckpoint(const ParameterStore &ps, const AdamState &opt,
                             std::map<std::string, std::string> metadata);

// Differences between the parameters of ps and ckpt restricted to names
// starting with one of prefixes (empty list: every name).
std::vector<std::string> ParameterDiff(const ParameterStore &ps,
                                       const Checkpoint &ckpt,
                                       const std::vector<std::string> &prefixes = {});

// Copies the selected parameter values into ps. Throws
// CheckpointMismatch unless names and shapes agree exactly on the selection.
void RestoreParameters(ParameterStore &ps, const Checkpoint &ckpt,
                       const std::vector<std::string> &prefixes = {});

std::string Sha256Hex(const std::string &bytes);

}  // namespace mcdc

#endif  // MCDCUNET_CHECKPOINT_H_
