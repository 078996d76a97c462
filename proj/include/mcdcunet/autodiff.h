// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Tape-based reverse-mode automatic differentiation over real tensors.
// Complex quantities are carried as stacked (real, imaginary) planes, so a
// complex operation is just a composition of real ones.

#ifndef MCDCUNET_AUTODIFF_H_
#define MCDCUNET_AUTODIFF_H_

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcdcunet/tensor.h"

namespace mcdc {

class Tape;

// Handle to a node recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape *tape, int id) : tape_(tape), id_(id) {}

  const Tensor &value() const;
  const Shape &shape() const { return value().shape(); }
  int64_t size(int axis) const { return value().size(axis); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape *tape() const { return tape_; }

 private:
  Tape *tape_ = nullptr;
  int id_ = -1;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  // Buffers (e.g. batch-norm running statistics) are stored alongside
  // parameters for serialization but never receive gradients.
  bool trainable = true;
  // Frozen parameters keep their gradients but are skipped by optimizers.
  bool frozen = false;
};

// Named parameters in name order. Addresses are stable for the store's life.
class ParameterStore {
 public:
  Parameter &Add(const std::string &name, Tensor value, bool trainable = true);
  Parameter &Get(const std::string &name);
  const Parameter &Get(const std::string &name) const;
  bool Contains(const std::string &name) const;
  std::vector<std::string> Names() const;
  size_t size() const { return params_.size(); }

  void ZeroGrad();
  // Sets the frozen flag on every parameter whose name starts with prefix.
  void SetFrozen(const std::string &prefix, bool frozen);
  int64_t NumTrainableValues() const;

  template <typename F>
  void ForEach(F &&fn) {
    for (auto &[name, p] : params_) fn(*p);
  }
  template <typename F>
  void ForEach(F &&fn) const {
    for (const auto &[name, p] : params_) fn(static_cast<const Parameter &>(*p));
  }

 private:
  std::map<std::string, std::unique_ptr<Parameter>> params_;
};

// Receives the output gradient and one slot per parent; a slot is null when
// that parent does not require a gradient.
using BackwardFn =
    std::function<void(const Tensor &grad_out, std::span<Tensor *const> grads)>;

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  Var Constant(Tensor value);
  // Differentiable leaf without a backing parameter; read its gradient with
  // Grad() after Backward().
  Var Input(Tensor value);
  Var Param(Parameter &param);
  Var Record(Tensor value, const std::vector<Var> &parents, BackwardFn backward,
             const char *op);

  // Reverse sweep from a scalar loss seeded with 1.
  void Backward(const Var &loss);
  // Reverse sweep from arbitrary seeds (vector-Jacobian products).
  void Backward(const std::vector<std::pair<Var, Tensor>> &seeds);

  const Tensor &Value(int id) const { return nodes_[id].value; }
  bool RequiresGrad(int id) const { return nodes_[id].requires_grad; }
  // Gradient of a node after Backward(); zeros when nothing flowed into it.
  Tensor Grad(const Var &v) const;
  const char *OpName(int id) const { return nodes_[id].op; }

  bool grad_enabled() const { return grad_enabled_; }
  size_t size() const { return nodes_.size(); }
  // Order in which the last Backward() visited nodes (ids, descending).
  const std::vector<int> &visit_order() const { return visit_order_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    BackwardFn backward;
    Parameter *param = nullptr;
    bool requires_grad = false;
    const char *op = "";
  };

  Node &Own(const Var &v);

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::vector<int> visit_order_;
};

using VarMap = std::map<std::string, Var>;
using TensorMap = std::map<std::string, Tensor>;

// A parameterized computation with named inputs and outputs. Each Forward()
// records a fresh tape that a subsequent Backward() sweeps.
class Graph {
 public:
  using Builder =
      std::function<VarMap(Tape &tape, ParameterStore &params, const VarMap &inputs)>;

  // Graph without nodes: outputs are the inputs.
  Graph() = default;
  Graph(std::map<std::string, Shape> input_shapes, Builder builder);

  ParameterStore &parameters() { return params_; }
  const ParameterStore &parameters() const { return params_; }

  TensorMap Forward(const TensorMap &inputs);
  // Accumulates parameter gradients; call parameters().ZeroGrad() between
  // optimization steps.
  void Backward(const TensorMap &output_gradients);
  Tensor InputGrad(const std::string &name) const;
  bool has_tape() const { return tape_ != nullptr; }
  const Tape &tape() const;

 private:
  std::map<std::string, Shape> input_shapes_;
  Builder builder_;
  ParameterStore params_;
  std::unique_ptr<Tape> tape_;
  VarMap inputs_;
  VarMap outputs_;
};

struct GradcheckOptions {
  double step = 1e-5;
  // Also check gradients with respect to graph inputs.
  bool check_inputs = true;
  // Coordinates sampled per tensor (half the largest |grad|, half random);
  // non-positive means every coordinate.
  int64_t max_coords = -1;
  uint64_t seed = 1234;
};

struct GradcheckEntry {
  std::string name;
  // max |analytic - numeric| / max |numeric| over the checked coordinates.
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  int64_t coords_checked = 0;
  bool passed = false;
};

struct GradcheckReport {
  double tolerance = 0.0;
  std::vector<GradcheckEntry> entries;
  bool passed() const;
  double max_rel_error() const;
};

class GradcheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Compares reverse-mode gradients of a random projection of the graph outputs
// against central finite differences.
GradcheckReport Gradcheck(Graph &graph, const TensorMap &inputs,
                          double tolerance, const GradcheckOptions &opts = {});

}  // namespace mcdc

#endif  // MCDCUNET_AUTODIFF_H_
