// Copyright 2026 The mcdcunet Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "mcdcunet/autodiff.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mcdc {

const Tensor &Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return tape_->Value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->RequiresGrad(id_); }

// ---------------------------------------------------------------------------
// ParameterStore

Parameter &ParameterStore::Add(const std::string &name, Tensor value,
                               bool trainable) {
  if (params_.count(name))
    throw std::invalid_argument("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor::Zeros(value.shape());
  p->value = std::move(value);
  p->trainable = trainable;
  Parameter &ref = *p;
  params_.emplace(name, std::move(p));
  return ref;
}

Parameter &ParameterStore::Get(const std::string &name) {
  auto it = params_.find(name);
  if (it == params_.end())
    throw std::out_of_range("unknown parameter: " + name);
  return *it->second;
}

const Parameter &ParameterStore::Get(const std::string &name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw std::out_of_range("unknown parameter: " + name);
  return *it->second;
}

bool ParameterStore::Contains(const std::string &name) const {
  return params_.count(name) > 0;
}

std::vector<std::string> ParameterStore::Names() const {
  std::vector<std::string> names;
  names.reserve(params_.size());
  for (const auto &kv : params_) names.push_back(kv.first);
  return names;
}

void ParameterStore::ZeroGrad() {
  for (auto &kv : params_) kv.second->grad.Fill(0.0);
}

void ParameterStore::SetFrozen(const std::string &prefix, bool frozen) {
  for (auto &[name, p] : params_)
    if (name.compare(0, prefix.size(), prefix) == 0) p->frozen = frozen;
}

int64_t ParameterStore::NumTrainableValues() const {
  int64_t n = 0;
  for (const auto &kv : params_)
    if (kv.second->trainable) n += kv.second->value.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Node &Tape::Own(const Var &v) {
  if (v.tape() != this)
    throw std::logic_error("Var belongs to a different tape");
  return nodes_[v.id()];
}

Var Tape::Constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::Input(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  n.op = "input";
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::Param(Parameter &param) {
  Node n;
  n.value = param.value;
  n.param = &param;
  n.requires_grad = grad_enabled_ && param.trainable;
  n.op = "parameter";
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::Record(Tensor value, const std::vector<Var> &parents,
                 BackwardFn backward, const char *op) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  bool needs = false;
  for (const Var &p : parents) {
    Own(p);
    n.parents.push_back(p.id());
    needs = needs || nodes_[p.id()].requires_grad;
  }
  if (grad_enabled_ && needs) {
    n.requires_grad = true;
    n.backward = std::move(backward);
  } else {
    n.parents.clear();
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::Backward(const Var &loss) {
  if (Own(loss).value.numel() != 1)
    throw ShapeError("Backward(loss) requires a scalar, got shape " +
                     ShapeString(loss.shape()));
  Backward({{loss, Tensor::Ones(loss.shape())}});
}

void Tape::Backward(const std::vector<std::pair<Var, Tensor>> &seeds) {
  if (!grad_enabled_)
    throw std::logic_error("Backward on a tape recorded without gradients");
  for (auto &n : nodes_) n.grad = Tensor();
  int top = -1;
  for (const auto &[v, g] : seeds) {
    Node &n = Own(v);
    CheckSameShape(n.value.shape(), g.shape(), "backward seed");
    if (!n.requires_grad) continue;
    if (n.grad.empty())
      n.grad = g;
    else
      n.grad.AddInPlace(g);
    top = std::max(top, v.id());
  }
  visit_order_.clear();
  std::vector<Tensor *> slots;
  for (int id = top; id >= 0; --id) {
    Node &n = nodes_[id];
    if (n.grad.empty()) continue;
    visit_order_.push_back(id);
    if (n.param) {
      n.param->grad.AddInPlace(n.grad);
      continue;
    }
    if (!n.backward) continue;
    slots.assign(n.parents.size(), nullptr);
    for (size_t i = 0; i < n.parents.size(); ++i) {
      Node &p = nodes_[n.parents[i]];
      if (!p.requires_grad) continue;
      if (p.grad.empty()) p.grad = Tensor::Zeros(p.value.shape());
      slots[i] = &p.grad;
    }
    n.backward(n.grad, slots);
    // Intermediate gradients are no longer needed once propagated.
    if (n.op != std::string("input")) n.grad = Tensor();
  }
}

Tensor Tape::Grad(const Var &v) const {
  const Node &n = nodes_.at(v.id());
  if (n.grad.empty()) return Tensor::Zeros(n.value.shape());
  return n.grad;
}

// ---------------------------------------------------------------------------
// Graph

Graph::Graph(std::map<std::string, Shape> input_shapes, Builder builder)
    : input_shapes_(std::move(input_shapes)), builder_(std::move(builder)) {}

TensorMap Graph::Forward(const TensorMap &inputs) {
  for (const auto &[name, shape] : input_shapes_) {
    auto it = inputs.find(name);
    if (it == inputs.end())
      throw std::invalid_argument("graph input '" + name + "' missing");
    CheckSameShape(shape, it->second.shape(), "graph input '" + name + "'");
  }
  tape_ = std::make_unique<Tape>();
  inputs_.clear();
  for (const auto &[name, t] : inputs) inputs_[name] = tape_->Input(t);
  outputs_ = builder_ ? builder_(*tape_, params_, inputs_) : inputs_;
  TensorMap out;
  for (const auto &[name, v] : outputs_) out[name] = v.value();
  return out;
}

void Graph::Backward(const TensorMap &output_gradients) {
  if (!tape_) throw std::logic_error("Graph::Backward called before Forward");
  std::vector<std::pair<Var, Tensor>> seeds;
  for (const auto &[name, g] : output_gradients) {
    auto it = outputs_.find(name);
    if (it == outputs_.end())
      throw std::invalid_argument("no graph output named '" + name + "'");
    seeds.emplace_back(it->second, g);
  }
  tape_->Backward(seeds);
}

Tensor Graph::InputGrad(const std::string &name) const {
  if (!tape_) throw std::logic_error("Graph::InputGrad called before Forward");
  return tape_->Grad(inputs_.at(name));
}

const Tape &Graph::tape() const {
  if (!tape_) throw std::logic_error("graph has not run forward");
  return *tape_;
}

// ---------------------------------------------------------------------------
// Gradcheck

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const GradcheckEntry &e) { return e.passed; });
}

double GradcheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto &e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

namespace {

std::vector<int64_t> SampleCoords(const Tensor &analytic, int64_t max_coords,
                                  std::mt19937_64 &rng) {
  const int64_t n = analytic.numel();
  std::vector<int64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (max_coords <= 0 || n <= max_coords) return idx;
  const int64_t top = max_coords / 2;
  std::partial_sort(idx.begin(), idx.begin() + top, idx.end(),
                    [&](int64_t a, int64_t b) {
                      return std::abs(analytic[a]) > std::abs(analytic[b]);
                    });
  std::shuffle(idx.begin() + top, idx.end(), rng);
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradcheckReport Gradcheck(Graph &graph, const TensorMap &inputs,
                          double tolerance, const GradcheckOptions &opts) {
  GradcheckReport report;
  report.tolerance = tolerance;
  std::mt19937_64 rng(opts.seed);
  TensorMap work = inputs;

  TensorMap outputs = graph.Forward(work);
  TensorMap projections;
  for (const auto &[name, t] : outputs)
    projections[name] = Tensor::Randn(t.shape(), rng);

  auto loss_at = [&]() {
    TensorMap out = graph.Forward(work);
    double loss = 0.0;
    for (const auto &[name, t] : out) {
      const Tensor &proj = projections.at(name);
      for (int64_t i = 0; i < t.numel(); ++i) loss += proj[i] * t[i];
    }
    return loss;
  };

  graph.parameters().ZeroGrad();
  graph.Forward(work);
  graph.Backward(projections);
  TensorMap input_grads;
  if (opts.check_inputs)
    for (const auto &kv : work) input_grads[kv.first] = graph.InputGrad(kv.first);

  auto check = [&](const std::string &name, const Tensor &analytic,
                   double *slot) {
    GradcheckEntry e;
    e.name = name;
    double max_num = 0.0;
    for (int64_t i : SampleCoords(analytic, opts.max_coords, rng)) {
      const double saved = slot[i];
      slot[i] = saved + opts.step;
      const double up = loss_at();
      slot[i] = saved - opts.step;
      const double down = loss_at();
      slot[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw GradcheckError("non-finite loss while perturbing '" + name +
                             "' at index " + std::to_string(i));
      const double numeric = (up - down) / (2.0 * opts.step);
      e.max_abs_error = std::max(e.max_abs_error, std::abs(numeric - analytic[i]));
      max_num = std::max(max_num, std::abs(numeric));
      ++e.coords_checked;
    }
    e.max_rel_error = max_num > 0.0 ? e.max_abs_error / max_num
                      : e.max_abs_error > 0.0 ? 1.0
                                              : 0.0;
    e.passed = e.max_rel_error < tolerance;
    report.entries.push_back(e);
  };

  graph.parameters().ForEach([&](Parameter &p) {
    if (!p.trainable) return;
    const Tensor analytic = p.grad;
    check(p.name, analytic, p.value.data());
  });
  if (opts.check_inputs) {
    for (auto &[name, t] : work)
      check("input:" + name, input_grads.at(name), t.data());
  }
  return report;
}

}  // namespace mcdc
