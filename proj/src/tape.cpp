#include "qsector/tape.hpp"

#include <algorithm>
#include <utility>

namespace qsector::ad {

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

void Parameter::zero_grad() { grad.fill(0.0); }

Parameter& ParameterSet::add(std::string name, Tensor value) {
  for (const auto& p : params_) {
    if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
  }
  return params_.emplace_back(std::move(name), std::move(value));
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& param) {
  Node node;
  node.value = param.value;
  node.requires_grad = true;
  node.param = &param;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [this](std::size_t id) { return nodes_.at(id).requires_grad; });
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Tape::custom(std::span<const Var> inputs, const CustomForward& forward, CustomVjp vjp) {
  std::vector<std::size_t> ids;
  std::vector<const Tensor*> values;
  for (const auto& v : inputs) {
    ids.push_back(v.id());
    values.push_back(&value(v.id()));
  }
  Tensor out = forward(values);
  const std::size_t arity = ids.size();
  std::size_t out_id = nodes_.size();
  return record(std::move(out), ids,
                [ids, arity, out_id, vjp = std::move(vjp)](Tape& tape, const Tensor& g) {
                  std::vector<const Tensor*> in;
                  for (auto id : ids) in.push_back(&tape.value(id));
                  std::vector<Tensor> cot = vjp(in, tape.value(out_id), g);
                  if (cot.size() != arity) {
                    throw ArityError("custom node vjp returned " + std::to_string(cot.size()) +
                                     " cotangents for " + std::to_string(arity) + " inputs");
                  }
                  for (std::size_t i = 0; i < arity; ++i) {
                    if (!tape.requires_grad(ids[i])) continue;
                    if (cot[i].shape() != in[i]->shape()) {
                      throw ShapeError("custom vjp cotangent " + shape_str(cot[i].shape()) +
                                       " does not match input " + shape_str(in[i]->shape()));
                    }
                    Tensor& dst = tape.grad(ids[i]);
                    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += cot[i][k];
                  }
                });
}

Tensor& Tape::grad(std::size_t id) {
  Node& node = nodes_.at(id);
  if (!node.grad_ready) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.grad_ready = true;
  }
  return node.grad;
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  Node& node = nodes_.at(id);
  if (g.size() != node.value.size()) {
    throw ShapeError("gradient of shape " + shape_str(g.shape()) + " for node of shape " +
                     shape_str(node.value.shape()));
  }
  if (!node.grad_ready) {
    node.grad = Tensor(node.value.shape(), std::vector<double>(g.data().begin(), g.data().end()));
    node.grad_ready = true;
    return;
  }
  double* dst = node.grad.data().data();
  const double* src = g.data().data();
  for (std::size_t k = 0; k < g.size(); ++k) dst[k] += src[k];
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw std::invalid_argument("loss does not belong to this tape");
  const Tensor& lv = value(loss.id());
  if (lv.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(lv.shape()));
  }
  for (auto& n : nodes_) {
    n.grad_ready = false;
    n.grad = Tensor();
  }
  grad(loss.id()).fill(1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.grad_ready || !node.requires_grad) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.param != nullptr) {
      auto& dst = node.param->grad;
      if (dst.shape() != node.value.shape()) dst = Tensor(node.value.shape(), 0.0);
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += node.grad[k];
    }
  }
}

}  // namespace qsector::ad
