#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsector/tensor.hpp"

namespace qsector::ad {

class Tape;

/// A trainable tensor owned outside any tape. Gradients from every tape the
/// parameter is bound to accumulate into `grad` until zero_grad().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v);
  void zero_grad();
};

/// Stable-address container of named parameters.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor value);
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  Parameter* find(const std::string& name);
  std::size_t count() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::deque<Parameter> params_;
};

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class ArityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using CustomForward = std::function<Tensor(std::span<const Tensor* const> inputs)>;
// Consumes the upstream cotangent and returns one cotangent per input.
using CustomVjp = std::function<std::vector<Tensor>(
    std::span<const Tensor* const> inputs, const Tensor& output, const Tensor& grad_out)>;

/// Append-only record of a forward computation. Node ids are assigned in
/// creation order, so every node's inputs precede it and reverse id order is
/// a valid topological order for the backward sweep.
class Tape {
 public:
  using Backward = std::function<void(Tape& tape, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Parameter& param);
  Var record(Tensor value, std::vector<std::size_t> inputs, Backward backward);

  // Registers a node whose gradient is supplied by a vector-Jacobian callback.
  Var custom(std::span<const Var> inputs, const CustomForward& forward, CustomVjp vjp);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  // Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return nodes_.at(id).grad_ready; }
  // grad(id) += g, where g holds the same number of elements as the node.
  void accumulate(std::size_t id, const Tensor& g);

  // Reverse sweep from a scalar loss. Parameter gradients are accumulated
  // into the bound Parameter objects.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool grad_ready = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
    Parameter* param = nullptr;
  };
  // deque keeps references returned by value() valid while recording.
  std::deque<Node> nodes_;
};

}  // namespace qsector::ad
