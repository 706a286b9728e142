#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "vcem/tensor.hpp"

namespace vcem::diff {

/// Named trainable tensor owned by a model.
struct Parameter {
  std::string name;
  Tensor value;
};

/// Ordered, name-addressable collection of parameters. Parameters are added
/// once at model construction; addresses stay stable afterwards.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter& add(std::string name, Tensor value);
  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t index_of(const Parameter* p) const;  // size() when absent
  std::size_t scalar_count() const;

  /// Copy values from `other`; names and shapes must match one to one.
  void assign_values(const ParameterSet& other);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

/// Gradients aligned with a ParameterSet's order.
using Gradients = std::vector<Tensor>;

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool needs_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Computation record: an append-only list of values in topological order,
/// each with the closure that propagates its gradient to its operands.
/// Single-threaded; distinct tapes may live on distinct threads.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf that receives a gradient; used for inputs under test.
  Var variable(Tensor value);
  Var parameter(const Parameter& p);

  /// Appends the result of a primitive. `op` names the primitive in errors.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulator of a node, zero-initialised on first access;
  /// nullptr when the node does not need a gradient.
  Tensor* grad_target(std::size_t id);
  /// Gradient of a node after backward(); zeros when it received none.
  Tensor grad(Var v) const;

  /// Reverse sweep from a scalar loss.
  void backward(Var loss);
  Gradients gradients_for(const ParameterSet& params) const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    const Parameter* param = nullptr;
    BackwardFn backward;
  };
  Var push(std::string_view op, Tensor value, bool needs_grad, BackwardFn fn);

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool swept_ = false;
};

/// Runs the reverse sweep and returns d(loss)/d(p) for every parameter in
/// `params`; parameters not reachable from the loss get zero gradients.
Gradients backward(Tape& tape, Var loss, const ParameterSet& params);

}  // namespace vcem::diff
