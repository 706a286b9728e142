#include "vcem/autodiff.hpp"

#include <algorithm>
#include <stdexcept>

namespace vcem::diff {

ParameterSet::ParameterSet(const ParameterSet& other) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this != &other) {
    ParameterSet copy(other);
    params_ = std::move(copy.params_);
  }
  return *this;
}

Parameter& ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  params_.push_back(std::make_unique<Parameter>(Parameter{std::move(name), std::move(value)}));
  return *params_.back();
}

Parameter& ParameterSet::at(std::string_view name) {
  for (auto& p : params_)
    if (p->name == name) return *p;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

const Parameter& ParameterSet::at(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p->name == name; });
}

std::size_t ParameterSet::index_of(const Parameter* p) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].get() == p) return i;
  return params_.size();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterSet::assign_values(const ParameterSet& other) {
  if (other.size() != size()) throw std::invalid_argument("parameter count mismatch");
  for (std::size_t i = 0; i < size(); ++i) {
    if (params_[i]->name != other[i].name || params_[i]->value.shape() != other[i].value.shape())
      throw std::invalid_argument("parameter '" + params_[i]->name + "' does not match '" +
                                  other[i].name + "'");
    params_[i]->value = other[i].value;
    params_[i]->value.set_requires_grad(true);
  }
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::needs_grad() const { return tape_->needs_grad(id_); }

Var Tape::push(std::string_view op, Tensor value, bool needs_grad, BackwardFn fn) {
  if (!value.all_finite())
    throw NonFiniteError(std::string(op) + " produced a non-finite value");
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  if (needs_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push("constant", std::move(value), false, nullptr); }

Var Tape::variable(Tensor value) {
  return push("variable", std::move(value), grad_enabled_, nullptr);
}

Var Tape::parameter(const Parameter& p) {
  Var v = push("parameter '" + p.name + "'", p.value, grad_enabled_, nullptr);
  nodes_[v.id()].param = &p;
  return v;
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw std::invalid_argument(std::string(op) + ": operand from another tape");
    needs = needs || in.needs_grad();
  }
  return push(op, std::move(value), needs && grad_enabled_, std::move(fn));
}

Var Tape::record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw std::invalid_argument(std::string(op) + ": operand from another tape");
    needs = needs || in.needs_grad();
  }
  return push(op, std::move(value), needs && grad_enabled_, std::move(fn));
}

Tensor* Tape::grad_target(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return &n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (!loss.valid() || &loss.tape() != this)
    throw std::invalid_argument("backward: loss is not recorded on this tape");
  if (loss.value().size() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_to_string(loss.shape()));
  if (!loss.needs_grad())
    throw std::invalid_argument("backward: loss is detached from every parameter on the record");
  if (swept_) throw std::logic_error("backward: record already swept");
  swept_ = true;
  grad_target(loss.id())->fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    // The closure may allocate other nodes' accumulators but never appends.
    const Tensor& g = n.grad;
    n.backward(*this, g);
  }
}

Gradients Tape::gradients_for(const ParameterSet& params) const {
  Gradients out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) out.emplace_back(params[i].value.shape(), 0.0);
  for (const Node& n : nodes_) {
    if (!n.param || n.grad.empty()) continue;
    std::size_t idx = params.index_of(n.param);
    if (idx == params.size()) continue;
    auto dst = out[idx].values();
    auto src = n.grad.values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  return out;
}

Gradients backward(Tape& tape, Var loss, const ParameterSet& params) {
  tape.backward(loss);
  return tape.gradients_for(params);
}

}  // namespace vcem::diff
