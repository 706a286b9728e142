#pragma once

#include "vcem/models.hpp"
#include "vcem/ops.hpp"

namespace vcem::models::detail {

inline diff::Var param(diff::Tape& tape, const diff::ParameterSet& ps, std::string_view name) {
  return tape.parameter(ps.at(name));
}

/// sigmoid hidden layer then linear logits, parameters <prefix>.w1/b1/w2/b2.
inline diff::Var mlp_head(diff::Tape& tape, diff::Var in, const diff::ParameterSet& ps, const std::string& prefix) {
  diff::Var h = diff::sigmoid(dense(tape, in, ps.at(prefix + ".w1"), ps.at(prefix + ".b1")));
  return dense(tape, h, ps.at(prefix + ".w2"), ps.at(prefix + ".b2"));
}

/// p (1 - M) + M V: hard-set the overridden entries of a B x k matrix.
inline diff::Var apply_overrides(diff::Var p, const Overrides* ov) {
  if (!ov || !ov->active()) return p;
  diff::Tensor keep = ov->mask;
  diff::Tensor set = ov->mask;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    keep[i] = 1.0 - ov->mask[i];
    set[i] = ov->mask[i] * ov->values[i];
  }
  return diff::add(diff::mul(p, keep), set);
}

}  // namespace vcem::models::detail
