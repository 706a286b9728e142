#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "vcem/autodiff.hpp"

namespace vcem::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // parameter holding the largest error
};

// Relative error with a small absolute floor so that entries whose true
// gradient is ~0 are judged on an absolute scale.
inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// with step h over every scalar in `params`.
inline GradCheck check_gradients(diff::ParameterSet& params,
                                 const std::function<diff::Var(diff::Tape&, diff::ParameterSet&)>& loss_fn,
                                 double h = 1e-4) {
  diff::Tape tape;
  diff::Var loss = loss_fn(tape, params);
  const diff::Gradients analytic = diff::backward(tape, loss, params);

  auto eval = [&] {
    diff::Tape t(false);
    return loss_fn(t, params).value()[0];
  };
  GradCheck out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].value.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = eval();
      values[i] = saved - h;
      const double down = eval();
      values[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = rel_error(analytic[p][i], numeric);
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = params[p].name + "[" + std::to_string(i) + "]";
      }
      ++out.checked;
    }
  }
  return out;
}

}  // namespace vcem::testing
