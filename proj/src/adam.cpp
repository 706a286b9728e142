#include "vcem/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace vcem::diff {

AdamState AdamState::for_parameters(const ParameterSet& params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.first_moment.emplace_back(params[i].value.shape(), 0.0);
    s.second_moment.emplace_back(params[i].value.shape(), 0.0);
  }
  return s;
}

void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state) {
  const AdamConfig& c = state.config;
  if (!(c.learning_rate > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& s = params[i].value.shape();
    if (grads[i].shape() != s || state.first_moment[i].shape() != s ||
        state.second_moment[i].shape() != s)
      throw ShapeError("adam_step: shape mismatch for parameter '" + params[i].name + "'");
    if (!grads[i].all_finite())
      throw NonFiniteError("adam_step: non-finite gradient for parameter '" + params[i].name + "'");
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].value.values();
    auto g = grads[i].values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

}  // namespace vcem::diff
