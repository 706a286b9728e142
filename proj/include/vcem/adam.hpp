#pragma once

#include <cstdint>
#include <vector>

#include "vcem/autodiff.hpp"

namespace vcem::diff {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates per parameter plus the step counter.
struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step = 0;

  static AdamState for_parameters(const ParameterSet& params, AdamConfig config = {});
};

/// One bias-corrected Adam update. Throws before touching any parameter when
/// a gradient is non-finite or shapes disagree.
void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state);

}  // namespace vcem::diff
