#pragma once

#include <random>

#include "vcem/models.hpp"

namespace vcem::testing {

inline diff::Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo = -1.0,
                                  double hi = 1.0) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  diff::Tensor t({rows, cols});
  for (double& v : t.values()) v = u(g);
  return t;
}

inline diff::Tensor random_binary(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  diff::Tensor t({rows, cols});
  for (double& v : t.values()) v = static_cast<double>(g() & 1U);
  return t;
}

inline std::vector<std::int32_t> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::vector<std::int32_t> y(n);
  for (auto& v : y) v = static_cast<std::int32_t>(g() % classes);
  return y;
}

// Overwrites every parameter so no entry sits at an initial zero or stationary point.
inline void randomize(diff::ParameterSet& ps, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (double& v : ps[i].value.values()) v = u(g);
}

inline models::ModelSpec tiny_spec(models::Family family, std::size_t d = 6, std::size_t k = 2, std::size_t n = 2,
                                   std::size_t h = 4, std::size_t m = 3) {
  models::ModelSpec s;
  s.family = family;
  s.d = d;
  s.k = k;
  s.n_classes = n;
  s.hidden = h;
  s.m = m;
  return s;
}

}  // namespace vcem::testing
