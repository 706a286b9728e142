#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace vcem {

/// Seeded random stream. Every component draws from a named substream of one
/// 64-bit run seed, so e.g. changing the split seed never perturbs init.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key), engine_(key) {}

  static Rng substream(std::uint64_t seed, std::string_view name);
  /// Independent child stream keyed by (this stream's key, name, index).
  Rng child(std::string_view name, std::uint64_t index = 0) const;

  std::uint64_t key() const { return key_; }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return normal_(engine_); }
  std::uint64_t next() { return engine_(); }
  bool bernoulli(double p) { return uniform() < p; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t hash_name(std::string_view name);

}  // namespace vcem
