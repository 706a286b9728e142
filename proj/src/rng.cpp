#include "vcem/rng.hpp"

namespace vcem {

// splitmix64 finaliser
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a
std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng Rng::substream(std::uint64_t seed, std::string_view name) {
  return Rng(mix_seed(seed, hash_name(name)));
}

Rng Rng::child(std::string_view name, std::uint64_t index) const {
  return Rng(mix_seed(mix_seed(key_, hash_name(name)), index));
}

}  // namespace vcem
