#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "vcem/autodiff.hpp"

namespace vcem::diff {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Layout: 8-byte magic "VCEMCKPT", uint64 LE header length, UTF-8 JSON header
// {"format":"vcem-checkpoint","version":1,"tensors":[{"name","shape"}...]},
// then every tensor's values as little-endian float32 in header order.
std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

std::vector<NamedTensor> to_named(const ParameterSet& params);
/// Copies matching names from `tensors` into `params`; every parameter must be present.
void load_into(ParameterSet& params, const std::vector<NamedTensor>& tensors);

}  // namespace vcem::diff
