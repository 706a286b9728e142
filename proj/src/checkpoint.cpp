#include "vcem/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <json.hpp>

#include "vcem/datasets.hpp"

namespace vcem::diff {
namespace {

constexpr char kMagic[8] = {'V', 'C', 'E', 'M', 'C', 'K', 'P', 'T'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  nlohmann::json header;
  header["format"] = "vcem-checkpoint";
  header["version"] = 1;
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) header["tensors"].push_back({{"name", t.name}, {"shape", t.value.shape()}});
  std::vector<std::uint8_t> payload;
  for (const auto& t : tensors) {
    for (double v : t.value.values()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int i = 0; i < 4; ++i) payload.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  header["sha256"] = data::sha256_hex(payload);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw CheckpointError("checkpoint: missing VCEMCKPT magic");
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw CheckpointError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (header.value("format", "") != "vcem-checkpoint" || header.value("version", 0) != 1)
    throw CheckpointError("checkpoint: unsupported format or version");
  const std::span<const std::uint8_t> payload(bytes.data() + 16 + header_len, bytes.size() - 16 - header_len);
  if (header.value("sha256", "") != data::sha256_hex(payload))
    throw CheckpointError("checkpoint: payload checksum mismatch (file is corrupt)");

  std::vector<NamedTensor> out;
  std::size_t offset = 16 + header_len;
  try {
    for (const auto& entry : header.at("tensors")) {
      Shape shape = entry.at("shape").get<Shape>();
      const std::size_t count = shape_size(shape);
      if (bytes.size() - offset < count * 4)
        throw CheckpointError("checkpoint: payload truncated at tensor '" +
                              entry.at("name").get<std::string>() + "'");
      std::vector<double> values(count);
      for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[offset + 4 * i + b]) << (8 * b);
        values[i] = std::bit_cast<float>(bits);
      }
      offset += count * 4;
      out.push_back({entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed tensor entry: ") + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  if (offset != bytes.size()) throw CheckpointError("checkpoint: trailing bytes after payload");
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const auto bytes = encode_checkpoint(tensors);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("failed writing '" + path.string() + "'");
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::vector<NamedTensor> to_named(const ParameterSet& params) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back({params[i].name, params[i].value});
  return out;
}

void load_into(ParameterSet& params, const std::vector<NamedTensor>& tensors) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == p.name; });
    if (it == tensors.end()) throw CheckpointError("checkpoint lacks parameter '" + p.name + "'");
    if (it->value.shape() != p.value.shape())
      throw CheckpointError("checkpoint parameter '" + p.name + "' has shape " +
                            shape_to_string(it->value.shape()) + ", expected " +
                            shape_to_string(p.value.shape()));
    p.value = it->value;
    p.value.set_requires_grad(true);
  }
}

}  // namespace vcem::diff
