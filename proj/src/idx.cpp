#include <algorithm>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numeric>

#include "vcem/datasets.hpp"
#include "vcem/rng.hpp"

namespace vcem::data {
namespace {

constexpr std::uint32_t kLabelMagic = 2049;  // 0x00000801: ubyte, 1 dimension
constexpr std::uint32_t kImageMagic = 2051;  // 0x00000803: ubyte, 3 dimensions

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | p[3];
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void check_pair(const IdxArray& images, const IdxArray& labels) {
  if (images.kind != IdxKind::Images) throw DatasetError("expected an IDX image array");
  if (labels.kind != IdxKind::Labels) throw DatasetError("expected an IDX label array");
  if (images.values.shape()[0] != labels.values.size())
    throw DatasetError("image count " + std::to_string(images.values.shape()[0]) +
                       " does not match label count " + std::to_string(labels.values.size()));
  for (double v : labels.values.values())
    if (v < 0 || v > 9) throw DatasetError("MNIST labels must lie in 0..9");
}

std::vector<std::string> digit_names(const std::string& prefix) {
  std::vector<std::string> names;
  for (int i = 0; i < 10; ++i) names.push_back(prefix + std::to_string(i));
  return names;
}

}  // namespace

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw LengthError("IDX: " + std::to_string(bytes.size()) + " bytes is shorter than the magic number");
  const std::uint32_t magic = read_be32(bytes.data());
  if (magic != kLabelMagic && magic != kImageMagic)
    throw FormatError("IDX: unsupported magic number " + std::to_string(magic) + " (expected 2049 or 2051)");
  const std::size_t ndims = bytes[3];
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) throw LengthError("IDX: header truncated (" + std::to_string(bytes.size()) + " bytes)");

  diff::Shape shape;
  for (std::size_t i = 0; i < ndims; ++i) shape.push_back(read_be32(bytes.data() + 4 + 4 * i));
  for (auto e : shape)
    if (e == 0) throw LengthError("IDX: zero extent in header");
  const std::size_t count = diff::shape_size(shape);
  if (bytes.size() - header < count)
    throw LengthError("IDX: payload holds " + std::to_string(bytes.size() - header) + " bytes, header promises " +
                      std::to_string(count));
  if (bytes.size() - header > count) throw LengthError("IDX: trailing bytes after payload");

  const bool images = magic == kImageMagic;
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double b = bytes[header + i];
    values[i] = images ? b / 255.0 : b;
  }
  return IdxArray{images ? IdxKind::Images : IdxKind::Labels, diff::Tensor(std::move(shape), std::move(values))};
}

IdxArray read_idx_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open IDX file '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_idx(bytes);
}

std::vector<std::uint8_t> encode_idx(const std::vector<std::uint32_t>& extents, std::span<const std::uint8_t> payload) {
  if (extents.size() != 1 && extents.size() != 3) throw FormatError("IDX: only 1-d labels or 3-d images are encoded");
  std::vector<std::uint8_t> out{0, 0, 0x08, static_cast<std::uint8_t>(extents.size())};
  for (auto e : extents) put_be32(out, e);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

ConceptDataset build_mnist_eo(const IdxArray& images, const IdxArray& labels) {
  check_pair(images, labels);
  const std::size_t n = labels.values.size();
  const std::size_t d = images.values.size() / n;
  std::vector<double> features(images.values.values().begin(), images.values.values().end());
  std::vector<std::uint8_t> concepts(n * 10, 0);
  std::vector<std::int32_t> tasks(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int digit = static_cast<int>(labels.values[i]);
    concepts[i * 10 + digit] = 1;
    tasks[i] = digit % 2;
  }
  return ConceptDataset(d, 10, 2, std::move(features), std::move(concepts), std::move(tasks), digit_names("digit_"),
                        {"even", "odd"});
}

ConceptDataset build_mnist_add(const IdxArray& images, const IdxArray& labels, std::uint64_t seed) {
  check_pair(images, labels);
  std::size_t n = labels.values.size();
  if (n % 2 != 0) {
    std::cerr << "warning: MNIST addition needs an even sample count; dropping the last of " << n << " samples\n";
    --n;
  }
  const std::size_t d = images.values.size() / labels.values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::substream(seed, "mnist-add-pairing");
  std::shuffle(order.begin(), order.end(), rng.engine());

  const std::size_t pairs = n / 2;
  auto pixels = images.values.values();
  std::vector<double> features;
  features.reserve(pairs * 2 * d);
  std::vector<std::uint8_t> concepts(pairs * 20, 0);
  std::vector<std::int32_t> tasks(pairs);
  for (std::size_t p = 0; p < pairs; ++p) {
    const std::size_t a = order[2 * p], b = order[2 * p + 1];
    features.insert(features.end(), pixels.begin() + static_cast<long>(a * d), pixels.begin() + static_cast<long>((a + 1) * d));
    features.insert(features.end(), pixels.begin() + static_cast<long>(b * d), pixels.begin() + static_cast<long>((b + 1) * d));
    const int da = static_cast<int>(labels.values[a]);
    const int db = static_cast<int>(labels.values[b]);
    concepts[p * 20 + da] = 1;
    concepts[p * 20 + 10 + db] = 1;
    tasks[p] = da + db;
  }
  auto names = digit_names("left_digit_");
  auto right = digit_names("right_digit_");
  names.insert(names.end(), right.begin(), right.end());
  std::vector<std::string> classes;
  for (int s = 0; s <= 18; ++s) classes.push_back("sum_" + std::to_string(s));
  return ConceptDataset(2 * d, 20, 19, std::move(features), std::move(concepts), std::move(tasks), std::move(names),
                        std::move(classes));
}

}  // namespace vcem::data
