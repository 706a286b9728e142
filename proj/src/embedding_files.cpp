#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "vcem/datasets.hpp"

namespace vcem::data {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "blob encoding assumes a little-endian host");

struct Blobs {
  std::vector<std::uint8_t> features, concepts, tasks;
};

Blobs encode_blobs(const ConceptDataset& ds) {
  Blobs b;
  b.features.resize(ds.features().size() * 4);
  for (std::size_t i = 0; i < ds.features().size(); ++i) {
    const float f = static_cast<float>(ds.features()[i]);
    std::memcpy(b.features.data() + 4 * i, &f, 4);
  }
  b.concepts.assign(ds.concepts().begin(), ds.concepts().end());
  b.tasks.resize(ds.tasks().size() * 4);
  if (!ds.tasks().empty()) std::memcpy(b.tasks.data(), ds.tasks().data(), b.tasks.size());
  return b;
}

std::string digest(const Blobs& b) {
  std::vector<std::uint8_t> all;
  all.reserve(b.features.size() + b.concepts.size() + b.tasks.size());
  all.insert(all.end(), b.features.begin(), b.features.end());
  all.insert(all.end(), b.concepts.begin(), b.concepts.end());
  all.insert(all.end(), b.tasks.begin(), b.tasks.end());
  return sha256_hex(all);
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write '" + path.string() + "'");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void expect_length(const std::string& what, std::size_t got, std::size_t want) {
  if (got != want)
    throw LengthError(what + " blob holds " + std::to_string(got) + " bytes, manifest implies " + std::to_string(want));
}

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string dataset_checksum(const ConceptDataset& ds) { return digest(encode_blobs(ds)); }

DatasetManifest DatasetManifest::read(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open manifest '" + path.string() + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + path.string() + "': " + e.what());
  }
  DatasetManifest m;
  try {
    m.features = j.at("features").get<std::string>();
    m.concepts = j.at("concepts").get<std::string>();
    m.tasks = j.at("tasks").get<std::string>();
    m.d = j.at("d").get<std::size_t>();
    m.k = j.at("k").get<std::size_t>();
    m.n_classes = j.at("N").get<std::size_t>();
    m.n = j.at("n").get<std::size_t>();
    m.sha256 = j.at("sha256").get<std::string>();
    if (j.contains("concept_names")) m.concept_names = j["concept_names"].get<std::vector<std::string>>();
    if (j.contains("class_names")) m.class_names = j["class_names"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + path.string() + "': " + e.what());
  }
  return m;
}

void DatasetManifest::write(const fs::path& path) const {
  json j{{"features", features.string()}, {"concepts", concepts.string()}, {"tasks", tasks.string()},
         {"d", d}, {"k", k}, {"N", n_classes}, {"n", n}, {"sha256", sha256}};
  if (!concept_names.empty()) j["concept_names"] = concept_names;
  if (!class_names.empty()) j["class_names"] = class_names;
  std::ofstream f(path);
  if (!f) throw FormatError("cannot write manifest '" + path.string() + "'");
  f << j.dump(2) << "\n";
}

DatasetManifest write_embedding_dataset(const ConceptDataset& ds, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  const Blobs b = encode_blobs(ds);
  DatasetManifest m;
  m.features = stem + ".features.f32";
  m.concepts = stem + ".concepts.u8";
  m.tasks = stem + ".tasks.i32";
  m.d = ds.feature_dim();
  m.k = ds.concept_count();
  m.n_classes = ds.class_count();
  m.n = ds.size();
  m.sha256 = digest(b);
  m.concept_names = ds.concept_names();
  m.class_names = ds.class_names();
  write_bytes(dir / m.features, b.features);
  write_bytes(dir / m.concepts, b.concepts);
  write_bytes(dir / m.tasks, b.tasks);
  m.write(dir / (stem + ".json"));
  return m;
}

ConceptDataset load_embedding_dataset(const DatasetManifest& m, const fs::path& base_dir) {
  auto resolve = [&](const fs::path& p) { return p.is_absolute() ? p : base_dir / p; };
  Blobs b{read_bytes(resolve(m.features)), read_bytes(resolve(m.concepts)), read_bytes(resolve(m.tasks))};
  expect_length("features", b.features.size(), m.n * m.d * 4);
  expect_length("concepts", b.concepts.size(), m.n * m.k);
  expect_length("tasks", b.tasks.size(), m.n * 4);
  const std::string sum = digest(b);
  if (sum != m.sha256) throw DatasetError("checksum mismatch: manifest " + m.sha256 + ", blobs " + sum);

  std::vector<double> features(m.n * m.d);
  for (std::size_t i = 0; i < features.size(); ++i) {
    float f;
    std::memcpy(&f, b.features.data() + 4 * i, 4);
    features[i] = f;
  }
  std::vector<std::int32_t> tasks(m.n);
  if (m.n) std::memcpy(tasks.data(), b.tasks.data(), b.tasks.size());
  return ConceptDataset(m.d, m.k, m.n_classes, std::move(features), std::move(b.concepts), std::move(tasks),
                        m.concept_names, m.class_names);
}

ConceptDataset load_embedding_dataset(const fs::path& manifest_path) {
  return load_embedding_dataset(DatasetManifest::read(manifest_path), manifest_path.parent_path());
}

}  // namespace vcem::data
