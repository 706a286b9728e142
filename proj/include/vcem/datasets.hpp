#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vcem/tensor.hpp"

namespace vcem::data {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LengthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Features, binary concept labels and task labels for n samples. Immutable
/// after construction; every factory validates the invariants.
class ConceptDataset {
 public:
  ConceptDataset() = default;
  ConceptDataset(std::size_t d, std::size_t k, std::size_t n_classes, std::vector<double> features,
                 std::vector<std::uint8_t> concepts, std::vector<std::int32_t> tasks,
                 std::vector<std::string> concept_names = {}, std::vector<std::string> class_names = {});

  std::size_t size() const { return tasks_.size(); }
  std::size_t feature_dim() const { return d_; }
  std::size_t concept_count() const { return k_; }
  std::size_t class_count() const { return n_classes_; }

  std::span<const double> features() const { return features_; }
  std::span<const std::uint8_t> concepts() const { return concepts_; }
  std::span<const std::int32_t> tasks() const { return tasks_; }
  std::span<const double> feature_row(std::size_t i) const { return {features_.data() + i * d_, d_}; }
  std::span<const std::uint8_t> concept_row(std::size_t i) const { return {concepts_.data() + i * k_, k_}; }
  const std::vector<std::string>& concept_names() const { return concept_names_; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  ConceptDataset subset(std::span<const std::size_t> indices) const;
  ConceptDataset with_features(std::vector<double> features) const;

  /// Rows as tensors (rows x d, rows x k); `indices` empty means all rows.
  diff::Tensor feature_tensor(std::span<const std::size_t> indices = {}) const;
  diff::Tensor concept_tensor(std::span<const std::size_t> indices = {}) const;
  std::vector<std::int32_t> task_vector(std::span<const std::size_t> indices = {}) const;

 private:
  std::size_t d_ = 0, k_ = 0, n_classes_ = 0;
  std::vector<double> features_;
  std::vector<std::uint8_t> concepts_;
  std::vector<std::int32_t> tasks_;
  std::vector<std::string> concept_names_, class_names_;
};

// ---- IDX ----------------------------------------------------------------

enum class IdxKind { Images, Labels };

struct IdxArray {
  IdxKind kind;
  /// Images are scaled to [0,1] by /255; labels keep their integer values.
  diff::Tensor values;
};

/// Parses an unsigned-byte IDX payload (magic 2049 labels, 2051 images).
IdxArray parse_idx(std::span<const std::uint8_t> bytes);
IdxArray read_idx_file(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_idx(const std::vector<std::uint32_t>& extents,
                                     std::span<const std::uint8_t> payload);

/// Digits as one-hot concepts, parity as the task (odd -> 1).
ConceptDataset build_mnist_eo(const IdxArray& images, const IdxArray& labels);
/// Seeded random pairing; features are the two flattened images side by side,
/// concepts two one-hot groups of ten, task the digit sum (19 classes).
ConceptDataset build_mnist_add(const IdxArray& images, const IdxArray& labels, std::uint64_t seed);

// ---- synthetic ------------------------------------------------------------

enum class TaskRule { TupleClass, Parity };

struct SyntheticSpec {
  std::size_t d = 16;
  std::size_t k = 4;
  double noise = 0.0;
  TaskRule rule = TaskRule::TupleClass;
  std::size_t max_classes = 1024;

  void validate() const;
};

TaskRule parse_task_rule(const std::string& name);
std::string to_string(TaskRule rule);

/// Concepts uniform on {0,1}^k, features = c A + noise * N(0, I) for a fixed
/// random map A (k x d) drawn from the seed.
ConceptDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed, std::size_t n);

// ---- precomputed-embedding files ----------------------------------------

/// JSON manifest next to three blobs: features (float32 LE, n x d row-major),
/// concepts (uint8, n x k) and tasks (int32 LE, n). sha256 covers the blobs
/// concatenated in that order.
struct DatasetManifest {
  std::filesystem::path features;
  std::filesystem::path concepts;
  std::filesystem::path tasks;
  std::size_t d = 0, k = 0, n_classes = 0, n = 0;
  std::string sha256;
  std::vector<std::string> concept_names, class_names;

  static DatasetManifest read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;
};

/// Writes the three blobs and the manifest into `dir` using `stem` for names.
DatasetManifest write_embedding_dataset(const ConceptDataset& ds, const std::filesystem::path& dir,
                                        const std::string& stem);
/// `base_dir` resolves relative blob paths.
ConceptDataset load_embedding_dataset(const DatasetManifest& manifest,
                                      const std::filesystem::path& base_dir = {});
ConceptDataset load_embedding_dataset(const std::filesystem::path& manifest_path);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
/// Digest of the dataset's canonical blob encoding.
std::string dataset_checksum(const ConceptDataset& ds);

// ---- splits & scaling ---------------------------------------------------

/// Seeded shuffle then consecutive chunks of round(f_i * n) samples; when the
/// fractions sum to 1 the last chunk absorbs rounding.
std::vector<ConceptDataset> split(const ConceptDataset& ds, const std::vector<double>& fractions,
                                  std::uint64_t seed);

struct Splits {
  ConceptDataset train, val, test;
};
Splits split3(const ConceptDataset& ds, double train, double val, double test, std::uint64_t seed);

/// Per-dimension zero-mean unit-variance transform fitted on one split.
struct Standardizer {
  std::vector<double> mean, scale;

  static Standardizer fit(const ConceptDataset& ds);
  ConceptDataset apply(const ConceptDataset& ds) const;
  void apply_in_place(std::span<double> features) const;
  bool empty() const { return mean.empty(); }
};

}  // namespace vcem::data
