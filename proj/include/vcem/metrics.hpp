#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vcem/tensor.hpp"

namespace vcem::metrics {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fraction of rows whose argmax equals the label.
double task_accuracy(const diff::Tensor& scores, std::span<const std::int32_t> y);
/// Mean of 1[(p > 0.5) == c] over all samples and concepts.
double concept_accuracy(const diff::Tensor& probs, const diff::Tensor& c);
std::vector<double> per_concept_accuracy(const diff::Tensor& probs, const diff::Tensor& c);

struct CrcResult {
  std::optional<double> crc;
  /// One entry per concept; empty for skipped concepts.
  std::vector<std::optional<double>> per_concept;
  std::vector<std::size_t> skipped;
};

/// Mean silhouette (L1 distance) of each point in `points` (n x m) under a
/// two-way labelling, averaged within each cluster and then across the two.
/// Returns nullopt when one cluster is empty.
std::optional<double> two_cluster_silhouette(const diff::Tensor& points, const std::vector<bool>& positive);

/// Per concept j the embedding block j (columns j*m .. j*m+m-1 of the n x k*m
/// matrix) is clustered by the thresholded prediction probs(:, j) > 0.5.
CrcResult crc(const diff::Tensor& embeddings, const diff::Tensor& probs, std::size_t m);

struct MetricsReport {
  std::size_t samples = 0;
  double task_accuracy = 0.0;
  std::optional<double> concept_accuracy;
  std::vector<double> per_concept_accuracy;
  std::optional<CrcResult> crc;
  std::optional<double> concept_loss, task_loss, prior_loss, total_loss;
};

/// JSON object; CRC and concept fields are omitted when absent.
std::string to_json(const MetricsReport& report, int indent = 2);

/// One row per (sample, concept): sample,concept,e0..e{m-1},predicted.
void write_embeddings_csv(const std::filesystem::path& path, const diff::Tensor& embeddings,
                          const diff::Tensor& probs, std::size_t m);

}  // namespace vcem::metrics
