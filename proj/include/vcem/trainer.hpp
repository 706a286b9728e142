#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "vcem/datasets.hpp"
#include "vcem/metrics.hpp"
#include "vcem/models.hpp"

namespace vcem::train {

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, const std::string& what)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": " + what), epoch(epoch) {}
  std::size_t epoch;
};

struct TrainConfig {
  std::size_t max_epochs = 500;
  std::size_t patience = 20;
  double learning_rate = 1e-3;
  std::size_t lr_step = 100;
  double lr_decay = 0.1;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  double randint_prob = 0.25;
  std::size_t randint_start_epoch = 3;

  void validate() const;
  /// Closed-form step schedule, epochs counted from 1.
  double lr_at(std::size_t epoch) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0, val_loss = 0.0;
  double val_task_accuracy = 0.0;
  double val_concept_accuracy = 0.0;  // NaN for the blackbox
  double learning_rate = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;

  void write_csv(const std::filesystem::path& path) const;
  std::string to_csv() const;
};

struct TrainResult {
  std::unique_ptr<models::Model> model;
  TrainHistory history;
};

/// Called after every epoch; returning false stops training early.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Adam with early stopping on the validation total loss; returns the
/// parameters of the best validation epoch. Datasets are used as given (the
/// caller standardizes them).
TrainResult train(const models::ModelSpec& spec, const data::ConceptDataset& train_set,
                  const data::ConceptDataset& val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Inference-mode loss breakdown over a whole dataset (weighted by batch size).
models::LossBreakdown evaluate_loss(const models::Model& model, const data::ConceptDataset& ds,
                                    std::size_t batch_size = 1024);

/// Inference-mode predictions over a dataset, optionally with overrides.
models::Prediction predict_all(const models::Model& model, const diff::Tensor& x,
                               const models::Overrides* overrides = nullptr, std::size_t batch_size = 1024);

/// Deterministic evaluation; CRC is filled for concept-based families.
metrics::MetricsReport evaluate(const models::Model& model, const data::ConceptDataset& ds, bool with_crc = true);

/// Per-concept embedding width used for CRC and embedding export (1 for CBMs).
std::size_t embedding_width(const models::Model& model);

}  // namespace vcem::train
