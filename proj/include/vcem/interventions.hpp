#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vcem/datasets.hpp"
#include "vcem/models.hpp"

namespace vcem::interv {

class InterventionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// (1 - theta) x + theta eps with eps ~ N(0, I) drawn per element from rng.
diff::Tensor noise_blend(const diff::Tensor& x, double theta, Rng& rng);
diff::Tensor noise_blend(const diff::Tensor& x, double theta, const diff::Tensor& eps);

/// Concepts whose thresholded prediction disagrees with c_true, each kept
/// with probability p_int (one uniform per slot, row-major). Values are c_true.
models::Overrides select_misclassified(const diff::Tensor& probs, const diff::Tensor& c_true, double p_int, Rng& rng);

struct Intervened {
  models::Prediction before, after;
  models::Overrides applied;
};

/// Random intervention on misclassified concepts; the family decides what an
/// override means. Blackbox models are rejected.
Intervened intervene(const models::Model& model, const diff::Tensor& x, const diff::Tensor& c_true, double p_int,
                     Rng& rng);

struct SweepGrid {
  std::vector<double> thetas{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> p_ints{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<std::uint64_t> seeds{0, 1, 2};

  void validate() const;
};

struct SweepRow {
  std::string model;
  double theta = 0.0, p_int = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

struct SweepSummary {
  std::string model;
  double theta = 0.0, p_int = 0.0;
  double mean = 0.0, stddev = 0.0;
  std::size_t repeats = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;

  std::vector<SweepSummary> summary() const;
  std::string to_csv() const;
  std::string summary_json() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct NamedModel {
  std::string name;
  const models::Model* model;
};

/// Every (model, theta, p_int, seed) cell: blend the inputs, predict concepts
/// on the noisy inputs, intervene on misclassified concepts, score the task.
/// Noise depends on (seed, theta) only, so models and p_int values share it.
/// The blackbox has nothing to intervene on and is scored on the noisy inputs.
SweepResult sweep(const std::vector<NamedModel>& models, const data::ConceptDataset& ds, const SweepGrid& grid,
                  std::size_t jobs = 1);

/// Stream used for the noise of one sweep cell.
Rng noise_stream(std::uint64_t seed, double theta);
/// Stream used for the intervention draws of one sweep cell.
Rng intervention_stream(std::uint64_t seed, double theta, double p_int);

}  // namespace vcem::interv
