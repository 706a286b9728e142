#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vcem/autodiff.hpp"
#include "vcem/datasets.hpp"
#include "vcem/rng.hpp"

namespace vcem::models {

enum class Family { Blackbox, CbmLinear, CbmMlp, Cem, Vcem };

Family parse_family(const std::string& name);
std::string to_string(Family family);
bool is_concept_based(Family family);
bool has_embeddings(Family family);
const std::vector<Family>& all_families();

/// What the V-CEM posterior is conditioned on when no labels are available.
enum class InferCondition { Probs, Threshold };

struct ModelSpec {
  Family family = Family::Vcem;
  std::size_t d = 0, k = 0, n_classes = 0;
  std::size_t hidden = 64;
  std::size_t m = 16;
  double lambda_t = 0.1;
  double lambda_p = 0.05;
  /// Multiplier on the Glorot-Bengio uniform range; 4 is their setting for logistic units.
  double init_gain = 4.0;
  InferCondition infer_condition = InferCondition::Threshold;

  void validate() const;
};

std::string to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const std::string& text);

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Per-sample hard concept assignments: where mask is 1 the concept takes
/// `values`. Both are B x k with entries in {0,1}.
struct Overrides {
  diff::Tensor mask, values;

  bool active() const;
  /// The same assignment map applied to every row of a batch.
  static Overrides broadcast(const std::map<std::size_t, int>& assignment, std::size_t batch, std::size_t k);
  void validate(std::size_t batch, std::size_t k) const;
};

enum class Mode { Train, Infer };

struct ForwardOptions {
  Mode mode = Mode::Infer;
  /// Ground-truth concepts (B x k); required in train mode for V-CEM prior selection.
  const diff::Tensor* c_true = nullptr;
  const Overrides* overrides = nullptr;
  /// Source of reparameterization noise in train mode.
  Rng* rng = nullptr;
};

/// Graph handles of one forward pass. Fields a family does not produce stay invalid.
struct Forward {
  diff::Var concept_logits;
  diff::Var concept_probs;
  /// B x (k m) concept embeddings for CEM/V-CEM; p-hat after overrides for CBMs.
  diff::Var embeddings;
  diff::Var class_logits;
  diff::Var posterior_mean, posterior_log_sigma, prior_selected;
};

struct LossBreakdown {
  diff::Var total_var;
  double concept_loss = 0.0, task_loss = 0.0, prior_loss = 0.0, total = 0.0;
};

struct Prediction {
  diff::Tensor concept_probs;  // B x k, empty for blackbox
  diff::Tensor class_probs;    // B x N
  diff::Tensor embeddings;     // B x (k m), or B x k for CBMs, empty for blackbox
};

class Model {
 public:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}
  virtual ~Model() = default;

  const ModelSpec& spec() const { return spec_; }
  Family family() const { return spec_.family; }
  diff::ParameterSet& params() { return params_; }
  const diff::ParameterSet& params() const { return params_; }

  virtual Forward forward(diff::Tape& tape, const diff::Tensor& x, const ForwardOptions& opts) const = 0;
  virtual std::unique_ptr<Model> clone() const = 0;

  /// (1/k) L_c + lambda_t L_t + lambda_p L_p; the blackbox uses L_t alone.
  LossBreakdown loss(const Forward& f, const diff::Tensor& c_true, const std::vector<std::int32_t>& y) const;
  /// Deterministic inference-mode pass without gradient recording.
  Prediction predict(const diff::Tensor& x, const Overrides* overrides = nullptr) const;

 protected:
  void check_input(const diff::Tensor& x, const ForwardOptions& opts) const;
  ModelSpec spec_;
  diff::ParameterSet params_;
};

/// Builds a model with Xavier-uniform weights (range x spec.init_gain),
/// zero biases and N(0,1) prior means, drawn from the "init" substream of `seed`.
std::unique_ptr<Model> create_model(const ModelSpec& spec, std::uint64_t seed);

// ---- shared graph pieces ------------------------------------------------

/// k x (k m) 0/1 matrix that copies concept j into columns j*m .. j*m+m-1.
diff::Tensor expansion_matrix(std::size_t k, std::size_t m);
/// (k m) x (k m) block-diagonal 0/1 mask with k blocks of m x m.
diff::Tensor block_diagonal_mask(std::size_t k, std::size_t m);
diff::Var dense(diff::Tape& tape, diff::Var x, const diff::Parameter& w, const diff::Parameter& b);
diff::Tensor one_hot(const std::vector<std::int32_t>& y, std::size_t n_classes);

// ---- bundles --------------------------------------------------------------

/// A trained model plus the feature standardizer fitted on its train split.
struct ModelBundle {
  std::unique_ptr<Model> model;
  data::Standardizer standardizer;
};

/// Writes model.ckpt (parameters and standardizer) and spec.json into `dir`.
void save_bundle(const std::filesystem::path& dir, const Model& model, const data::Standardizer& standardizer);
ModelBundle load_bundle(const std::filesystem::path& dir);

}  // namespace vcem::models
