#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vcem/datasets.hpp"
#include "vcem/interventions.hpp"
#include "vcem/metrics.hpp"
#include "vcem/models.hpp"
#include "vcem/trainer.hpp"

namespace vcem::lab {

/// Malformed or unknown configuration; `what()` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Build-time `git describe` string, "unknown" outside a checkout.
const char* version();

/// Default configuration document; every accepted key appears here.
nlohmann::ordered_json default_config();

/// Recursively overlays `patch` onto `base`; keys missing from `base` are
/// rejected with their dot path. "dataset" is copied as a whole.
void merge_config(nlohmann::ordered_json& base, const nlohmann::ordered_json& patch, const std::string& where = "");

/// Applies "a.b.c=value"; the value parses as JSON and falls back to a string.
void apply_override(nlohmann::ordered_json& config, const std::string& assignment);

struct RunConfig {
  nlohmann::ordered_json document;
  /// Dataset descriptor with absolute paths.
  nlohmann::ordered_json dataset;
  std::uint64_t seed = 0;
  std::size_t repeats = 3;
  std::size_t jobs = 1;
  double split_train = 0.7, split_val = 0.1, split_test = 0.2;
  models::ModelSpec model;
  train::TrainConfig train;
  /// Unset means the dataset kind's default.
  std::optional<double> learning_rate;
  interv::SweepGrid grid;
  std::vector<models::Family> sweep_families;
  std::vector<double> ablation_lambdas;

  /// Seeds of a multi-run command: seed, seed + 1, ...
  std::vector<std::uint64_t> run_seeds() const;
};

/// Validates a configuration document and converts it. Paths in the
/// dataset descriptor are resolved against `dataset_base`.
RunConfig parse_config(const nlohmann::ordered_json& document, const std::filesystem::path& dataset_base = {});

/// Reads a dataset descriptor file and makes its paths absolute. An embedding
/// manifest (it has a sha256 field) is wrapped as {"kind": "embeddings", "manifest": path}.
nlohmann::ordered_json read_dataset_descriptor(const std::filesystem::path& path);

/// Materializes the dataset named by a descriptor. `seed` feeds synthetic
/// generation (unless the descriptor pins one) and MNIST Addition pairing.
data::ConceptDataset load_dataset(const nlohmann::ordered_json& descriptor, const std::filesystem::path& base,
                                  std::uint64_t seed);

double default_learning_rate(const nlohmann::ordered_json& descriptor);

struct Prepared {
  data::ConceptDataset train, val, test;
  data::Standardizer standardizer;
  /// Digest of the unsplit dataset.
  std::string checksum;
};

/// Load, split with the run seed, standardize with train statistics.
Prepared prepare(const RunConfig& config, std::uint64_t seed);

/// Model spec for `family` sized to the prepared data.
models::ModelSpec spec_for(const RunConfig& config, models::Family family, const data::ConceptDataset& ds);
train::TrainConfig train_config_for(const RunConfig& config, std::uint64_t seed);

struct Run {
  models::Family family;
  std::uint64_t seed = 0;
  std::unique_ptr<models::Model> model;
  train::TrainHistory history;
  metrics::MetricsReport test;
};

Run train_one(const RunConfig& config, models::Family family, std::uint64_t seed, const Prepared& data);

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads; the first
/// exception (lowest index) is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

/// JSON object for one run: family, seed, epochs, best_epoch, test metrics.
nlohmann::ordered_json run_summary(const Run& run);

struct SweepOutcome {
  std::vector<Run> runs;
  interv::SweepResult result;
  /// Dataset digest per seed.
  std::vector<std::string> checksums;
};

/// Trains every (family, seed) pair and sweeps each seed's models on that
/// seed's test split; rows are ordered model, theta, p_int, seed.
SweepOutcome sweep_families(const RunConfig& config, const std::vector<models::Family>& families,
                            const std::vector<std::uint64_t>& seeds);

/// Rows of the lambda_p ablation: V-CEM trained per (lambda_p, seed).
struct AblationRow {
  double lambda_p = 0.0;
  std::uint64_t seed = 0;
  metrics::MetricsReport test;
};

struct AblationOutcome {
  std::vector<AblationRow> rows;
  /// Model names are "vcem@lambda_p=<value>".
  interv::SweepResult sweep;
  std::vector<std::string> checksums;
  std::string to_csv() const;
};

AblationOutcome ablate_lambda(const RunConfig& config, const std::vector<double>& lambdas,
                              const std::vector<std::uint64_t>& seeds);

// ---- single-sample queries ------------------------------------------------

struct SampleQuery {
  std::size_t index = 0;
  std::map<std::size_t, int> overrides;
  double theta = 0.0;
  std::uint64_t seed = 0;
};

struct SampleAnswer {
  std::vector<double> concept_probs_before, class_probs_before;
  std::vector<double> concept_probs_after, class_probs_after;
  /// Per-sample input noise used for this query (empty when theta is 0).
  bool noisy = false;
};

/// Blends sample `index` of `split` with noise keyed by (seed, index), then
/// predicts without and with the overrides.
SampleAnswer query_sample(const models::Model& model, const data::ConceptDataset& split, const SampleQuery& query);
nlohmann::ordered_json to_json(const SampleAnswer& answer);

/// Parses "0=1,3=0" into an override map.
std::map<std::size_t, int> parse_overrides(const std::string& text);
std::vector<double> parse_list(const std::string& text);

// ---- run directories --------------------------------------------------------

/// Recorded next to a saved model so later commands can rebuild its splits.
struct RunRecord {
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  models::Family family = models::Family::Vcem;
};

void write_run_record(const std::filesystem::path& model_dir, const RunRecord& record);
RunRecord read_run_record(const std::filesystem::path& model_dir);

struct LoadedModel {
  models::ModelBundle bundle;
  RunRecord record;
  /// Test split of the recorded run, standardized with the saved statistics.
  data::ConceptDataset test;
  std::string data_checksum;
};

LoadedModel load_model_dir(const std::filesystem::path& model_dir);

std::string sha256_file(const std::filesystem::path& path);

/// manifest.json: command, resolved config, seeds, version, data and output checksums.
void write_manifest(const std::filesystem::path& out_dir, const std::string& command,
                    const nlohmann::ordered_json& config, const std::vector<std::uint64_t>& seeds,
                    const std::map<std::string, std::string>& data_checksums,
                    const std::vector<std::string>& outputs);

void write_text(const std::filesystem::path& path, const std::string& text);

/// Reads the CSV written by metrics::write_embeddings_csv back into
/// (n x k*m embeddings, n x k probabilities, m).
struct EmbeddingTable {
  diff::Tensor embeddings, probs;
  std::size_t m = 0;
};
EmbeddingTable read_embeddings_csv(const std::filesystem::path& path);

}  // namespace vcem::lab
