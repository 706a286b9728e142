#include "vcem/datasets.hpp"
#include "vcem/rng.hpp"

namespace vcem::data {

void SyntheticSpec::validate() const {
  if (k == 0) throw DatasetError("synthetic: k must be positive");
  if (d < k) throw DatasetError("synthetic: d must be at least k");
  if (!(noise >= 0.0 && noise < 1.0)) throw DatasetError("synthetic: noise must lie in [0,1)");
  if (rule == TaskRule::TupleClass && (k >= 63 || (std::size_t{1} << k) > max_classes))
    throw DatasetError("synthetic: tuple-class needs 2^" + std::to_string(k) + " classes, limit is " +
                       std::to_string(max_classes));
}

TaskRule parse_task_rule(const std::string& name) {
  if (name == "tuple-class") return TaskRule::TupleClass;
  if (name == "parity") return TaskRule::Parity;
  throw DatasetError("unknown task rule '" + name + "' (expected tuple-class or parity)");
}

std::string to_string(TaskRule rule) { return rule == TaskRule::TupleClass ? "tuple-class" : "parity"; }

ConceptDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed, std::size_t n) {
  spec.validate();
  if (n == 0) throw DatasetError("synthetic: n must be positive");
  const std::size_t d = spec.d, k = spec.k;

  Rng map_rng = Rng::substream(seed, "synthetic-map");
  std::vector<double> map(k * d);
  for (double& a : map) a = map_rng.normal();

  Rng concept_rng = Rng::substream(seed, "synthetic-concepts");
  Rng noise_rng = Rng::substream(seed, "synthetic-noise");
  std::vector<double> features(n * d, 0.0);
  std::vector<std::uint8_t> concepts(n * k);
  std::vector<std::int32_t> tasks(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::int32_t code = 0, ones = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const std::uint8_t c = concept_rng.uniform() < 0.5 ? 1 : 0;
      concepts[i * k + j] = c;
      code |= std::int32_t{c} << j;  // first concept is the least significant bit
      ones += c;
      if (c)
        for (std::size_t z = 0; z < d; ++z) features[i * d + z] += map[j * d + z];
    }
    if (spec.noise > 0.0)
      for (std::size_t z = 0; z < d; ++z) features[i * d + z] += spec.noise * noise_rng.normal();
    tasks[i] = spec.rule == TaskRule::TupleClass ? code : ones % 2;
  }

  const std::size_t n_classes = spec.rule == TaskRule::TupleClass ? (std::size_t{1} << k) : 2;
  std::vector<std::string> class_names;
  if (spec.rule == TaskRule::Parity) class_names = {"even", "odd"};
  return ConceptDataset(d, k, n_classes, std::move(features), std::move(concepts), std::move(tasks), {},
                        std::move(class_names));
}

}  // namespace vcem::data
