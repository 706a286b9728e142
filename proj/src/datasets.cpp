#include <algorithm>
#include <cmath>
#include <numeric>

#include "vcem/datasets.hpp"
#include "vcem/rng.hpp"

namespace vcem::data {

ConceptDataset::ConceptDataset(std::size_t d, std::size_t k, std::size_t n_classes,
                               std::vector<double> features, std::vector<std::uint8_t> concepts,
                               std::vector<std::int32_t> tasks, std::vector<std::string> concept_names,
                               std::vector<std::string> class_names)
    : d_(d),
      k_(k),
      n_classes_(n_classes),
      features_(std::move(features)),
      concepts_(std::move(concepts)),
      tasks_(std::move(tasks)),
      concept_names_(std::move(concept_names)),
      class_names_(std::move(class_names)) {
  const std::size_t n = tasks_.size();
  if (d_ == 0 || k_ == 0 || n_classes_ == 0) throw DatasetError("dataset dims d, k, N must be positive");
  if (features_.size() != n * d_)
    throw DatasetError("features hold " + std::to_string(features_.size()) + " values, expected n*d = " +
                       std::to_string(n * d_));
  if (concepts_.size() != n * k_)
    throw DatasetError("concepts hold " + std::to_string(concepts_.size()) + " values, expected n*k = " +
                       std::to_string(n * k_));
  for (std::uint8_t c : concepts_)
    if (c > 1) throw DatasetError("concept labels must be 0 or 1");
  for (std::int32_t y : tasks_)
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes_)
      throw DatasetError("task label " + std::to_string(y) + " outside 0.." + std::to_string(n_classes_ - 1));
  for (double v : features_)
    if (!std::isfinite(v)) throw DatasetError("features must be finite");
  if (concept_names_.empty())
    for (std::size_t j = 0; j < k_; ++j) concept_names_.push_back("concept_" + std::to_string(j));
  if (class_names_.empty())
    for (std::size_t y = 0; y < n_classes_; ++y) class_names_.push_back("class_" + std::to_string(y));
  if (concept_names_.size() != k_) throw DatasetError("concept_names must have k entries");
  if (class_names_.size() != n_classes_) throw DatasetError("class_names must have N entries");
}

ConceptDataset ConceptDataset::subset(std::span<const std::size_t> indices) const {
  std::vector<double> f;
  std::vector<std::uint8_t> c;
  std::vector<std::int32_t> y;
  f.reserve(indices.size() * d_);
  c.reserve(indices.size() * k_);
  y.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw DatasetError("subset index " + std::to_string(i) + " out of range");
    auto fr = feature_row(i);
    f.insert(f.end(), fr.begin(), fr.end());
    auto cr = concept_row(i);
    c.insert(c.end(), cr.begin(), cr.end());
    y.push_back(tasks_[i]);
  }
  return ConceptDataset(d_, k_, n_classes_, std::move(f), std::move(c), std::move(y), concept_names_, class_names_);
}

ConceptDataset ConceptDataset::with_features(std::vector<double> features) const {
  return ConceptDataset(d_, k_, n_classes_, std::move(features), concepts_, tasks_, concept_names_, class_names_);
}

diff::Tensor ConceptDataset::feature_tensor(std::span<const std::size_t> indices) const {
  if (indices.empty()) return diff::Tensor({size(), d_}, features_);
  std::vector<double> f;
  f.reserve(indices.size() * d_);
  for (std::size_t i : indices) {
    auto fr = feature_row(i);
    f.insert(f.end(), fr.begin(), fr.end());
  }
  return diff::Tensor({indices.size(), d_}, std::move(f));
}

diff::Tensor ConceptDataset::concept_tensor(std::span<const std::size_t> indices) const {
  const std::size_t rows = indices.empty() ? size() : indices.size();
  diff::Tensor t({rows, k_});
  for (std::size_t r = 0; r < rows; ++r) {
    auto cr = concept_row(indices.empty() ? r : indices[r]);
    for (std::size_t j = 0; j < k_; ++j) t.at(r, j) = cr[j];
  }
  return t;
}

std::vector<std::int32_t> ConceptDataset::task_vector(std::span<const std::size_t> indices) const {
  if (indices.empty()) return tasks_;
  std::vector<std::int32_t> y;
  y.reserve(indices.size());
  for (std::size_t i : indices) y.push_back(tasks_[i]);
  return y;
}

std::vector<ConceptDataset> split(const ConceptDataset& ds, const std::vector<double>& fractions,
                                  std::uint64_t seed) {
  if (fractions.empty()) throw DatasetError("split: no fractions given");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw DatasetError("split: fractions must be positive");
    total += f;
  }
  if (total > 1.0 + 1e-9) throw DatasetError("split: fractions sum to more than 1");

  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::substream(seed, "split");
  std::shuffle(order.begin(), order.end(), rng.engine());

  std::vector<std::size_t> sizes;
  std::size_t used = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    std::size_t s;
    if (i + 1 == fractions.size() && std::abs(total - 1.0) < 1e-9)
      s = n - used;
    else
      s = static_cast<std::size_t>(std::llround(fractions[i] * static_cast<double>(n)));
    s = std::min(s, n - used);
    if (s == 0) throw DatasetError("split: part " + std::to_string(i) + " would be empty");
    sizes.push_back(s);
    used += s;
  }

  std::vector<ConceptDataset> parts;
  std::size_t offset = 0;
  for (std::size_t s : sizes) {
    std::vector<std::size_t> idx(order.begin() + static_cast<long>(offset),
                                 order.begin() + static_cast<long>(offset + s));
    std::sort(idx.begin(), idx.end());
    parts.push_back(ds.subset(idx));
    offset += s;
  }
  return parts;
}

Splits split3(const ConceptDataset& ds, double train, double val, double test, std::uint64_t seed) {
  auto parts = split(ds, {train, val, test}, seed);
  return Splits{std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

Standardizer Standardizer::fit(const ConceptDataset& ds) {
  if (ds.size() == 0) throw DatasetError("standardizer: cannot fit on an empty dataset");
  const std::size_t d = ds.feature_dim();
  const double n = static_cast<double>(ds.size());
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto row = ds.feature_row(i);
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += row[j];
  }
  for (double& m : s.mean) m /= n;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto row = ds.feature_row(i);
    for (std::size_t j = 0; j < d; ++j) s.scale[j] += (row[j] - s.mean[j]) * (row[j] - s.mean[j]);
  }
  for (double& v : s.scale) {
    v = std::sqrt(v / n);
    if (v < 1e-8) v = 1.0;  // constant columns (e.g. MNIST borders) pass through centred
  }
  return s;
}

void Standardizer::apply_in_place(std::span<double> features) const {
  const std::size_t d = mean.size();
  if (d == 0 || features.size() % d != 0) throw DatasetError("standardizer: width mismatch");
  for (std::size_t i = 0; i < features.size(); ++i) features[i] = (features[i] - mean[i % d]) / scale[i % d];
}

ConceptDataset Standardizer::apply(const ConceptDataset& ds) const {
  if (ds.feature_dim() != mean.size()) throw DatasetError("standardizer: feature width mismatch");
  std::vector<double> f(ds.features().begin(), ds.features().end());
  if (!f.empty()) apply_in_place(f);
  return ds.with_features(std::move(f));
}

}  // namespace vcem::data
