#include "vcem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

namespace vcem::metrics {

using diff::Tensor;

namespace {

void check_aligned(const Tensor& probs, const Tensor& c) {
  if (probs.empty() || c.empty()) throw MetricsError("concept accuracy of an empty set is undefined");
  if (probs.shape() != c.shape())
    throw MetricsError("concept predictions " + diff::shape_to_string(probs.shape()) + " and labels " +
                       diff::shape_to_string(c.shape()) + " are not aligned");
}

double l1(const Tensor& pts, std::size_t a, std::size_t b) {
  double s = 0.0;
  for (std::size_t z = 0; z < pts.cols(); ++z) s += std::abs(pts.at(a, z) - pts.at(b, z));
  return s;
}

}  // namespace

double task_accuracy(const Tensor& scores, std::span<const std::int32_t> y) {
  if (y.empty()) throw MetricsError("task accuracy of an empty set is undefined");
  if (scores.rows() != y.size()) throw MetricsError("scores and labels have different lengths");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < scores.cols(); ++c)
      if (scores.at(i, c) > scores.at(i, best)) best = c;
    hits += static_cast<std::int32_t>(best) == y[i];
  }
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

double concept_accuracy(const Tensor& probs, const Tensor& c) {
  check_aligned(probs, c);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) hits += (probs[i] > 0.5) == (c[i] > 0.5);
  return static_cast<double>(hits) / static_cast<double>(probs.size());
}

std::vector<double> per_concept_accuracy(const Tensor& probs, const Tensor& c) {
  check_aligned(probs, c);
  std::vector<double> acc(probs.cols(), 0.0);
  for (std::size_t i = 0; i < probs.rows(); ++i)
    for (std::size_t j = 0; j < probs.cols(); ++j) acc[j] += (probs.at(i, j) > 0.5) == (c.at(i, j) > 0.5);
  for (double& a : acc) a /= static_cast<double>(probs.rows());
  return acc;
}

std::optional<double> two_cluster_silhouette(const Tensor& pts, const std::vector<bool>& positive) {
  const std::size_t n = pts.rows();
  std::size_t n_pos = 0;
  for (bool p : positive) n_pos += p;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  double sum_pos = 0.0, sum_neg = 0.0;
  std::vector<double> same(n), other(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0, o = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      (positive[j] == positive[i] ? s : o) += l1(pts, i, j);
    }
    const std::size_t own = positive[i] ? n_pos : n_neg;
    const std::size_t rest = positive[i] ? n_neg : n_pos;
    double sil = 0.0;  // singleton clusters score 0
    if (own > 1) {
      const double a = s / static_cast<double>(own - 1);
      const double b = o / static_cast<double>(rest);
      const double denom = std::max(a, b);
      sil = denom > 0.0 ? (b - a) / denom : 0.0;
    }
    (positive[i] ? sum_pos : sum_neg) += sil;
  }
  return 0.5 * (sum_pos / static_cast<double>(n_pos) + sum_neg / static_cast<double>(n_neg));
}

CrcResult crc(const Tensor& embeddings, const Tensor& probs, std::size_t m) {
  if (probs.rank() != 2 || embeddings.rank() != 2) throw MetricsError("crc: expected matrices");
  const std::size_t n = probs.rows(), k = probs.cols();
  if (n < 2) throw MetricsError("crc needs at least two samples");
  if (m == 0 || embeddings.rows() != n || embeddings.cols() != k * m)
    throw MetricsError("crc: embeddings " + diff::shape_to_string(embeddings.shape()) + " do not match " +
                       std::to_string(n) + " samples x " + std::to_string(k) + " concepts x m=" + std::to_string(m));
  CrcResult r;
  r.per_concept.resize(k);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t j = 0; j < k; ++j) {
    Tensor block({n, m});
    std::vector<bool> positive(n);
    for (std::size_t i = 0; i < n; ++i) {
      positive[i] = probs.at(i, j) > 0.5;
      for (std::size_t z = 0; z < m; ++z) block.at(i, z) = embeddings.at(i, j * m + z);
    }
    r.per_concept[j] = two_cluster_silhouette(block, positive);
    if (r.per_concept[j]) {
      total += *r.per_concept[j];
      ++used;
    } else {
      r.skipped.push_back(j);
    }
  }
  if (used) r.crc = total / static_cast<double>(used);
  return r;
}

std::string to_json(const MetricsReport& rep, int indent) {
  nlohmann::ordered_json j;
  j["samples"] = rep.samples;
  j["task_accuracy"] = rep.task_accuracy;
  if (rep.concept_accuracy) {
    j["concept_accuracy"] = *rep.concept_accuracy;
    j["per_concept_accuracy"] = rep.per_concept_accuracy;
  }
  if (rep.crc) {
    j["crc"] = rep.crc->crc ? nlohmann::ordered_json(*rep.crc->crc) : nlohmann::ordered_json(nullptr);
    auto& s = j["per_concept_silhouette"] = nlohmann::ordered_json::array();
    for (const auto& v : rep.crc->per_concept) s.push_back(v ? nlohmann::ordered_json(*v) : nullptr);
    j["skipped_concepts"] = rep.crc->skipped;
  }
  if (rep.total_loss) {
    auto& l = j["loss"];
    if (rep.concept_loss) l["concept"] = *rep.concept_loss;
    l["task"] = rep.task_loss.value_or(0.0);
    if (rep.prior_loss) l["prior"] = *rep.prior_loss;
    l["total"] = *rep.total_loss;
  }
  return j.dump(indent);
}

void write_embeddings_csv(const std::filesystem::path& path, const Tensor& embeddings, const Tensor& probs,
                          std::size_t m) {
  const std::size_t n = probs.rows(), k = probs.cols();
  if (embeddings.rows() != n || embeddings.cols() != k * m) throw MetricsError("embeddings do not match predictions");
  std::ofstream f(path);
  if (!f) throw MetricsError("cannot write " + path.string());
  f << "sample,concept";
  for (std::size_t z = 0; z < m; ++z) f << ",e" << z;
  f << ",predicted\n";
  f.precision(17);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      f << i << ',' << j;
      for (std::size_t z = 0; z < m; ++z) f << ',' << embeddings.at(i, j * m + z);
      f << ',' << (probs.at(i, j) > 0.5 ? 1 : 0) << '\n';
    }
}

}  // namespace vcem::metrics
