#include <doctest.h>

#include <algorithm>
#include <json.hpp>
#include <numeric>
#include <random>

#include "support/fixtures.hpp"
#include "support/silhouette_oracle.hpp"
#include "vcem/metrics.hpp"

using namespace vcem;
using diff::Tensor;
using metrics::MetricsError;

namespace {

Tensor rows_to_tensor(const testing::Points& pts) {
  Tensor t({pts.size(), pts.front().size()});
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t z = 0; z < pts[i].size(); ++z) t.at(i, z) = pts[i][z];
  return t;
}

// Concept j's embedding block and thresholded labels as oracle input.
std::pair<testing::Points, std::vector<int>> concept_view(const Tensor& emb, const Tensor& probs, std::size_t j,
                                                          std::size_t m) {
  testing::Points pts(emb.rows(), std::vector<double>(m));
  std::vector<int> lab(emb.rows());
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    for (std::size_t z = 0; z < m; ++z) pts[i][z] = emb.at(i, j * m + z);
    lab[i] = probs.at(i, j) > 0.5 ? 1 : 0;
  }
  return {pts, lab};
}

}  // namespace

TEST_CASE("task accuracy counts argmax matches") {
  Tensor scores({3, 2}, {0.9, 0.1, 0.2, 0.8, 0.3, 0.7});
  std::vector<std::int32_t> y{0, 1, 0};
  CHECK(metrics::task_accuracy(scores, y) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  std::vector<std::int32_t> all{0, 1, 1};
  CHECK(metrics::task_accuracy(scores, all) == 1.0);
  CHECK_THROWS_AS(metrics::task_accuracy(Tensor{}, std::vector<std::int32_t>{}), MetricsError);
  CHECK_THROWS_AS(metrics::task_accuracy(scores, std::vector<std::int32_t>{0, 1}), MetricsError);
}

TEST_CASE("task accuracy is invariant to strictly monotone rescaling") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor s = testing::random_matrix(40, 5, seed, -3, 3);
    auto y = testing::random_labels(40, 5, seed + 100);
    Tensor t = s;
    for (double& v : t.values()) v = std::exp(2.0 * v) + 7.0;
    CHECK(metrics::task_accuracy(s, y) == metrics::task_accuracy(t, y));
  }
}

TEST_CASE("concept accuracy thresholds strictly above one half") {
  Tensor c = testing::random_binary(10, 3, 4);
  CHECK(metrics::concept_accuracy(c, c) == 1.0);
  Tensor comp = c;
  for (double& v : comp.values()) v = 1.0 - v;
  CHECK(metrics::concept_accuracy(comp, c) == 0.0);
  Tensor half({4, 2});
  for (double& v : half.values()) v = 0.5;
  Tensor ones({4, 2});
  for (double& v : ones.values()) v = 1.0;
  CHECK(metrics::concept_accuracy(half, ones) == 0.0);
  auto per = metrics::per_concept_accuracy(half, ones);
  CHECK(per == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(metrics::concept_accuracy(Tensor{}, Tensor{}), MetricsError);
  CHECK_THROWS_AS(metrics::concept_accuracy(half, Tensor({4, 3})), MetricsError);
}

TEST_CASE("per-concept accuracies average to the overall accuracy") {
  Tensor p = testing::random_matrix(37, 4, 9, 0, 1);
  Tensor c = testing::random_binary(37, 4, 10);
  auto per = metrics::per_concept_accuracy(p, c);
  CHECK(std::accumulate(per.begin(), per.end(), 0.0) / 4.0 == doctest::Approx(metrics::concept_accuracy(p, c)));
}

TEST_CASE("silhouette of the four-point line example") {
  Tensor emb({4, 1}, {0.0, 0.1, 1.0, 1.1});
  Tensor probs({4, 1}, {0.9, 0.8, 0.1, 0.2});
  auto r = metrics::crc(emb, probs, 1);
  // Hand computation: 0.5 * ((1.05-0.1)/1.05 + (0.95-0.1)/0.95).
  const double hand = 0.5 * (0.95 / 1.05 + 0.85 / 0.95);
  REQUIRE(r.crc);
  CHECK(*r.crc == doctest::Approx(hand).epsilon(1e-12));
  CHECK(*r.crc == doctest::Approx(0.8997).epsilon(1e-4));
  CHECK(r.skipped.empty());
}

TEST_CASE("crc matches a brute-force silhouette on random instances") {
  std::mt19937_64 g(2024);
  for (int inst = 0; inst < 30; ++inst) {
    const std::size_t n = 2 + g() % 99, k = 1 + g() % 4, m = 1 + g() % 5;
    Tensor emb = testing::random_matrix(n, k * m, 1000 + inst, -2, 2);
    Tensor probs = testing::random_matrix(n, k, 5000 + inst, 0, 1);
    auto r = metrics::crc(emb, probs, m);
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t j = 0; j < k; ++j) {
      auto [pts, lab] = concept_view(emb, probs, j, m);
      auto want = testing::brute_force_two_cluster(pts, lab);
      REQUIRE(want.has_value() == r.per_concept[j].has_value());
      if (want) {
        CHECK(std::fabs(*want - *r.per_concept[j]) <= 1e-9);
        total += *want;
        ++used;
      }
    }
    REQUIRE(r.crc.has_value() == (used > 0));
    if (used) CHECK(std::fabs(*r.crc - total / used) <= 1e-9);
  }
}

TEST_CASE("identically distributed clusters score near zero") {
  std::mt19937_64 g(7);
  std::normal_distribution<double> nd;
  Tensor emb({200, 4});
  Tensor probs({200, 1});
  for (double& v : emb.values()) v = nd(g);
  for (std::size_t i = 0; i < 200; ++i) probs.at(i, 0) = i % 2 ? 0.9 : 0.1;
  auto r = metrics::crc(emb, probs, 4);
  REQUIRE(r.crc);
  CHECK(std::fabs(*r.crc) < 0.15);
}

TEST_CASE("one-sided concepts are skipped") {
  Tensor emb = testing::random_matrix(6, 4, 3);
  Tensor probs({6, 2});
  for (std::size_t i = 0; i < 6; ++i) {
    probs.at(i, 0) = 0.9;
    probs.at(i, 1) = i < 3 ? 0.9 : 0.1;
  }
  auto r = metrics::crc(emb, probs, 2);
  CHECK(r.skipped == std::vector<std::size_t>{0});
  CHECK_FALSE(r.per_concept[0]);
  REQUIRE(r.per_concept[1]);
  CHECK(*r.crc == *r.per_concept[1]);

  for (double& v : probs.values()) v = 0.2;
  auto none = metrics::crc(emb, probs, 2);
  CHECK_FALSE(none.crc);
  CHECK(none.skipped.size() == 2);
}

TEST_CASE("crc input validation") {
  CHECK_THROWS_AS(metrics::crc(Tensor({1, 2}), Tensor({1, 1}), 2), MetricsError);
  CHECK_THROWS_AS(metrics::crc(Tensor({3, 5}), Tensor({3, 2}), 2), MetricsError);
  CHECK_THROWS_AS(metrics::crc(Tensor({3, 4}), Tensor({3, 2}), 0), MetricsError);
}

TEST_CASE("singleton cluster members contribute zero") {
  testing::Points pts{{0.0}, {0.2}, {5.0}};
  std::vector<int> lab{1, 1, 0};
  auto got = metrics::two_cluster_silhouette(rows_to_tensor(pts), {true, true, false});
  REQUIRE(got);
  // Positives: (5.0-0.2)/5.0 and (4.8-0.2)/4.8; the negative singleton scores 0.
  const double hand = 0.5 * (0.5 * (4.8 / 5.0 + 4.6 / 4.8) + 0.0);
  CHECK(*got == doctest::Approx(hand).epsilon(1e-12));
  CHECK(*got == doctest::Approx(*testing::brute_force_two_cluster(pts, lab)).epsilon(1e-12));
}

TEST_CASE("property: crc is invariant to sample and concept permutations") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t n = 30, k = 3, m = 2;
    Tensor emb = testing::random_matrix(n, k * m, seed);
    Tensor probs = testing::random_matrix(n, k, seed + 50, 0, 1);
    auto base = metrics::crc(emb, probs, m);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), std::mt19937_64(seed));
    std::vector<std::size_t> cperm{2, 0, 1};
    Tensor e2({n, k * m}), p2({n, k});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        p2.at(i, j) = probs.at(order[i], cperm[j]);
        for (std::size_t z = 0; z < m; ++z) e2.at(i, j * m + z) = emb.at(order[i], cperm[j] * m + z);
      }
    auto perm = metrics::crc(e2, p2, m);
    for (std::size_t j = 0; j < k; ++j)
      CHECK(*perm.per_concept[j] == doctest::Approx(*base.per_concept[cperm[j]]).epsilon(1e-12));
    CHECK(*perm.crc == doctest::Approx(*base.crc).epsilon(1e-12));
  }
}

TEST_CASE("property: translating one concept's embeddings leaves its silhouette unchanged") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t n = 25, k = 2, m = 3;
    Tensor emb = testing::random_matrix(n, k * m, seed);
    Tensor probs = testing::random_matrix(n, k, seed + 7, 0, 1);
    auto base = metrics::crc(emb, probs, m);
    Tensor shifted = emb;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t z = 0; z < m; ++z) shifted.at(i, m + z) += 3.5 - static_cast<double>(z);
    auto moved = metrics::crc(shifted, probs, m);
    CHECK(*moved.per_concept[1] == doctest::Approx(*base.per_concept[1]).epsilon(1e-9));
    CHECK(*moved.per_concept[0] == *base.per_concept[0]);
  }
}

TEST_CASE("property: pushing the clusters apart never lowers the silhouette") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t n = 40, m = 3;
    Tensor spread = testing::random_matrix(n, m, seed, -0.5, 0.5);
    Tensor probs({n, 1});
    for (std::size_t i = 0; i < n; ++i) probs.at(i, 0) = i < n / 2 ? 0.8 : 0.3;
    double prev = -2.0;
    const std::vector<double> offset{2.0, -1.5, 1.0 + 0.1 * static_cast<double>(seed)};
    for (double lambda : {1.0, 1.25, 1.5, 2.0, 4.0, 8.0}) {
      Tensor emb = spread;
      for (std::size_t i = 0; i < n / 2; ++i)
        for (std::size_t z = 0; z < m; ++z) emb.at(i, z) += lambda * offset[z];
      const double s = *metrics::crc(emb, probs, m).crc;
      CHECK(s >= prev - 1e-12);
      CHECK(s >= -1.0);
      CHECK(s <= 1.0);
      prev = s;
    }
  }
}

TEST_CASE("report json omits absent fields") {
  metrics::MetricsReport rep;
  rep.samples = 3;
  rep.task_accuracy = 0.5;
  auto j = nlohmann::json::parse(metrics::to_json(rep));
  CHECK(j["samples"] == 3);
  CHECK_FALSE(j.contains("crc"));
  CHECK_FALSE(j.contains("concept_accuracy"));
  rep.concept_accuracy = 0.75;
  rep.per_concept_accuracy = {0.5, 1.0};
  rep.crc = metrics::CrcResult{0.4, {0.4, std::nullopt}, {1}};
  j = nlohmann::json::parse(metrics::to_json(rep));
  CHECK(j["crc"] == 0.4);
  CHECK(j["per_concept_silhouette"][1].is_null());
  CHECK(j["skipped_concepts"][0] == 1);
}
