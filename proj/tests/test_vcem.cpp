#include <doctest.h>

#include <cmath>
#include <random>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "vcem/ops.hpp"
#include "vcem/vcem.hpp"

using namespace vcem;
using namespace vcem::models;
using diff::Tensor;
using testing::random_binary;
using testing::random_labels;
using testing::random_matrix;
using testing::tiny_spec;
using vi::VcemModel;

namespace {

std::unique_ptr<VcemModel> make_vcem(ModelSpec spec, std::uint64_t seed) {
  auto m = create_model(spec, seed);
  return std::unique_ptr<VcemModel>(static_cast<VcemModel*>(m.release()));
}

// log N(x; mu, diag(s^2)) summed over the entries.
double log_normal(const std::vector<double>& x, const std::vector<double>& mu, const std::vector<double>& s) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = (x[i] - mu[i]) / s[i];
    acc += -0.5 * z * z - std::log(s[i]) - 0.5 * std::log(2 * M_PI);
  }
  return acc;
}

}  // namespace

TEST_CASE("zero half-log-variance head gives sigma exactly 1") {
  auto model = make_vcem(tiny_spec(Family::Vcem), 1);
  for (const char* n : {"post.ws", "post.vs", "post.bs"}) model->params().at(n).value.fill(0.0);
  auto p = model->posterior_params(random_matrix(4, 6, 2), random_binary(4, 2, 3));
  for (double s : p.sigma.values()) CHECK(s == 1.0);
}

TEST_CASE("sigma is positive and c_cond is validated") {
  auto model = make_vcem(tiny_spec(Family::Vcem), 2);
  auto p = model->posterior_params(random_matrix(20, 6, 4, -5, 5), random_matrix(20, 2, 5, 0, 1));
  for (double s : p.sigma.values()) CHECK(s > 0.0);
  CHECK_THROWS_AS(model->posterior_params(random_matrix(2, 6, 0), random_matrix(2, 2, 0, 1.5, 2)), ModelError);
  CHECK_THROWS_AS(model->posterior_params(random_matrix(2, 5, 0), random_binary(2, 2, 0)), diff::ShapeError);
}

TEST_CASE("prior-matching gradient w.r.t. posterior heads matches finite differences") {
  auto model = make_vcem(tiny_spec(Family::Vcem), 3);
  testing::randomize(model->params(), 4);
  const Tensor x = random_matrix(5, 6, 6);
  const Tensor c = random_binary(5, 2, 7);
  auto r = testing::check_gradients(model->params(), [&](diff::Tape& tape, diff::ParameterSet&) {
    ForwardOptions opts;
    opts.c_true = &c;
    auto f = model->forward(tape, x, opts);
    return vi::kl_prior_matching(f.posterior_mean, f.posterior_log_sigma, f.prior_selected, 5);
  });
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("reparameterised sampling") {
  vi::PosteriorParams p{random_matrix(1, 6, 8), random_matrix(1, 6, 9, 0.5, 2)};
  CHECK(vi::reparam_sample(p, Tensor({1, 6}, 0.0)) == p.mean);
  vi::PosteriorParams tiny{p.mean, Tensor({1, 6}, 1e-12)};
  auto s = vi::reparam_sample(tiny, random_matrix(1, 6, 10, -3, 3));
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(s[i] - p.mean[i]) < 1e-9);

  const std::size_t draws = 100000;
  std::vector<double> total(6, 0.0);
  std::mt19937_64 g(11);
  std::normal_distribution<double> n01;
  Tensor eps({1, 6});
  for (std::size_t t = 0; t < draws; ++t) {
    for (double& e : eps.values()) e = n01(g);
    auto c = vi::reparam_sample(p, eps);
    for (std::size_t i = 0; i < 6; ++i) total[i] += c[i];
  }
  for (std::size_t i = 0; i < 6; ++i) {
    const double se = p.sigma[i] / std::sqrt(static_cast<double>(draws));
    CHECK(std::abs(total[i] / draws - p.mean[i]) < 3 * se);
  }

  diff::Tape tape;
  diff::ParameterSet ps;
  ps.add("mu", random_matrix(2, 3, 12));
  ps.add("ls", random_matrix(2, 3, 13));
  const Tensor e = random_matrix(2, 3, 14);
  auto r = testing::check_gradients(ps, [&](diff::Tape& t, diff::ParameterSet& q) {
    return diff::sum(diff::mul(vi::reparam_sample(t.parameter(q[0]), t.parameter(q[1]), e), e));
  });
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("prior_mean reads the table") {
  auto model = make_vcem(tiny_spec(Family::Vcem), 4);
  auto table = model->prior_table();
  auto pos = model->prior_mean(1, 1), neg = model->prior_mean(1, 0);
  for (std::size_t z = 0; z < 3; ++z) {
    CHECK(pos[z] == table.pos.at(1, z));
    CHECK(neg[z] == table.neg.at(1, z));
  }
  CHECK_THROWS_AS(model->prior_mean(2, 1), ModelError);
}

TEST_CASE("closed-form KL examples") {
  vi::PriorTable prior{Tensor({1, 2}, 0.0), Tensor({1, 2}, 0.0)};
  prior.pos.at(0, 0) = 0.3;
  CHECK(vi::kl_prior_matching({Tensor::matrix(1, 2, {0.3, 0.0}), Tensor({1, 2}, 1.0)}, {1}, prior) == 0.0);
  CHECK(vi::kl_prior_matching({Tensor::matrix(1, 2, {1.0, 0.0}), Tensor({1, 2}, 1.0)}, {0}, prior) == 0.5);
  CHECK_THROWS_AS(vi::kl_prior_matching({Tensor({1, 2}, 0.0), Tensor({1, 2}, 0.0)}, {0}, prior), ModelError);
}

TEST_CASE("KL is non-negative and vanishes only at the prior") {
  std::mt19937_64 g(15);
  vi::PriorTable prior{random_matrix(3, 4, 16), random_matrix(3, 4, 17)};
  std::vector<std::uint8_t> c{1, 0, 1};
  vi::PosteriorParams at{Tensor({1, 12}), Tensor({1, 12}, 1.0)};
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t z = 0; z < 4; ++z) at.mean[j * 4 + z] = (c[j] ? prior.pos : prior.neg).at(j, z);
  CHECK(vi::kl_prior_matching(at, c, prior) == 0.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = at;
    const std::size_t i = g() % 12;
    if (trial % 2) p.mean[i] += 1e-3 * (1 + trial);
    else p.sigma[i] *= 1.0 + 1e-3 * (1 + trial);
    CHECK(vi::kl_prior_matching(p, c, prior) > 0.0);
    vi::PosteriorParams r{random_matrix(1, 12, 100 + trial, -3, 3), random_matrix(1, 12, 200 + trial, 0.1, 3)};
    CHECK(vi::kl_prior_matching(r, c, prior) >= 0.0);
  }
}

TEST_CASE("closed-form KL matches a Monte Carlo estimate") {
  const std::size_t m = 8, samples = 1000000;
  vi::PriorTable prior{random_matrix(1, m, 18, -1, 1), random_matrix(1, m, 19, -1, 1)};
  vi::PosteriorParams q{random_matrix(1, m, 20, -1, 1), random_matrix(1, m, 21, 0.5, 2)};
  std::vector<double> mu(q.mean.values().begin(), q.mean.values().end());
  std::vector<double> s(q.sigma.values().begin(), q.sigma.values().end());
  std::vector<double> pm(prior.pos.values().begin(), prior.pos.values().end());
  std::vector<double> ones(m, 1.0), x(m);
  std::mt19937_64 g(22);
  std::normal_distribution<double> n01;
  double acc = 0.0;
  for (std::size_t t = 0; t < samples; ++t) {
    for (std::size_t i = 0; i < m; ++i) x[i] = mu[i] + s[i] * n01(g);
    acc += log_normal(x, mu, s) - log_normal(x, pm, ones);
  }
  const double mc = acc / samples;
  const double closed = vi::kl_prior_matching(q, {1}, prior);
  CHECK(std::abs(closed - mc) / closed < 1e-2);
}

TEST_CASE("randint replacement") {
  vi::PriorTable prior{random_matrix(2, 3, 23), random_matrix(2, 3, 24)};
  const Tensor emb = random_matrix(50, 6, 25);
  const Tensor c = random_binary(50, 2, 26);
  Rng rng(1);
  auto none = vi::randint_apply(emb, c, 0.0, rng, prior);
  CHECK(none.embeddings == emb);
  auto all = vi::randint_apply(emb, c, 1.0, rng, prior);
  for (std::size_t b = 0; b < 50; ++b)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t z = 0; z < 3; ++z)
        CHECK(all.embeddings.at(b, j * 3 + z) == (c.at(b, j) == 1.0 ? prior.pos : prior.neg).at(j, z));

  const Tensor big_emb({5000, 6});
  const Tensor big_c = random_binary(5000, 2, 27);
  auto quarter = vi::randint_apply(big_emb, big_c, 0.25, rng, prior);
  double replaced = 0.0;
  for (double v : quarter.replaced.values()) replaced += v;
  CHECK(std::abs(replaced / 10000.0 - 0.25) <= 0.02);
  CHECK_THROWS_AS(vi::randint_apply(emb, c, 1.5, rng, prior), ModelError);
}

TEST_CASE("V-CEM interventions use the prior means") {
  auto model = make_vcem(tiny_spec(Family::Vcem), 5);
  const Tensor x = random_matrix(30, 6, 28, -3, 3);
  auto one = Overrides::broadcast({{1, 1}}, 30, 2);
  auto p = model->predict(x, &one);
  auto mu = model->prior_mean(1, 1);
  for (std::size_t b = 0; b < 30; ++b)
    for (std::size_t z = 0; z < 3; ++z) CHECK(p.embeddings.at(b, 3 + z) == mu[z]);

  auto both = Overrides::broadcast({{0, 0}, {1, 1}}, 30, 2);
  auto full = model->predict(x, &both);
  for (std::size_t b = 1; b < 30; ++b)
    for (std::size_t c = 0; c < 2; ++c) CHECK(full.class_probs.at(b, c) == full.class_probs.at(0, c));

  CHECK(model->predict(x).class_probs == model->predict(x).class_probs);
  CHECK_THROWS(model->forward(*std::make_unique<diff::Tape>(), x, ForwardOptions{Mode::Train}));
}

TEST_CASE("V-CEM loss terms") {
  auto spec = tiny_spec(Family::Vcem, 6, 2, 3);
  const Tensor x = random_matrix(8, 6, 29);
  const Tensor c = random_binary(8, 2, 30);
  const auto y = random_labels(8, 3, 31);

  SUBCASE("breakdown identity and scalar re-computation") {
    auto model = make_vcem(spec, 6);
    diff::Tape tape;
    Rng rng(3);
    ForwardOptions opts{Mode::Train, &c, nullptr, &rng};
    auto f = model->forward(tape, x, opts);
    auto l = model->loss(f, c, y);
    CHECK(l.prior_loss >= 0.0);
    CHECK(std::abs(l.total - (l.concept_loss / 2 + 0.1 * l.task_loss + 0.05 * l.prior_loss)) < 1e-9);

    const Tensor &z = f.concept_logits.value(), &logits = f.class_logits.value();
    const Tensor &mu = f.posterior_mean.value(), &ls = f.posterior_log_sigma.value(), &pr = f.prior_selected.value();
    double lc = 0, lt = 0, lp = 0;
    for (std::size_t b = 0; b < 8; ++b) {
      for (std::size_t j = 0; j < 2; ++j) {
        const double p = 1.0 / (1.0 + std::exp(-z.at(b, j)));
        lc -= c.at(b, j) * std::log(p) + (1 - c.at(b, j)) * std::log(1 - p);
      }
      double norm = 0;
      for (std::size_t k = 0; k < 3; ++k) norm += std::exp(logits.at(b, k));
      lt -= logits.at(b, y[b]) - std::log(norm);
      for (std::size_t i = 0; i < 6; ++i) {
        const double s2 = std::exp(2 * ls.at(b, i));
        lp += 0.5 * ((mu.at(b, i) - pr.at(b, i)) * (mu.at(b, i) - pr.at(b, i)) + s2 - 1 - std::log(s2));
      }
    }
    lc /= 8;
    lt /= 8;
    lp /= 8;
    CHECK(std::abs(l.concept_loss - lc) < 1e-6);
    CHECK(std::abs(l.task_loss - lt) < 1e-6);
    CHECK(std::abs(l.prior_loss - lp) < 1e-6);
    CHECK(std::abs(l.total - (lc / 2 + 0.1 * lt + 0.05 * lp)) < 1e-6);
  }
  SUBCASE("lambda_p = 0 drops the prior term") {
    spec.lambda_p = 0.0;
    auto model = make_vcem(spec, 6);
    diff::Tape tape;
    ForwardOptions opts{Mode::Infer, &c};
    auto l = model->loss(model->forward(tape, x, opts), c, y);
    CHECK(l.total == l.concept_loss / 2 + 0.1 * l.task_loss);
  }
  SUBCASE("perfect predictions drive every term to zero") {
    auto model = make_vcem(spec, 6);
    auto& ps = model->params();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i].value.fill(0.0);
    // Concept logits +-40 from the bias alone, task logits from the head bias.
    const Tensor c1 = Tensor::matrix(1, 2, {1, 0});
    ps.at("enc.bc").value = Tensor::matrix(1, 2, {40, -40});
    ps.at("head.b2").value = Tensor::matrix(1, 3, {0, 40, 0});
    // Prior means equal the posterior mean (zero) and sigma = exp(0) = 1.
    diff::Tape tape;
    ForwardOptions opts{Mode::Infer, &c1};
    auto l = model->loss(model->forward(tape, random_matrix(1, 6, 0), opts), c1, {1});
    CHECK(l.concept_loss < 1e-15);
    CHECK(l.task_loss < 1e-15);
    CHECK(l.prior_loss == 0.0);
  }
}

TEST_CASE("total V-CEM loss gradient on a tiny instance (d=6, k=2, m=3, N=2)") {
  auto model = make_vcem(tiny_spec(Family::Vcem, 6, 2, 2, 4, 3), 7);
  testing::randomize(model->params(), 8);
  const Tensor x = random_matrix(6, 6, 32);
  const Tensor c = random_binary(6, 2, 33);
  const auto y = random_labels(6, 2, 34);
  const Tensor mask = random_binary(6, 2, 35);
  Overrides randint{mask, c};
  auto r = testing::check_gradients(model->params(), [&](diff::Tape& tape, diff::ParameterSet&) {
    Rng rng(5);
    ForwardOptions opts{Mode::Train, &c, &randint, &rng};
    return model->loss(model->forward(tape, x, opts), c, y).total_var;
  });
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-3);
}
