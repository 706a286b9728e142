#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support/fixtures.hpp"
#include "vcem/trainer.hpp"

using namespace vcem;
using models::Family;
using train::TrainConfig;

namespace {

struct Splits {
  data::ConceptDataset train, val, test;
};

Splits synthetic_splits(data::TaskRule rule, std::size_t n, std::uint64_t seed) {
  data::SyntheticSpec ss;
  ss.rule = rule;
  auto ds = data::gen_synthetic(ss, seed, n);
  auto sp = data::split3(ds, 0.7, 0.1, 0.2, seed);
  auto st = data::Standardizer::fit(sp.train);
  return {st.apply(sp.train), st.apply(sp.val), st.apply(sp.test)};
}

models::ModelSpec spec_for(Family f, const data::ConceptDataset& ds, std::size_t hidden = 16, std::size_t m = 4) {
  return testing::tiny_spec(f, ds.feature_dim(), ds.concept_count(), ds.class_count(), hidden, m);
}

TrainConfig short_config(std::size_t epochs, std::uint64_t seed = 0) {
  TrainConfig c;
  c.max_epochs = epochs;
  c.patience = std::min<std::size_t>(20, epochs - 1);
  c.learning_rate = 5e-3;
  c.batch_size = 64;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("learning-rate schedule drops by ten every hundred epochs") {
  TrainConfig c;
  c.learning_rate = 2e-3;
  CHECK(c.lr_at(150) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(c.lr_at(1) == 2e-3);
  CHECK(c.lr_at(100) == 2e-3);
  CHECK(c.lr_at(101) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(c.lr_at(201) == doctest::Approx(2e-5).epsilon(1e-12));
  double prev = c.lr_at(1);
  for (std::size_t e = 2; e <= 500; ++e) {
    CHECK(c.lr_at(e) <= prev);
    prev = c.lr_at(e);
  }
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.patience = c.max_epochs;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.randint_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("training rejects mismatched specs and empty splits") {
  auto sp = synthetic_splits(data::TaskRule::TupleClass, 200, 1);
  auto spec = spec_for(Family::CbmMlp, sp.train);
  spec.d += 1;
  CHECK_THROWS_AS(train::train(spec, sp.train, sp.val, short_config(3)), std::invalid_argument);
  CHECK_THROWS_AS(train::train(spec_for(Family::CbmMlp, sp.train), sp.train, data::ConceptDataset{}, short_config(3)),
                  std::invalid_argument);
}

TEST_CASE("history learning rates follow the closed-form schedule") {
  auto sp = synthetic_splits(data::TaskRule::TupleClass, 200, 2);
  auto cfg = short_config(12);
  cfg.lr_step = 5;
  cfg.patience = 11;
  auto r = train::train(spec_for(Family::Cem, sp.train), sp.train, sp.val, cfg);
  for (const auto& e : r.history.epochs) CHECK(e.learning_rate == cfg.lr_at(e.epoch));
  CHECK(r.history.epochs.size() <= cfg.max_epochs);
}

TEST_CASE("fixed seed gives bitwise identical histories and parameters") {
  auto sp = synthetic_splits(data::TaskRule::Parity, 300, 3);
  for (Family f : models::all_families()) {
    CAPTURE(models::to_string(f));
    auto a = train::train(spec_for(f, sp.train), sp.train, sp.val, short_config(6, 9));
    auto b = train::train(spec_for(f, sp.train), sp.train, sp.val, short_config(6, 9));
    CHECK(a.history.to_csv() == b.history.to_csv());
    for (std::size_t i = 0; i < a.model->params().size(); ++i) {
      CAPTURE(a.model->params()[i].name);
      CHECK(a.model->params()[i].value == b.model->params()[i].value);
    }
    auto c = train::train(spec_for(f, sp.train), sp.train, sp.val, short_config(6, 10));
    CHECK(a.history.to_csv() != c.history.to_csv());
  }
}

TEST_CASE("returned model is the minimum-validation-loss checkpoint") {
  auto sp = synthetic_splits(data::TaskRule::TupleClass, 300, 4);
  for (Family f : {Family::CbmLinear, Family::Vcem}) {
    auto r = train::train(spec_for(f, sp.train), sp.train, sp.val, short_config(15, 4));
    double best = INFINITY;
    std::size_t arg = 0;
    for (const auto& e : r.history.epochs)
      if (e.val_loss < best) {
        best = e.val_loss;
        arg = e.epoch;
      }
    CHECK(r.history.best_epoch == arg);
    CHECK(train::evaluate_loss(*r.model, sp.val).total == best);
  }
}

TEST_CASE("early stopping fires exactly patience epochs after the best epoch") {
  // Validation drawn with another feature map: fitting the train split can
  // only make it worse, so the monitor stops improving early.
  auto sp = synthetic_splits(data::TaskRule::TupleClass, 300, 5);
  auto unrelated = synthetic_splits(data::TaskRule::TupleClass, 300, 55);
  auto cfg = short_config(400, 5);
  cfg.patience = 3;
  auto r = train::train(spec_for(Family::CbmMlp, sp.train), sp.train, unrelated.val, cfg);
  const auto& h = r.history;
  REQUIRE(h.epochs.size() < cfg.max_epochs);
  CHECK(h.epochs.size() == h.best_epoch + cfg.patience);
  for (std::size_t e = h.best_epoch; e < h.epochs.size(); ++e)
    CHECK(h.epochs[e].val_loss >= h.epochs[h.best_epoch - 1].val_loss);
}

TEST_CASE("a strictly improving validation loss runs to max epochs") {
  auto sp = synthetic_splits(data::TaskRule::TupleClass, 200, 6);
  auto cfg = short_config(25, 6);
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 1000;  // one full batch per epoch
  cfg.randint_prob = 0.0;
  auto r = train::train(spec_for(Family::CbmLinear, sp.train), sp.train, sp.val, cfg);
  for (std::size_t e = 1; e < r.history.epochs.size(); ++e)
    REQUIRE(r.history.epochs[e].val_loss < r.history.epochs[e - 1].val_loss);
  CHECK(r.history.epochs.size() == cfg.max_epochs);
  CHECK(r.history.best_epoch == cfg.max_epochs);
}

TEST_CASE("callback can stop training and sees every epoch") {
  auto sp = synthetic_splits(data::TaskRule::TupleClass, 200, 7);
  std::vector<std::size_t> seen;
  auto r = train::train(spec_for(Family::Blackbox, sp.train), sp.train, sp.val, short_config(50),
                        [&](const train::EpochRecord& e) {
                          seen.push_back(e.epoch);
                          return e.epoch < 4;
                        });
  CHECK(seen == std::vector<std::size_t>{1, 2, 3, 4});
  CHECK(r.history.epochs.size() == 4);
  CHECK(std::isnan(r.history.epochs[0].val_concept_accuracy));
}

TEST_CASE("diverging training reports the epoch") {
  auto sp = synthetic_splits(data::TaskRule::TupleClass, 200, 8);
  auto cfg = short_config(5);
  cfg.learning_rate = 1e308;
  try {
    train::train(spec_for(Family::CbmMlp, sp.train), sp.train, sp.val, cfg);
    FAIL("expected divergence");
  } catch (const train::TrainingDiverged& e) {
    CHECK(e.epoch >= 1);
    CHECK(e.epoch <= cfg.max_epochs);
    CHECK(std::string(e.what()).find("epoch " + std::to_string(e.epoch)) != std::string::npos);
  }
}

TEST_CASE("evaluate is deterministic and omits CRC for the blackbox") {
  auto sp = synthetic_splits(data::TaskRule::TupleClass, 300, 9);
  for (Family f : models::all_families()) {
    CAPTURE(models::to_string(f));
    auto r = train::train(spec_for(f, sp.train), sp.train, sp.val, short_config(3));
    auto a = train::evaluate(*r.model, sp.test);
    auto b = train::evaluate(*r.model, sp.test);
    CHECK(metrics::to_json(a) == metrics::to_json(b));
    CHECK(a.samples == sp.test.size());
    CHECK(a.task_accuracy >= 0.0);
    CHECK(a.task_accuracy <= 1.0);
    if (f == Family::Blackbox) {
      CHECK_FALSE(a.crc);
      CHECK_FALSE(a.concept_accuracy);
    } else {
      REQUIRE(a.crc);
      REQUIRE(a.concept_accuracy);
      CHECK(a.crc->per_concept.size() == sp.test.concept_count());
    }
  }
  auto r = train::train(spec_for(Family::Cem, sp.train), sp.train, sp.val, short_config(3));
  auto wrong = synthetic_splits(data::TaskRule::TupleClass, 50, 1);
  std::vector<double> wide(wrong.test.size() * 17, 0.0);
  data::ConceptDataset bad(17, 4, 16, wide, std::vector<std::uint8_t>(wrong.test.size() * 4, 0),
                           std::vector<std::int32_t>(wrong.test.size(), 0));
  CHECK_THROWS_AS(train::evaluate(*r.model, bad), std::invalid_argument);
}

TEST_CASE("history csv layout") {
  train::TrainHistory h;
  h.epochs.push_back({1, 0.5, 0.25, 0.75, std::nan(""), 1e-3});
  const auto csv = h.to_csv();
  CHECK(csv.rfind("epoch,train_loss,val_loss,val_task_accuracy,val_concept_accuracy,learning_rate\n", 0) == 0);
  CHECK(csv.find("\n1,0.5,0.25,0.75,,0.001") != std::string::npos);
}

TEST_CASE("V-CEM reaches the concept accuracy target on noise-free tuple-class") {
  auto sp = synthetic_splits(data::TaskRule::TupleClass, 4096, 0);
  auto spec = testing::tiny_spec(Family::Vcem, 16, 4, 16, 64, 16);
  auto cfg = short_config(300, 0);
  cfg.batch_size = 256;
  cfg.patience = 20;
  auto r = train::train(spec, sp.train, sp.val, cfg);
  CHECK(r.history.epochs.size() <= 300);
  double best_cacc = 0.0;
  for (const auto& e : r.history.epochs) best_cacc = std::max(best_cacc, e.val_concept_accuracy);
  CHECK(best_cacc >= 0.95);
  CHECK(train::evaluate(*r.model, sp.val).concept_accuracy.value() >= 0.95);
}
