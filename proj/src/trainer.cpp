#include "vcem/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "vcem/adam.hpp"
#include "vcem/ops.hpp"
#include "vcem/vcem.hpp"

namespace vcem::train {

using diff::Tensor;
using models::Model;

namespace {

Tensor rows_of(const Tensor& t, std::size_t begin, std::size_t end) {
  const std::size_t cols = t.cols();
  return Tensor({end - begin, cols}, std::vector<double>(t.storage().begin() + static_cast<long>(begin * cols),
                                                         t.storage().begin() + static_cast<long>(end * cols)));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  std::size_t rows = 0;
  for (const auto& p : parts) rows += p.rows();
  std::vector<double> all;
  all.reserve(rows * parts.front().cols());
  for (const auto& p : parts) all.insert(all.end(), p.storage().begin(), p.storage().end());
  return Tensor({rows, parts.front().cols()}, std::move(all));
}

}  // namespace

void TrainConfig::validate() const {
  if (max_epochs == 0) throw std::invalid_argument("train: max_epochs must be positive");
  if (patience >= max_epochs) throw std::invalid_argument("train: patience must be below max_epochs");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  if (lr_step == 0 || !(lr_decay > 0.0 && lr_decay <= 1.0))
    throw std::invalid_argument("train: lr schedule needs a positive step and a decay in (0,1]");
  if (batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  if (!(randint_prob >= 0.0 && randint_prob <= 1.0)) throw std::invalid_argument("train: randint probability must lie in [0,1]");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  const auto drops = static_cast<double>((epoch - 1) / lr_step);
  return learning_rate * std::pow(lr_decay, drops);
}

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,val_loss,val_task_accuracy,val_concept_accuracy,learning_rate\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_task_accuracy << ',';
    if (!std::isnan(e.val_concept_accuracy)) os << e.val_concept_accuracy;
    os << ',' << e.learning_rate << '\n';
  }
  return os.str();
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << to_csv();
}

models::Prediction predict_all(const Model& model, const Tensor& x, const models::Overrides* overrides,
                               std::size_t batch_size) {
  std::vector<Tensor> probs, cls, emb;
  for (std::size_t b = 0; b < x.rows(); b += batch_size) {
    const std::size_t e = std::min(x.rows(), b + batch_size);
    models::Overrides part;
    if (overrides) part = {rows_of(overrides->mask, b, e), rows_of(overrides->values, b, e)};
    auto p = model.predict(rows_of(x, b, e), overrides ? &part : nullptr);
    cls.push_back(std::move(p.class_probs));
    if (!p.concept_probs.empty()) probs.push_back(std::move(p.concept_probs));
    if (!p.embeddings.empty()) emb.push_back(std::move(p.embeddings));
  }
  models::Prediction out;
  out.class_probs = concat_rows(cls);
  if (!probs.empty()) out.concept_probs = concat_rows(probs);
  if (!emb.empty()) out.embeddings = concat_rows(emb);
  return out;
}

models::LossBreakdown evaluate_loss(const Model& model, const data::ConceptDataset& ds, std::size_t batch_size) {
  models::LossBreakdown total;
  const Tensor x = ds.feature_tensor();
  const Tensor c = ds.concept_tensor();
  const auto y = ds.task_vector();
  for (std::size_t b = 0; b < ds.size(); b += batch_size) {
    const std::size_t e = std::min(ds.size(), b + batch_size);
    const Tensor cb = rows_of(c, b, e);
    diff::Tape tape(false);
    models::ForwardOptions opts;
    opts.c_true = &cb;
    auto f = model.forward(tape, rows_of(x, b, e), opts);
    auto l = model.loss(f, cb, std::vector<std::int32_t>(y.begin() + static_cast<long>(b), y.begin() + static_cast<long>(e)));
    const double w = static_cast<double>(e - b) / static_cast<double>(ds.size());
    total.concept_loss += w * l.concept_loss;
    total.task_loss += w * l.task_loss;
    total.prior_loss += w * l.prior_loss;
    total.total += w * l.total;
  }
  return total;
}

std::size_t embedding_width(const Model& model) { return models::has_embeddings(model.family()) ? model.spec().m : 1; }

metrics::MetricsReport evaluate(const Model& model, const data::ConceptDataset& ds, bool with_crc) {
  if (ds.feature_dim() != model.spec().d)
    throw std::invalid_argument("evaluate: dataset has d=" + std::to_string(ds.feature_dim()) + ", model expects " +
                                std::to_string(model.spec().d));
  metrics::MetricsReport rep;
  rep.samples = ds.size();
  auto pred = predict_all(model, ds.feature_tensor());
  rep.task_accuracy = metrics::task_accuracy(pred.class_probs, ds.tasks());
  auto loss = evaluate_loss(model, ds);
  rep.task_loss = loss.task_loss;
  rep.total_loss = loss.total;
  if (models::is_concept_based(model.family())) {
    const Tensor c = ds.concept_tensor();
    rep.concept_accuracy = metrics::concept_accuracy(pred.concept_probs, c);
    rep.per_concept_accuracy = metrics::per_concept_accuracy(pred.concept_probs, c);
    rep.concept_loss = loss.concept_loss;
    if (model.family() == models::Family::Vcem) rep.prior_loss = loss.prior_loss;
    if (with_crc && ds.size() >= 2) rep.crc = metrics::crc(pred.embeddings, pred.concept_probs, embedding_width(model));
  }
  return rep;
}

TrainResult train(const models::ModelSpec& spec, const data::ConceptDataset& train_set,
                  const data::ConceptDataset& val_set, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw std::invalid_argument("train: empty split");
  if (train_set.feature_dim() != spec.d || train_set.concept_count() != spec.k ||
      train_set.class_count() != spec.n_classes)
    throw std::invalid_argument("train: model spec does not match the dataset dimensions");

  TrainResult result;
  result.model = models::create_model(spec, config.seed);
  Model& model = *result.model;
  diff::AdamState adam = diff::AdamState::for_parameters(model.params(), {config.learning_rate});
  diff::ParameterSet best = model.params();
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  const Rng order_root = Rng::substream(config.seed, "batches");
  const Rng randint_root = Rng::substream(config.seed, "randint");
  const Rng sample_root = Rng::substream(config.seed, "sampling");
  const bool use_randint = models::is_concept_based(spec.family) && config.randint_prob > 0.0;
  const Tensor x_all = train_set.feature_tensor();
  const Tensor c_all = train_set.concept_tensor();
  const auto y_all = train_set.task_vector();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = config.lr_at(epoch);
    adam.config.learning_rate = rec.learning_rate;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng = order_root.child("epoch", epoch);
    std::shuffle(order.begin(), order.end(), order_rng.engine());
    Rng randint_rng = randint_root.child("epoch", epoch);
    Rng sample_rng = sample_root.child("epoch", epoch);

    try {
      double loss_sum = 0.0;
      for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
        const std::size_t e = std::min(order.size(), b + config.batch_size);
        std::span<const std::size_t> idx(order.data() + b, e - b);
        const Tensor x = train_set.feature_tensor(idx);
        const Tensor c = train_set.concept_tensor(idx);
        const auto y = train_set.task_vector(idx);

        models::Overrides randint;
        models::ForwardOptions opts{models::Mode::Train, &c, nullptr, &sample_rng};
        if (use_randint && epoch >= config.randint_start_epoch) {
          randint = {vi::bernoulli_mask(idx.size(), spec.k, config.randint_prob, randint_rng), c};
          opts.overrides = &randint;
        }
        diff::Tape tape;
        auto f = model.forward(tape, x, opts);
        auto l = model.loss(f, c, y);
        if (!std::isfinite(l.total)) throw diff::NonFiniteError("loss is not finite");
        auto grads = diff::backward(tape, l.total_var, model.params());
        diff::adam_step(model.params(), grads, adam);
        loss_sum += l.total * static_cast<double>(idx.size());
      }
      rec.train_loss = loss_sum / static_cast<double>(order.size());

      const auto val = evaluate_loss(model, val_set);
      if (!std::isfinite(val.total)) throw diff::NonFiniteError("validation loss is not finite");
      rec.val_loss = val.total;
    } catch (const diff::NonFiniteError& e) {
      throw TrainingDiverged(epoch, e.what());
    }

    auto pred = predict_all(model, val_set.feature_tensor());
    rec.val_task_accuracy = metrics::task_accuracy(pred.class_probs, val_set.tasks());
    rec.val_concept_accuracy = models::is_concept_based(spec.family)
                                   ? metrics::concept_accuracy(pred.concept_probs, val_set.concept_tensor())
                                   : std::nan("");
    result.history.epochs.push_back(rec);

    if (rec.val_loss < best_loss) {
      best_loss = rec.val_loss;
      best.assign_values(model.params());
      result.history.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (on_epoch && !on_epoch(rec)) break;
    if (since_best >= config.patience) break;
  }
  model.params().assign_values(best);
  return result;
}

}  // namespace vcem::train
