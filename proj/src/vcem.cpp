#include "vcem/vcem.hpp"

#include <cmath>

#include "model_parts.hpp"

namespace vcem::vi {

using diff::Shape;
using diff::Tape;
using diff::Tensor;
using diff::Var;
using models::ModelError;

VcemModel::VcemModel(models::ModelSpec spec)
    : Model(std::move(spec)),
      expand_(models::expansion_matrix(spec_.k, spec_.m)) {
  const std::size_t d = spec_.d, h = spec_.hidden, k = spec_.k, m = spec_.m, km = k * m;
  params_.add("enc.w1", Tensor({d, h}));
  params_.add("enc.b1", Tensor({1, h}));
  params_.add("enc.wc", Tensor({h, k}));
  params_.add("enc.bc", Tensor({1, k}));
  params_.add("post.wctx", Tensor({h, km}));
  params_.add("post.bctx", Tensor({1, km}));
  params_.add("post.wmu", Tensor({1, km}));
  params_.add("post.vmu", Tensor({k, km}));
  params_.add("post.bmu", Tensor({1, km}));
  params_.add("post.ws", Tensor({1, km}));
  params_.add("post.vs", Tensor({k, km}));
  params_.add("post.bs", Tensor({1, km}));
  params_.add("prior.pos", Tensor({k, m}));
  params_.add("prior.neg", Tensor({k, m}));
  params_.add("head.w1", Tensor({km, h}));
  params_.add("head.b1", Tensor({1, h}));
  params_.add("head.w2", Tensor({h, spec_.n_classes}));
  params_.add("head.b2", Tensor({1, spec_.n_classes}));
}

VcemModel::Posterior VcemModel::encode(Tape& tape, const Tensor& x, const Tensor* cond) const {
  using models::dense;
  Posterior p;
  p.hidden = diff::sigmoid(dense(tape, tape.constant(x), params_.at("enc.w1"), params_.at("enc.b1")));
  p.concept_logits = dense(tape, p.hidden, params_.at("enc.wc"), params_.at("enc.bc"));
  p.concept_probs = diff::sigmoid(p.concept_logits);
  // Coordinate z of concept j reads context feature z of block j and c_j.
  Var context = diff::sigmoid(dense(tape, p.hidden, params_.at("post.wctx"), params_.at("post.bctx")));
  Var c = cond ? tape.constant(*cond) : p.concept_probs;
  auto head = [&](const char* w, const char* v, const char* b) {
    Var from_ctx = diff::mul(context, diff::broadcast_rows(tape.parameter(params_.at(w)), x.rows()));
    Var from_c = diff::matmul(c, diff::mul(tape.parameter(params_.at(v)), expand_));
    return diff::add_row_bias(diff::add(from_ctx, from_c), tape.parameter(params_.at(b)));
  };
  p.mean = head("post.wmu", "post.vmu", "post.bmu");
  p.log_sigma = head("post.ws", "post.vs", "post.bs");
  return p;
}

Var VcemModel::select_prior(Tape& tape, const Tensor& states) const {
  const std::size_t batch = states.rows(), km = spec_.k * spec_.m;
  Tensor on({batch, km}), off({batch, km});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < spec_.k; ++j)
      for (std::size_t z = 0; z < spec_.m; ++z) {
        const double s = states.at(b, j);
        on.at(b, j * spec_.m + z) = s;
        off.at(b, j * spec_.m + z) = 1.0 - s;
      }
  Var pos = diff::broadcast_rows(diff::reshape(tape.parameter(params_.at("prior.pos")), {1, km}), batch);
  Var neg = diff::broadcast_rows(diff::reshape(tape.parameter(params_.at("prior.neg")), {1, km}), batch);
  return diff::add(diff::mul(pos, on), diff::mul(neg, off));
}

models::Forward VcemModel::forward(Tape& tape, const Tensor& x, const models::ForwardOptions& opts) const {
  check_input(x, opts);
  const bool train = opts.mode == models::Mode::Train;
  if (train && (!opts.c_true || !opts.rng)) throw ModelError("V-CEM train mode needs c_true and an rng");
  const std::size_t batch = x.rows(), k = spec_.k, m = spec_.m;

  // Inference conditions on a thresholded copy of p-hat; computing it needs
  // the encoder first, so the no-threshold path passes p-hat itself.
  Tensor hard;
  const Tensor* cond = nullptr;
  if (!train && spec_.infer_condition == models::InferCondition::Threshold) {
    Tape probe(false);
    Posterior pre = encode(probe, x, nullptr);
    hard = pre.concept_probs.value();
    for (double& v : hard.values()) v = v > 0.5 ? 1.0 : 0.0;
    cond = &hard;
  }
  Posterior post = encode(tape, x, cond);

  models::Forward f;
  f.concept_logits = post.concept_logits;
  f.concept_probs = post.concept_probs;
  f.posterior_mean = post.mean;
  f.posterior_log_sigma = post.log_sigma;
  if (opts.c_true) f.prior_selected = select_prior(tape, *opts.c_true);

  Var emb = post.mean;
  if (train) {
    Tensor eps({batch, k * m});
    for (double& e : eps.values()) e = opts.rng->normal();
    emb = reparam_sample(post.mean, post.log_sigma, eps);
  }
  if (opts.overrides && opts.overrides->active()) {
    // Overridden slots take the prior mean of the assigned state; the
    // posterior sample is multiplied by an exact zero there.
    Tensor keep({batch, k * m}), take({batch, k * m});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t z = 0; z < m; ++z) {
          keep.at(b, j * m + z) = 1.0 - opts.overrides->mask.at(b, j);
          take.at(b, j * m + z) = opts.overrides->mask.at(b, j);
        }
    emb = diff::add(diff::mul(emb, keep), diff::mul(select_prior(tape, opts.overrides->values), take));
  }
  f.embeddings = emb;
  f.class_logits = models::detail::mlp_head(tape, emb, params_, "head");
  return f;
}

PriorTable VcemModel::prior_table() const { return {params_.at("prior.pos").value, params_.at("prior.neg").value}; }

PosteriorParams VcemModel::posterior_params(const Tensor& x, const Tensor& c_cond) const {
  if (x.rank() != 2 || x.cols() != spec_.d)
    throw diff::ShapeError("posterior_params: x must be B x " + std::to_string(spec_.d));
  if (c_cond.shape() != Shape{x.rows(), spec_.k})
    throw diff::ShapeError("posterior_params: c_cond must be " + diff::shape_to_string({x.rows(), spec_.k}));
  for (double v : c_cond.values())
    if (!(v >= 0.0 && v <= 1.0)) throw ModelError("posterior_params: c_cond entries must lie in [0,1]");
  Tape tape(false);
  Posterior p = encode(tape, x, &c_cond);
  PosteriorParams out{p.mean.value(), p.log_sigma.value()};
  for (double& s : out.sigma.values()) s = std::exp(s);
  return out;
}

Tensor VcemModel::prior_mean(std::size_t j, int state) const {
  if (j >= spec_.k) throw ModelError("prior_mean: concept " + std::to_string(j) + " out of range");
  const Tensor& table = params_.at(state == 1 ? "prior.pos" : "prior.neg").value;
  Tensor row({spec_.m});
  for (std::size_t z = 0; z < spec_.m; ++z) row[z] = table.at(j, z);
  return row;
}

Var reparam_sample(Var mean, Var log_sigma, const Tensor& eps) {
  if (eps.shape() != mean.shape())
    throw diff::ShapeError("reparam_sample: eps " + diff::shape_to_string(eps.shape()) + " vs mean " +
                           diff::shape_to_string(mean.shape()));
  return diff::add(mean, diff::mul(diff::exp(log_sigma), eps));
}

Tensor reparam_sample(const PosteriorParams& params, const Tensor& eps) {
  if (eps.shape() != params.mean.shape() || params.sigma.shape() != params.mean.shape())
    throw diff::ShapeError("reparam_sample: mean, sigma and eps must share a shape");
  Tensor out = params.mean;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += params.sigma[i] * eps[i];
  return out;
}

Var kl_prior_matching(Var mean, Var log_sigma, Var prior, std::size_t batch) {
  Var diff_sq = diff::sub(mean, prior);
  Var quad = diff::mul(diff_sq, diff_sq);
  Var var = diff::exp(diff::scale(log_sigma, 2.0));
  Var terms = diff::sub(diff::add(quad, var), diff::add_scalar(diff::scale(log_sigma, 2.0), 1.0));
  return diff::scale(diff::sum(terms), 0.5 / static_cast<double>(batch));
}

double kl_prior_matching(const PosteriorParams& params, const std::vector<std::uint8_t>& c_true,
                         const PriorTable& prior) {
  const std::size_t k = prior.pos.rows(), m = prior.pos.cols();
  if (params.mean.size() != k * m || params.sigma.size() != k * m || c_true.size() != k)
    throw diff::ShapeError("kl_prior_matching: expected k=" + std::to_string(k) + " concepts of m=" +
                           std::to_string(m));
  double kl = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const Tensor& mu = c_true[j] ? prior.pos : prior.neg;
    for (std::size_t z = 0; z < m; ++z) {
      const double s = params.sigma[j * m + z];
      if (!(s > 0.0)) throw ModelError("kl_prior_matching: sigma must be positive");
      const double dm = params.mean[j * m + z] - mu.at(j, z);
      kl += dm * dm + s * s - 1.0 - 2.0 * std::log(s);
    }
  }
  return 0.5 * kl;
}

Tensor bernoulli_mask(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  Tensor mask({rows, cols});
  for (double& v : mask.values()) v = rng.uniform() < p ? 1.0 : 0.0;
  return mask;
}

RandIntResult randint_apply(const Tensor& embeddings, const Tensor& c_true, double probability, Rng& rng,
                            const PriorTable& prior) {
  if (!(probability >= 0.0 && probability <= 1.0)) throw ModelError("randint probability must lie in [0,1]");
  const std::size_t k = prior.pos.rows(), m = prior.pos.cols();
  const std::size_t batch = c_true.rows();
  if (c_true.cols() != k || embeddings.shape() != Shape{batch, k * m})
    throw diff::ShapeError("randint_apply: embeddings must be B x (k m) and c_true B x k");
  RandIntResult r{embeddings, bernoulli_mask(batch, k, probability, rng)};
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < k; ++j) {
      if (r.replaced.at(b, j) == 0.0) continue;
      const Tensor& mu = c_true.at(b, j) == 1.0 ? prior.pos : prior.neg;
      for (std::size_t z = 0; z < m; ++z) r.embeddings.at(b, j * m + z) = mu.at(j, z);
    }
  return r;
}

}  // namespace vcem::vi
