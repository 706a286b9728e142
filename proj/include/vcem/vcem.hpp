#pragma once

#include "vcem/models.hpp"

namespace vcem::vi {

/// Learnable prior means, each k x m.
struct PriorTable {
  diff::Tensor pos, neg;
};

/// Posterior mean and standard deviation for a batch, each B x (k m).
struct PosteriorParams {
  diff::Tensor mean, sigma;
};

/// V-CEM: concept encoder, Gaussian posterior q(c_j | x, c_j) per concept,
/// learnable two-component prior and an MLP head over the concatenated
/// embeddings.
class VcemModel : public models::Model {
 public:
  explicit VcemModel(models::ModelSpec spec);

  models::Forward forward(diff::Tape& tape, const diff::Tensor& x, const models::ForwardOptions& opts) const override;
  std::unique_ptr<models::Model> clone() const override { return std::make_unique<VcemModel>(*this); }

  PriorTable prior_table() const;
  /// Posterior parameters of `x` under the given conditioning values in [0,1]^k.
  PosteriorParams posterior_params(const diff::Tensor& x, const diff::Tensor& c_cond) const;
  diff::Tensor prior_mean(std::size_t j, int state) const;

 private:
  struct Posterior {
    diff::Var hidden, concept_logits, concept_probs, mean, log_sigma;
  };
  Posterior encode(diff::Tape& tape, const diff::Tensor& x, const diff::Tensor* cond) const;
  /// Prior means picked per slot by a 0/1 matrix (B x k), expanded to B x (k m).
  diff::Var select_prior(diff::Tape& tape, const diff::Tensor& states) const;

  diff::Tensor expand_;
};

/// c = mean + sigma * eps, differentiable in mean and log_sigma.
diff::Var reparam_sample(diff::Var mean, diff::Var log_sigma, const diff::Tensor& eps);
diff::Tensor reparam_sample(const PosteriorParams& params, const diff::Tensor& eps);

/// 0.5 * sum[(mean - prior)^2 + sigma^2 - 1 - log sigma^2] over all entries,
/// divided by `batch`. Graph form takes log sigma.
diff::Var kl_prior_matching(diff::Var mean, diff::Var log_sigma, diff::Var prior, std::size_t batch);
/// Closed form for one sample: params are 1 x (k m) or k x m, prior selected by c_true.
double kl_prior_matching(const PosteriorParams& params, const std::vector<std::uint8_t>& c_true,
                         const PriorTable& prior);

struct RandIntResult {
  diff::Tensor embeddings;
  /// 1 where the slot was replaced, B x k.
  diff::Tensor replaced;
};

/// Independently per (sample, concept), with `probability` replace the
/// embedding by the prior mean of the true state. `embeddings` is B x (k m),
/// `c_true` B x k.
RandIntResult randint_apply(const diff::Tensor& embeddings, const diff::Tensor& c_true, double probability,
                            Rng& rng, const PriorTable& prior);

/// 0/1 mask with each entry set with probability p, drawn row-major from rng.
diff::Tensor bernoulli_mask(std::size_t rows, std::size_t cols, double p, Rng& rng);

}  // namespace vcem::vi
