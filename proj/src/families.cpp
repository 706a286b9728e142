#include "model_parts.hpp"

namespace vcem::models {

using diff::Tape;
using diff::Tensor;
using diff::Var;
using detail::apply_overrides;
using detail::mlp_head;

namespace {

void add_dense(diff::ParameterSet& ps, const std::string& prefix, const std::string& suffix, std::size_t in,
               std::size_t out) {
  ps.add(prefix + ".w" + suffix, Tensor({in, out}));
  ps.add(prefix + ".b" + suffix, Tensor({1, out}));
}

class Blackbox : public Model {
 public:
  explicit Blackbox(ModelSpec spec) : Model(std::move(spec)) {
    add_dense(params_, "enc", "1", spec_.d, spec_.hidden);
    add_dense(params_, "head", "", spec_.hidden, spec_.n_classes);
  }

  Forward forward(Tape& tape, const Tensor& x, const ForwardOptions& opts) const override {
    check_input(x, opts);
    Forward f;
    Var h = diff::sigmoid(dense(tape, tape.constant(x), params_.at("enc.w1"), params_.at("enc.b1")));
    f.class_logits = dense(tape, h, params_.at("head.w"), params_.at("head.b"));
    return f;
  }
  std::unique_ptr<Model> clone() const override { return std::make_unique<Blackbox>(*this); }
};

class Cbm : public Model {
 public:
  explicit Cbm(ModelSpec spec) : Model(std::move(spec)) {
    add_dense(params_, "enc", "1", spec_.d, spec_.hidden);
    add_dense(params_, "enc", "c", spec_.hidden, spec_.k);
    if (spec_.family == Family::CbmLinear) {
      add_dense(params_, "head", "", spec_.k, spec_.n_classes);
    } else {
      add_dense(params_, "head", "1", spec_.k, spec_.hidden);
      add_dense(params_, "head", "2", spec_.hidden, spec_.n_classes);
    }
  }

  Forward forward(Tape& tape, const Tensor& x, const ForwardOptions& opts) const override {
    check_input(x, opts);
    Forward f;
    Var h = diff::sigmoid(dense(tape, tape.constant(x), params_.at("enc.w1"), params_.at("enc.b1")));
    f.concept_logits = dense(tape, h, params_.at("enc.wc"), params_.at("enc.bc"));
    f.concept_probs = diff::sigmoid(f.concept_logits);
    f.embeddings = apply_overrides(f.concept_probs, opts.overrides);
    f.class_logits = spec_.family == Family::CbmLinear
                         ? dense(tape, f.embeddings, params_.at("head.w"), params_.at("head.b"))
                         : mlp_head(tape, f.embeddings, params_, "head");
    return f;
  }
  std::unique_ptr<Model> clone() const override { return std::make_unique<Cbm>(*this); }
};

// Per concept a positive and a negative context embedding; a scorer shared
// across concepts reads (c+ || c-) and its probability mixes the two.
class Cem : public Model {
 public:
  explicit Cem(ModelSpec spec) : Model(std::move(spec)), expand_(expansion_matrix(spec_.k, spec_.m)) {
    const std::size_t km = spec_.k * spec_.m;
    add_dense(params_, "enc", "1", spec_.d, spec_.hidden);
    add_dense(params_, "cem", "pos", spec_.hidden, km);
    add_dense(params_, "cem", "neg", spec_.hidden, km);
    add_dense(params_, "cem", "score", 2 * spec_.m, 1);
    add_dense(params_, "head", "1", km, spec_.hidden);
    add_dense(params_, "head", "2", spec_.hidden, spec_.n_classes);
  }

  Forward forward(Tape& tape, const Tensor& x, const ForwardOptions& opts) const override {
    check_input(x, opts);
    const std::size_t batch = x.rows(), k = spec_.k, m = spec_.m;
    Forward f;
    Var h = diff::sigmoid(dense(tape, tape.constant(x), params_.at("enc.w1"), params_.at("enc.b1")));
    Var pos = diff::sigmoid(dense(tape, h, params_.at("cem.wpos"), params_.at("cem.bpos")));
    Var neg = diff::sigmoid(dense(tape, h, params_.at("cem.wneg"), params_.at("cem.bneg")));
    Var pairs = diff::concat_cols({diff::reshape(pos, {batch * k, m}), diff::reshape(neg, {batch * k, m})});
    Var scores = dense(tape, pairs, params_.at("cem.wscore"), params_.at("cem.bscore"));
    f.concept_logits = diff::reshape(scores, {batch, k});
    f.concept_probs = diff::sigmoid(f.concept_logits);
    Var mix = diff::matmul(apply_overrides(f.concept_probs, opts.overrides), tape.constant(expand_));
    Var one_minus = diff::add_scalar(diff::scale(mix, -1.0), 1.0);
    f.embeddings = diff::add(diff::mul(mix, pos), diff::mul(one_minus, neg));
    f.class_logits = mlp_head(tape, f.embeddings, params_, "head");
    return f;
  }
  std::unique_ptr<Model> clone() const override { return std::make_unique<Cem>(*this); }

 private:
  Tensor expand_;
};

}  // namespace

std::unique_ptr<Model> make_blackbox(const ModelSpec& spec) { return std::make_unique<Blackbox>(spec); }
std::unique_ptr<Model> make_cbm(const ModelSpec& spec) { return std::make_unique<Cbm>(spec); }
std::unique_ptr<Model> make_cem(const ModelSpec& spec) { return std::make_unique<Cem>(spec); }

}  // namespace vcem::models
