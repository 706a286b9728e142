#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "model_parts.hpp"
#include "vcem/checkpoint.hpp"
#include "vcem/vcem.hpp"

namespace vcem::models {

using diff::Shape;
using diff::Tape;
using diff::Tensor;
using diff::Var;
using nlohmann::json;

namespace {

const std::vector<std::pair<Family, std::string>>& family_names() {
  static const std::vector<std::pair<Family, std::string>> names{{Family::Blackbox, "blackbox"},
                                                                 {Family::CbmLinear, "cbm-linear"},
                                                                 {Family::CbmMlp, "cbm-mlp"},
                                                                 {Family::Cem, "cem"},
                                                                 {Family::Vcem, "vcem"}};
  return names;
}

void check_binary(const Tensor& t, const char* what) {
  for (double v : t.values())
    if (v != 0.0 && v != 1.0) throw ModelError(std::string(what) + " entries must be 0 or 1");
}

}  // namespace

Family parse_family(const std::string& name) {
  for (const auto& [f, n] : family_names())
    if (n == name) return f;
  throw ModelError("unknown model family '" + name + "' (expected blackbox, cbm-linear, cbm-mlp, cem or vcem)");
}

std::string to_string(Family family) {
  for (const auto& [f, n] : family_names())
    if (f == family) return n;
  return "?";
}

bool is_concept_based(Family f) { return f != Family::Blackbox; }
bool has_embeddings(Family f) { return f == Family::Cem || f == Family::Vcem; }

const std::vector<Family>& all_families() {
  static const std::vector<Family> all{Family::Blackbox, Family::CbmLinear, Family::CbmMlp, Family::Cem, Family::Vcem};
  return all;
}

void ModelSpec::validate() const {
  if (d == 0 || n_classes == 0) throw ModelError("model spec: d and N must be positive");
  if (is_concept_based(family) && k == 0) throw ModelError("model spec: k must be positive");
  if (hidden == 0) throw ModelError("model spec: hidden width must be positive");
  if (has_embeddings(family) && m == 0) throw ModelError("model spec: embedding dim m must be positive");
  if (!(lambda_t >= 0.0 && lambda_t <= 1.0)) throw ModelError("model spec: lambda_t must lie in [0,1]");
  if (!(lambda_p >= 0.0)) throw ModelError("model spec: lambda_p must be non-negative");
  if (!(init_gain > 0.0)) throw ModelError("model spec: init_gain must be positive");
}

std::string to_json(const ModelSpec& s) {
  json j{{"family", to_string(s.family)},
         {"d", s.d},
         {"k", s.k},
         {"N", s.n_classes},
         {"hidden", s.hidden},
         {"m", s.m},
         {"lambda_t", s.lambda_t},
         {"lambda_p", s.lambda_p},
         {"init_gain", s.init_gain},
         {"infer_condition", s.infer_condition == InferCondition::Threshold ? "threshold" : "probs"}};
  return j.dump(2);
}

ModelSpec spec_from_json(const std::string& text) {
  ModelSpec s;
  try {
    json j = json::parse(text);
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      if (key == "family") s.family = parse_family(it->get<std::string>());
      else if (key == "d") s.d = it->get<std::size_t>();
      else if (key == "k") s.k = it->get<std::size_t>();
      else if (key == "N") s.n_classes = it->get<std::size_t>();
      else if (key == "hidden") s.hidden = it->get<std::size_t>();
      else if (key == "m") s.m = it->get<std::size_t>();
      else if (key == "lambda_t") s.lambda_t = it->get<double>();
      else if (key == "lambda_p") s.lambda_p = it->get<double>();
      else if (key == "init_gain") s.init_gain = it->get<double>();
      else if (key == "infer_condition") {
        const auto v = it->get<std::string>();
        if (v != "threshold" && v != "probs") throw ModelError("infer_condition must be threshold or probs");
        s.infer_condition = v == "threshold" ? InferCondition::Threshold : InferCondition::Probs;
      } else
        throw ModelError("model spec: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ModelError(std::string("model spec: ") + e.what());
  }
  s.validate();
  return s;
}

bool Overrides::active() const {
  for (double v : mask.values())
    if (v != 0.0) return true;
  return false;
}

Overrides Overrides::broadcast(const std::map<std::size_t, int>& assignment, std::size_t batch, std::size_t k) {
  Overrides o{Tensor({batch, k}), Tensor({batch, k})};
  for (const auto& [j, v] : assignment) {
    if (j >= k) throw ModelError("override index " + std::to_string(j) + " out of range for k=" + std::to_string(k));
    if (v != 0 && v != 1) throw ModelError("override value for concept " + std::to_string(j) + " must be 0 or 1");
    for (std::size_t b = 0; b < batch; ++b) {
      o.mask.at(b, j) = 1.0;
      o.values.at(b, j) = v;
    }
  }
  return o;
}

void Overrides::validate(std::size_t batch, std::size_t k) const {
  const Shape want{batch, k};
  if (mask.shape() != want || values.shape() != want)
    throw ModelError("overrides must be " + diff::shape_to_string(want) + ", got mask " +
                     diff::shape_to_string(mask.shape()) + " and values " + diff::shape_to_string(values.shape()));
  check_binary(mask, "override mask");
  check_binary(values, "override values");
}

void Model::check_input(const Tensor& x, const ForwardOptions& opts) const {
  if (x.rank() != 2 || x.cols() != spec_.d)
    throw diff::ShapeError("model input must be B x " + std::to_string(spec_.d) + ", got " +
                           diff::shape_to_string(x.shape()));
  if (opts.overrides) {
    if (!is_concept_based(spec_.family)) throw ModelError("the blackbox family has no concepts to override");
    opts.overrides->validate(x.rows(), spec_.k);
  }
  if (opts.c_true && opts.c_true->shape() != Shape{x.rows(), spec_.k})
    throw diff::ShapeError("c_true must be " + diff::shape_to_string({x.rows(), spec_.k}));
}

LossBreakdown Model::loss(const Forward& f, const Tensor& c_true, const std::vector<std::int32_t>& y) const {
  const std::size_t batch = f.class_logits.value().rows();
  if (y.size() != batch) throw ModelError("task labels do not match the batch size");
  LossBreakdown out;
  const Tensor y1h = one_hot(y, spec_.n_classes);
  Var lt = diff::scale(diff::sum(diff::mul(diff::log_softmax_rows(f.class_logits), y1h)), -1.0 / batch);
  out.task_loss = lt.value()[0];
  if (!is_concept_based(spec_.family)) {
    out.total_var = lt;
    out.total = out.task_loss;
    return out;
  }
  if (c_true.shape() != Shape{batch, spec_.k}) throw diff::ShapeError("c_true must be B x k");
  // BCE with logits: softplus(z) - c z.
  Var lc = diff::scale(diff::sum(diff::sub(diff::softplus(f.concept_logits), diff::mul(f.concept_logits, c_true))),
                       1.0 / batch);
  out.concept_loss = lc.value()[0];
  Var total = diff::add(diff::scale(lc, 1.0 / spec_.k), diff::scale(lt, spec_.lambda_t));
  if (f.posterior_mean.valid()) {
    Var lp = vi::kl_prior_matching(f.posterior_mean, f.posterior_log_sigma, f.prior_selected, batch);
    out.prior_loss = lp.value()[0];
    total = diff::add(total, diff::scale(lp, spec_.lambda_p));
  }
  out.total_var = total;
  out.total = total.value()[0];
  return out;
}

Prediction Model::predict(const Tensor& x, const Overrides* overrides) const {
  Tape tape(false);
  ForwardOptions opts;
  opts.overrides = overrides;
  Forward f = forward(tape, x, opts);
  Prediction p;
  p.class_probs = diff::softmax_rows(f.class_logits).value();
  if (f.concept_probs.valid()) p.concept_probs = f.concept_probs.value();
  if (f.embeddings.valid()) p.embeddings = f.embeddings.value();
  return p;
}

Tensor expansion_matrix(std::size_t k, std::size_t m) {
  Tensor e({k, k * m});
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t z = 0; z < m; ++z) e.at(j, j * m + z) = 1.0;
  return e;
}

Tensor block_diagonal_mask(std::size_t k, std::size_t m) {
  Tensor b({k * m, k * m});
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < m; ++c) b.at(j * m + r, j * m + c) = 1.0;
  return b;
}

Var dense(Tape& tape, Var x, const diff::Parameter& w, const diff::Parameter& b) {
  return diff::add_row_bias(diff::matmul(x, tape.parameter(w)), tape.parameter(b));
}

Tensor one_hot(const std::vector<std::int32_t>& y, std::size_t n_classes) {
  Tensor t({y.size(), n_classes});
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= n_classes)
      throw ModelError("task label " + std::to_string(y[i]) + " outside 0.." + std::to_string(n_classes - 1));
    t.at(i, static_cast<std::size_t>(y[i])) = 1.0;
  }
  return t;
}

std::unique_ptr<Model> make_blackbox(const ModelSpec& spec);
std::unique_ptr<Model> make_cbm(const ModelSpec& spec);
std::unique_ptr<Model> make_cem(const ModelSpec& spec);

std::unique_ptr<Model> create_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::unique_ptr<Model> model;
  switch (spec.family) {
    case Family::Blackbox: model = make_blackbox(spec); break;
    case Family::CbmLinear:
    case Family::CbmMlp: model = make_cbm(spec); break;
    case Family::Cem: model = make_cem(spec); break;
    case Family::Vcem: model = std::make_unique<vi::VcemModel>(spec); break;
  }
  const Rng init = Rng::substream(seed, "init");
  auto& ps = model->params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i];
    Rng rng = init.child(p.name);
    if (p.name.rfind("prior.", 0) == 0) {
      for (double& v : p.value.values()) v = rng.normal();
    } else if (p.value.rows() > 1) {
      const double limit = spec.init_gain * std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
      for (double& v : p.value.values()) v = limit * (2.0 * rng.uniform() - 1.0);
    }
  }
  return model;
}

void save_bundle(const std::filesystem::path& dir, const Model& model, const data::Standardizer& standardizer) {
  std::filesystem::create_directories(dir);
  auto tensors = diff::to_named(model.params());
  if (!standardizer.empty()) {
    tensors.push_back({"standardizer.mean", Tensor({standardizer.mean.size()}, standardizer.mean)});
    tensors.push_back({"standardizer.scale", Tensor({standardizer.scale.size()}, standardizer.scale)});
  }
  diff::write_checkpoint(dir / "model.ckpt", tensors);
  std::ofstream f(dir / "spec.json");
  if (!f) throw ModelError("cannot write " + (dir / "spec.json").string());
  f << to_json(model.spec()) << "\n";
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
  std::ifstream f(dir / "spec.json");
  if (!f) throw ModelError("cannot open " + (dir / "spec.json").string());
  std::stringstream ss;
  ss << f.rdbuf();
  ModelBundle b;
  b.model = create_model(spec_from_json(ss.str()), 0);
  auto tensors = diff::read_checkpoint(dir / "model.ckpt");
  diff::load_into(b.model->params(), tensors);
  for (const auto& t : tensors) {
    if (t.name == "standardizer.mean") b.standardizer.mean = t.value.storage();
    if (t.name == "standardizer.scale") b.standardizer.scale = t.value.storage();
  }
  if (b.standardizer.mean.size() != b.standardizer.scale.size() ||
      (!b.standardizer.empty() && b.standardizer.mean.size() != b.model->spec().d))
    throw ModelError("checkpoint standardizer does not match the model input width");
  return b;
}

}  // namespace vcem::models
