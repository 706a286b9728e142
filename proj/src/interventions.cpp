#include "vcem/interventions.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <thread>

#include "vcem/metrics.hpp"
#include "vcem/trainer.hpp"

namespace vcem::interv {

using diff::Tensor;

namespace {

void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) throw InterventionError(std::string(what) + " must lie in [0,1]");
}

std::uint64_t key_of(double v) { return std::bit_cast<std::uint64_t>(v); }

}  // namespace

Tensor noise_blend(const Tensor& x, double theta, const Tensor& eps) {
  check_unit(theta, "theta");
  if (eps.shape() != x.shape()) throw diff::ShapeError("noise_blend: eps must match x");
  if (theta == 0.0) return x;
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - theta) * x[i] + theta * eps[i];
  return out;
}

Tensor noise_blend(const Tensor& x, double theta, Rng& rng) {
  check_unit(theta, "theta");
  Tensor eps(x.shape());
  for (double& e : eps.values()) e = rng.normal();
  return noise_blend(x, theta, eps);
}

models::Overrides select_misclassified(const Tensor& probs, const Tensor& c_true, double p_int, Rng& rng) {
  check_unit(p_int, "p_int");
  if (probs.shape() != c_true.shape()) throw diff::ShapeError("select_misclassified: probs and c_true differ in shape");
  models::Overrides o{Tensor(probs.shape()), c_true};
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double u = rng.uniform();
    const bool wrong = (probs[i] > 0.5) != (c_true[i] > 0.5);
    if (wrong && u < p_int) o.mask[i] = 1.0;
  }
  return o;
}

Intervened intervene(const models::Model& model, const Tensor& x, const Tensor& c_true, double p_int, Rng& rng) {
  if (!models::is_concept_based(model.family()))
    throw InterventionError("interventions are unsupported for the " + models::to_string(model.family()) + " family");
  Intervened r;
  r.before = train::predict_all(model, x);
  r.applied = select_misclassified(r.before.concept_probs, c_true, p_int, rng);
  r.after = r.applied.active() ? train::predict_all(model, x, &r.applied) : r.before;
  return r;
}

void SweepGrid::validate() const {
  if (thetas.empty() || p_ints.empty()) throw InterventionError("sweep grid needs theta and p_int values");
  if (seeds.empty()) throw InterventionError("sweep grid needs at least one repeat");
  for (double t : thetas) check_unit(t, "theta");
  for (double p : p_ints) check_unit(p, "p_int");
}

Rng noise_stream(std::uint64_t seed, double theta) { return Rng::substream(seed, "noise").child("theta", key_of(theta)); }

Rng intervention_stream(std::uint64_t seed, double theta, double p_int) {
  return Rng::substream(seed, "interventions").child("theta", key_of(theta)).child("p_int", key_of(p_int));
}

SweepResult sweep(const std::vector<NamedModel>& models, const data::ConceptDataset& ds, const SweepGrid& grid,
                  std::size_t jobs) {
  grid.validate();
  if (ds.size() == 0) throw InterventionError("sweep needs a non-empty dataset");
  const Tensor x = ds.feature_tensor();
  const Tensor c = ds.concept_tensor();
  const std::size_t per_model = grid.thetas.size() * grid.p_ints.size() * grid.seeds.size();
  SweepResult result;
  result.rows.resize(models.size() * per_model);

  // One task per (model, theta, seed): the noisy input and the unintervened
  // prediction are shared by every p_int of that task.
  struct Task {
    std::size_t model, theta, seed;
  };
  std::vector<Task> tasks;
  for (std::size_t mi = 0; mi < models.size(); ++mi)
    for (std::size_t ti = 0; ti < grid.thetas.size(); ++ti)
      for (std::size_t si = 0; si < grid.seeds.size(); ++si) tasks.push_back({mi, ti, si});

  std::vector<std::string> errors(tasks.size());
  auto run = [&](std::size_t t) {
    const Task& task = tasks[t];
    const auto& nm = models[task.model];
    const double theta = grid.thetas[task.theta];
    const std::uint64_t seed = grid.seeds[task.seed];
    double p_int = 0.0;
    try {
      Rng noise = noise_stream(seed, theta);
      const Tensor xt = noise_blend(x, theta, noise);
      const auto base = train::predict_all(*nm.model, xt);
      for (std::size_t pi = 0; pi < grid.p_ints.size(); ++pi) {
        p_int = grid.p_ints[pi];
        double acc;
        if (!models::is_concept_based(nm.model->family())) {
          acc = metrics::task_accuracy(base.class_probs, ds.tasks());
        } else {
          Rng draws = intervention_stream(seed, theta, p_int);
          auto ov = select_misclassified(base.concept_probs, c, p_int, draws);
          const auto& probs = ov.active() ? train::predict_all(*nm.model, xt, &ov).class_probs : base.class_probs;
          acc = metrics::task_accuracy(probs, ds.tasks());
        }
        const std::size_t row = task.model * per_model + (task.theta * grid.p_ints.size() + pi) * grid.seeds.size() + task.seed;
        result.rows[row] = {nm.name, theta, p_int, seed, acc};
      }
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << "sweep cell (model=" << nm.name << ", theta=" << theta << ", p_int=" << p_int << ", seed=" << seed
         << "): " << e.what();
      errors[t] = os.str();
    }
  };

  jobs = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  if (jobs == 1) {
    for (std::size_t t = 0; t < tasks.size(); ++t) run(t);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < tasks.size(); t += jobs) run(t);
      });
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (!e.empty()) throw InterventionError(e);
  return result;
}

std::vector<SweepSummary> SweepResult::summary() const {
  std::vector<SweepSummary> out;
  std::map<std::tuple<std::string, double, double>, std::size_t> index;
  std::vector<std::vector<double>> values;
  for (const auto& r : rows) {
    auto key = std::make_tuple(r.model, r.theta, r.p_int);
    auto [it, fresh] = index.emplace(key, out.size());
    if (fresh) {
      out.push_back({r.model, r.theta, r.p_int});
      values.emplace_back();
    }
    values[it->second].push_back(r.accuracy);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& v = values[i];
    double mean = 0.0;
    for (double a : v) mean += a;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double a : v) var += (a - mean) * (a - mean);
    out[i].mean = mean;
    out[i].stddev = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    out[i].repeats = v.size();
  }
  return out;
}

std::string SweepResult::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "model,theta,p_int,seed,accuracy\n";
  for (const auto& r : rows) os << r.model << ',' << r.theta << ',' << r.p_int << ',' << r.seed << ',' << r.accuracy << '\n';
  return os.str();
}

std::string SweepResult::summary_json() const {
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const auto& s : summary())
    cells.push_back({{"model", s.model}, {"theta", s.theta}, {"p_int", s.p_int}, {"mean", s.mean},
                     {"std", s.stddev}, {"repeats", s.repeats}});
  return nlohmann::ordered_json{{"cells", cells}}.dump(2);
}

void SweepResult::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << to_csv();
}

}  // namespace vcem::interv
