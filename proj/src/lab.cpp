#include "vcem/lab.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <mutex>
#include <sstream>
#include <thread>

#ifndef VCEM_GIT_DESCRIBE
#define VCEM_GIT_DESCRIBE "unknown"
#endif

namespace vcem::lab {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using models::Family;

namespace {

std::string join_key(const std::string& where, const std::string& key) { return where.empty() ? key : where + "." + key; }

template <class T>
T get_as(const json& doc, const std::string& path) {
  const json* node = &doc;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) node = &node->at(part);
  try {
    return node->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + path + "' has the wrong type (" + node->dump() + ")");
  }
}

std::string number_text(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

const json& require(const json& desc, const char* key) {
  if (!desc.contains(key)) throw ConfigError("dataset." + std::string(key) + " is required for kind '" +
                                             desc.value("kind", std::string("?")) + "'");
  return desc.at(key);
}

void check_keys(const json& desc, std::initializer_list<const char*> allowed) {
  for (auto it = desc.begin(); it != desc.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return it.key() == a; }))
      throw ConfigError("unknown config key 'dataset." + it.key() + "'");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

// Relative dataset paths become absolute so a recorded config is usable from anywhere.
json absolutize(json desc, const fs::path& base) {
  if (!desc.is_object()) return desc;
  for (const char* key : {"images", "labels", "manifest"})
    if (desc.contains(key) && desc[key].is_string())
      desc[key] = fs::absolute(resolve(base, desc[key].get<std::string>())).lexically_normal().string();
  return desc;
}

data::ConceptDataset limit_rows(const data::ConceptDataset& ds, std::size_t limit) {
  if (limit == 0 || limit >= ds.size()) return ds;
  std::vector<std::size_t> idx(limit);
  for (std::size_t i = 0; i < limit; ++i) idx[i] = i;
  return ds.subset(idx);
}

}  // namespace

const char* version() { return VCEM_GIT_DESCRIBE; }

json default_config() {
  json families = json::array();
  for (Family f : models::all_families()) families.push_back(models::to_string(f));
  const interv::SweepGrid grid;
  return json{
      {"seed", 0},
      {"repeats", 3},
      {"jobs", 1},
      {"dataset", nullptr},
      {"split", {{"train", 0.7}, {"val", 0.1}, {"test", 0.2}}},
      {"model",
       {{"family", "vcem"},
        {"hidden", 64},
        {"m", 16},
        {"lambda_t", 0.1},
        {"lambda_p", 0.05},
        {"init_gain", 4.0},
        {"infer_condition", "threshold"}}},
      {"train",
       {{"max_epochs", 500},
        {"patience", 20},
        {"learning_rate", nullptr},
        {"lr_step", 100},
        {"lr_decay", 0.1},
        {"batch_size", 256},
        {"randint_prob", 0.25},
        {"randint_start_epoch", 3}}},
      {"sweep", {{"thetas", grid.thetas}, {"p_ints", grid.p_ints}, {"families", families}}},
      {"ablation", {{"lambda_p", {0.0, 0.05, 0.5}}}},
  };
}

void merge_config(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config " + (where.empty() ? std::string("root") : "'" + where + "'") +
                                            " must be a JSON object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = join_key(where, it.key());
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (key == "dataset" || !slot.is_object()) {
      slot = it.value();
    } else {
      merge_config(slot, it.value(), key);
    }
  }
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  // Keys below "dataset" are free-form; everything else must already exist.
  if (parts.size() > 1 && parts[0] == "dataset") {
    if (!config["dataset"].is_object()) config["dataset"] = json::object();
    json* node = &config["dataset"];
    for (std::size_t i = 1; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    (*node)[parts.back()] = value;
    return;
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge_config(config, patch);
}

std::vector<std::uint64_t> RunConfig::run_seeds() const {
  std::vector<std::uint64_t> s(repeats);
  for (std::size_t i = 0; i < repeats; ++i) s[i] = seed + i;
  return s;
}

RunConfig parse_config(const json& document, const fs::path& dataset_base) {
  json doc = default_config();
  merge_config(doc, document);
  RunConfig c;
  doc["dataset"] = absolutize(doc["dataset"], dataset_base);
  c.document = doc;
  c.dataset = doc["dataset"];
  c.seed = get_as<std::uint64_t>(doc, "seed");
  c.repeats = get_as<std::size_t>(doc, "repeats");
  c.jobs = get_as<std::size_t>(doc, "jobs");
  if (c.repeats == 0) throw ConfigError("config key 'repeats' must be at least 1");
  if (c.jobs == 0) throw ConfigError("config key 'jobs' must be at least 1");
  c.split_train = get_as<double>(doc, "split.train");
  c.split_val = get_as<double>(doc, "split.val");
  c.split_test = get_as<double>(doc, "split.test");
  if (!(c.split_train > 0 && c.split_val > 0 && c.split_test > 0 &&
        c.split_train + c.split_val + c.split_test <= 1.0 + 1e-12))
    throw ConfigError("config key 'split' needs positive fractions summing to at most 1");

  try {
    c.model.family = models::parse_family(get_as<std::string>(doc, "model.family"));
  } catch (const models::ModelError& e) {
    throw ConfigError(std::string("config key 'model.family': ") + e.what());
  }
  c.model.hidden = get_as<std::size_t>(doc, "model.hidden");
  c.model.m = get_as<std::size_t>(doc, "model.m");
  c.model.lambda_t = get_as<double>(doc, "model.lambda_t");
  c.model.lambda_p = get_as<double>(doc, "model.lambda_p");
  c.model.init_gain = get_as<double>(doc, "model.init_gain");
  if (!(c.model.init_gain > 0.0)) throw ConfigError("config key 'model.init_gain' must be positive");
  const auto cond = get_as<std::string>(doc, "model.infer_condition");
  if (cond != "threshold" && cond != "probs")
    throw ConfigError("config key 'model.infer_condition' must be threshold or probs");
  c.model.infer_condition = cond == "probs" ? models::InferCondition::Probs : models::InferCondition::Threshold;
  if (c.model.hidden == 0 || c.model.m == 0) throw ConfigError("config keys 'model.hidden' and 'model.m' must be positive");
  if (!(c.model.lambda_t >= 0.0 && c.model.lambda_t <= 1.0)) throw ConfigError("config key 'model.lambda_t' must lie in [0,1]");
  if (!(c.model.lambda_p >= 0.0)) throw ConfigError("config key 'model.lambda_p' must be non-negative");

  c.train.max_epochs = get_as<std::size_t>(doc, "train.max_epochs");
  c.train.patience = get_as<std::size_t>(doc, "train.patience");
  if (!doc["train"]["learning_rate"].is_null()) c.learning_rate = get_as<double>(doc, "train.learning_rate");
  c.train.lr_step = get_as<std::size_t>(doc, "train.lr_step");
  c.train.lr_decay = get_as<double>(doc, "train.lr_decay");
  c.train.batch_size = get_as<std::size_t>(doc, "train.batch_size");
  c.train.randint_prob = get_as<double>(doc, "train.randint_prob");
  c.train.randint_start_epoch = get_as<std::size_t>(doc, "train.randint_start_epoch");
  if (c.learning_rate) c.train.learning_rate = *c.learning_rate;
  try {
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config key 'train': ") + e.what());
  }

  c.grid.thetas = get_as<std::vector<double>>(doc, "sweep.thetas");
  c.grid.p_ints = get_as<std::vector<double>>(doc, "sweep.p_ints");
  c.grid.seeds = {0};
  for (const auto& [key, values] : {std::pair{"sweep.thetas", &c.grid.thetas}, std::pair{"sweep.p_ints", &c.grid.p_ints}})
    for (double v : *values)
      if (!(v >= 0.0 && v <= 1.0))
        throw ConfigError(std::string("config key '") + key + "': " + std::to_string(v) + " is outside [0,1]");
  try {
    c.grid.validate();
  } catch (const interv::InterventionError& e) {
    throw ConfigError(std::string("config key 'sweep': ") + e.what());
  }
  for (const auto& name : get_as<std::vector<std::string>>(doc, "sweep.families")) {
    try {
      c.sweep_families.push_back(models::parse_family(name));
    } catch (const models::ModelError& e) {
      throw ConfigError(std::string("config key 'sweep.families': ") + e.what());
    }
  }
  c.ablation_lambdas = get_as<std::vector<double>>(doc, "ablation.lambda_p");
  for (double l : c.ablation_lambdas)
    if (!(l >= 0.0)) throw ConfigError("config key 'ablation.lambda_p' values must be non-negative");
  if (!c.dataset.is_null() && !c.dataset.is_object()) throw ConfigError("config key 'dataset' must be an object");
  return c;
}

json read_dataset_descriptor(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open dataset descriptor '" + path.string() + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset descriptor '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("dataset descriptor '" + path.string() + "' must be an object");
  if (j.contains("sha256") && !j.contains("kind")) j = json{{"kind", "embeddings"}, {"manifest", path.filename().string()}};
  return absolutize(j, path.parent_path());
}

data::ConceptDataset load_dataset(const json& desc, const fs::path& base, std::uint64_t seed) {
  if (!desc.is_object() || !desc.contains("kind")) throw ConfigError("dataset descriptor needs a 'kind'");
  const auto kind = desc.at("kind").get<std::string>();
  try {
    if (kind == "synthetic") {
      check_keys(desc, {"kind", "rule", "d", "k", "n", "noise", "max_classes", "seed"});
      data::SyntheticSpec s;
      s.rule = data::parse_task_rule(desc.value("rule", std::string("tuple-class")));
      s.d = desc.value("d", s.d);
      s.k = desc.value("k", s.k);
      s.noise = desc.value("noise", s.noise);
      s.max_classes = desc.value("max_classes", s.max_classes);
      return data::gen_synthetic(s, desc.value("seed", seed), desc.value("n", std::size_t{4096}));
    }
    if (kind == "mnist-eo" || kind == "mnist-add") {
      check_keys(desc, {"kind", "images", "labels", "limit"});
      const auto images = data::read_idx_file(resolve(base, require(desc, "images").get<std::string>()));
      const auto labels = data::read_idx_file(resolve(base, require(desc, "labels").get<std::string>()));
      auto ds = kind == "mnist-eo" ? data::build_mnist_eo(images, labels) : data::build_mnist_add(images, labels, seed);
      return limit_rows(ds, desc.value("limit", std::size_t{0}));
    }
    if (kind == "embeddings") {
      check_keys(desc, {"kind", "manifest"});
      return data::load_embedding_dataset(resolve(base, require(desc, "manifest").get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset descriptor: ") + e.what());
  } catch (const data::DatasetError& e) {
    throw ConfigError(std::string("dataset descriptor: ") + e.what());
  }
  throw ConfigError("unknown dataset kind '" + kind + "' (expected synthetic, mnist-eo, mnist-add or embeddings)");
}

double default_learning_rate(const json& desc) {
  const auto kind = desc.value("kind", std::string());
  return kind == "synthetic" ? 5e-3 : 1e-3;
}

Prepared prepare(const RunConfig& config, std::uint64_t seed) {
  if (config.dataset.is_null()) throw ConfigError("no dataset given (use --dataset or the 'dataset' config key)");
  const auto full = load_dataset(config.dataset, {}, seed);
  auto sp = data::split3(full, config.split_train, config.split_val, config.split_test, seed);
  Prepared p;
  p.standardizer = data::Standardizer::fit(sp.train);
  p.train = p.standardizer.apply(sp.train);
  p.val = p.standardizer.apply(sp.val);
  p.test = p.standardizer.apply(sp.test);
  p.checksum = data::dataset_checksum(full);
  return p;
}

models::ModelSpec spec_for(const RunConfig& config, Family family, const data::ConceptDataset& ds) {
  models::ModelSpec s = config.model;
  s.family = family;
  s.d = ds.feature_dim();
  s.k = ds.concept_count();
  s.n_classes = ds.class_count();
  return s;
}

train::TrainConfig train_config_for(const RunConfig& config, std::uint64_t seed) {
  train::TrainConfig t = config.train;
  t.learning_rate = config.learning_rate.value_or(default_learning_rate(config.dataset));
  t.seed = seed;
  return t;
}

Run train_one(const RunConfig& config, Family family, std::uint64_t seed, const Prepared& data) {
  auto r = train::train(spec_for(config, family, data.train), data.train, data.val, train_config_for(config, seed));
  Run run{family, seed, std::move(r.model), std::move(r.history), {}};
  run.test = train::evaluate(*run.model, data.test);
  return run;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += jobs) guarded(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

json run_summary(const Run& run) {
  return json{{"family", models::to_string(run.family)},
              {"seed", run.seed},
              {"epochs", run.history.epochs.size()},
              {"best_epoch", run.history.best_epoch},
              {"test", json::parse(metrics::to_json(run.test))}};
}

SweepOutcome sweep_families(const RunConfig& config, const std::vector<Family>& families,
                            const std::vector<std::uint64_t>& seeds) {
  std::vector<Prepared> data(seeds.size());
  parallel_for(seeds.size(), config.jobs, [&](std::size_t s) { data[s] = prepare(config, seeds[s]); });

  SweepOutcome out;
  for (const auto& d : data) out.checksums.push_back(d.checksum);
  out.runs.resize(families.size() * seeds.size());
  parallel_for(out.runs.size(), config.jobs, [&](std::size_t i) {
    const std::size_t f = i / seeds.size(), s = i % seeds.size();
    out.runs[i] = train_one(config, families[f], seeds[s], data[s]);
  });

  const std::size_t nt = config.grid.thetas.size(), np = config.grid.p_ints.size(), ns = seeds.size();
  out.result.rows.resize(families.size() * nt * np * ns);
  std::vector<interv::SweepResult> per_seed(ns);
  parallel_for(ns, config.jobs, [&](std::size_t s) {
    std::vector<interv::NamedModel> named;
    for (std::size_t f = 0; f < families.size(); ++f)
      named.push_back({models::to_string(families[f]), out.runs[f * ns + s].model.get()});
    interv::SweepGrid grid = config.grid;
    grid.seeds = {seeds[s]};
    per_seed[s] = interv::sweep(named, data[s].test, grid);
  });
  // per_seed rows are (model, theta, p_int); interleave the seeds innermost.
  for (std::size_t s = 0; s < ns; ++s)
    for (std::size_t r = 0; r < per_seed[s].rows.size(); ++r) out.result.rows[r * ns + s] = per_seed[s].rows[r];
  return out;
}

std::string AblationOutcome::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "lambda_p,seed,task_accuracy,concept_accuracy,crc\n";
  for (const auto& r : rows) {
    os << r.lambda_p << ',' << r.seed << ',' << r.test.task_accuracy << ',' << r.test.concept_accuracy.value_or(0.0)
       << ',';
    if (r.test.crc && r.test.crc->crc) os << *r.test.crc->crc;
    os << '\n';
  }
  return os.str();
}

AblationOutcome ablate_lambda(const RunConfig& config, const std::vector<double>& lambdas,
                              const std::vector<std::uint64_t>& seeds) {
  std::vector<Prepared> data(seeds.size());
  parallel_for(seeds.size(), config.jobs, [&](std::size_t s) { data[s] = prepare(config, seeds[s]); });
  const std::size_t ns = seeds.size();
  std::vector<Run> runs(lambdas.size() * ns);
  parallel_for(runs.size(), config.jobs, [&](std::size_t i) {
    RunConfig c = config;
    c.model.lambda_p = lambdas[i / ns];
    runs[i] = train_one(c, Family::Vcem, seeds[i % ns], data[i % ns]);
  });

  AblationOutcome out;
  for (const auto& d : data) out.checksums.push_back(d.checksum);
  for (std::size_t i = 0; i < runs.size(); ++i) out.rows.push_back({lambdas[i / ns], seeds[i % ns], runs[i].test});
  const std::size_t nt = config.grid.thetas.size(), np = config.grid.p_ints.size();
  std::vector<interv::SweepResult> per_seed(ns);
  parallel_for(ns, config.jobs, [&](std::size_t s) {
    std::vector<interv::NamedModel> named;
    for (std::size_t l = 0; l < lambdas.size(); ++l)
      named.push_back({"vcem@lambda_p=" + number_text(lambdas[l]), runs[l * ns + s].model.get()});
    interv::SweepGrid grid = config.grid;
    grid.seeds = {seeds[s]};
    per_seed[s] = interv::sweep(named, data[s].test, grid);
  });
  out.sweep.rows.resize(lambdas.size() * nt * np * ns);
  for (std::size_t s = 0; s < ns; ++s)
    for (std::size_t r = 0; r < per_seed[s].rows.size(); ++r) out.sweep.rows[r * ns + s] = per_seed[s].rows[r];
  return out;
}

SampleAnswer query_sample(const models::Model& model, const data::ConceptDataset& split, const SampleQuery& q) {
  if (q.index >= split.size())
    throw std::out_of_range("sample " + std::to_string(q.index) + " out of range (split has " +
                            std::to_string(split.size()) + ")");
  if (!(q.theta >= 0.0 && q.theta <= 1.0)) throw interv::InterventionError("theta must lie in [0,1]");
  const std::size_t k = model.spec().k;
  if (!q.overrides.empty() && !models::is_concept_based(model.family()))
    throw interv::InterventionError("the " + models::to_string(model.family()) + " family has no concepts to override");
  for (const auto& [j, v] : q.overrides) {
    if (j >= k) throw interv::InterventionError("override index " + std::to_string(j) + " must be below k=" + std::to_string(k));
    if (v != 0 && v != 1) throw interv::InterventionError("override value for concept " + std::to_string(j) + " must be 0 or 1");
  }
  const std::size_t idx[] = {q.index};
  diff::Tensor x = split.feature_tensor(idx);
  SampleAnswer a;
  if (q.theta > 0.0) {
    Rng noise = Rng::substream(q.seed, "sample-noise").child("sample", q.index);
    x = interv::noise_blend(x, q.theta, noise);
    a.noisy = true;
  }
  const auto before = model.predict(x);
  a.class_probs_before = before.class_probs.storage();
  a.concept_probs_before = before.concept_probs.storage();
  if (q.overrides.empty()) {
    a.class_probs_after = a.class_probs_before;
    a.concept_probs_after = a.concept_probs_before;
    return a;
  }
  const auto ov = models::Overrides::broadcast(q.overrides, 1, k);
  const auto after = model.predict(x, &ov);
  a.class_probs_after = after.class_probs.storage();
  // Concept probabilities after an override are the override values where set.
  a.concept_probs_after = a.concept_probs_before;
  for (const auto& [j, v] : q.overrides) a.concept_probs_after[j] = v;
  return a;
}

json to_json(const SampleAnswer& a) {
  return json{{"pre", {{"concept_probs", a.concept_probs_before}, {"class_probs", a.class_probs_before}}},
              {"post", {{"concept_probs", a.concept_probs_after}, {"class_probs", a.class_probs_after}}}};
}

std::map<std::size_t, int> parse_overrides(const std::string& text) {
  std::map<std::size_t, int> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    std::size_t j = 0;
    int v = -1;
    try {
      if (eq == std::string::npos) throw std::invalid_argument(item);
      std::size_t used = 0;
      j = std::stoul(item.substr(0, eq), &used);
      if (used != eq) throw std::invalid_argument(item);
      v = std::stoi(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("override '" + item + "' is not index=0|1");
    }
    if (v != 0 && v != 1) throw ConfigError("override '" + item + "' must set 0 or 1");
    out[j] = v;
  }
  return out;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("'" + item + "' in list '" + text + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

void write_run_record(const fs::path& dir, const RunRecord& r) {
  json j{{"seed", r.seed}, {"family", models::to_string(r.family)}, {"config", r.config}};
  write_text(dir / "run.json", j.dump(2) + "\n");
}

RunRecord read_run_record(const fs::path& dir) {
  std::ifstream f(dir / "run.json");
  if (!f) throw std::runtime_error("cannot open " + (dir / "run.json").string());
  json j = json::parse(f);
  RunRecord r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.family = models::parse_family(j.at("family").get<std::string>());
  r.config = j.at("config");
  return r;
}

LoadedModel load_model_dir(const fs::path& dir) {
  LoadedModel lm;
  lm.bundle = models::load_bundle(dir);
  lm.record = read_run_record(dir);
  const RunConfig cfg = parse_config(lm.record.config);
  const auto full = load_dataset(cfg.dataset, {}, lm.record.seed);
  auto sp = data::split3(full, cfg.split_train, cfg.split_val, cfg.split_test, lm.record.seed);
  lm.test = lm.bundle.standardizer.empty() ? sp.test : lm.bundle.standardizer.apply(sp.test);
  lm.data_checksum = data::dataset_checksum(full);
  if (lm.test.feature_dim() != lm.bundle.model->spec().d)
    throw std::runtime_error("recorded dataset does not match the saved model input width");
  return lm;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  return data::sha256_hex(bytes);
}

void write_manifest(const fs::path& out, const std::string& command, const json& config,
                    const std::vector<std::uint64_t>& seeds, const std::map<std::string, std::string>& data_checksums,
                    const std::vector<std::string>& outputs) {
  json files = json::object();
  for (const auto& name : outputs) files[name] = sha256_file(out / name);
  json data = json::object();
  for (const auto& [k, v] : data_checksums) data[k] = v;
  json m{{"tool", "vcem"},   {"version", version()}, {"command", command}, {"seeds", seeds},
         {"config", config}, {"data", data},         {"outputs", files}};
  write_text(out / "manifest.json", m.dump(2) + "\n");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

EmbeddingTable read_embeddings_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path.string() + ": empty file");
  std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (cols < 4 || line.rfind("sample,concept,", 0) != 0)
    throw std::runtime_error(path.string() + ": expected header sample,concept,e0..,predicted");
  const std::size_t m = cols - 3;
  std::vector<std::vector<double>> rows;
  std::size_t n = 0, k = 0;
  for (std::size_t lineno = 2; std::getline(f, line); ++lineno) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::logic_error&) {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (v.size() != cols) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    n = std::max(n, static_cast<std::size_t>(v[0]) + 1);
    k = std::max(k, static_cast<std::size_t>(v[1]) + 1);
    rows.push_back(std::move(v));
  }
  if (rows.size() != n * k) throw std::runtime_error(path.string() + ": expected one row per (sample, concept)");
  EmbeddingTable t{diff::Tensor({n, k * m}), diff::Tensor({n, k}), m};
  for (const auto& v : rows) {
    const auto i = static_cast<std::size_t>(v[0]), j = static_cast<std::size_t>(v[1]);
    for (std::size_t z = 0; z < m; ++z) t.embeddings.at(i, j * m + z) = v[2 + z];
    t.probs.at(i, j) = v[2 + m];
  }
  return t;
}

}  // namespace vcem::lab
