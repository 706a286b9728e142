#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

#include "vcem/lab.hpp"
#include "vcem/service.hpp"

using namespace vcem;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::atomic<bool> g_stop{false};

struct Common {
  std::string config_path, out = "out", dataset, family, theta_grid, pint_grid;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs, repeats;
  std::optional<double> lambda_p, lambda_t;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "run seed (first of the repeats)");
  cmd->add_option("--jobs", c.jobs, "parallel jobs");
  cmd->add_option("--repeats", c.repeats, "number of seeds for multi-run commands");
  cmd->add_option("--family", c.family, "model family, or a comma list for sweep");
  cmd->add_option("--dataset", c.dataset, "dataset descriptor or embedding manifest (JSON)");
  cmd->add_option("--lambda-p", c.lambda_p, "prior-matching weight");
  cmd->add_option("--lambda-t", c.lambda_t, "task-loss weight");
  cmd->add_option("--theta-grid", c.theta_grid, "comma list of noise levels");
  cmd->add_option("--pint-grid", c.pint_grid, "comma list of intervention probabilities");
  cmd->add_option("--set", c.sets, "dot-path override key=value (repeatable)");
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string s; std::getline(ss, s, ',');)
    if (!s.empty()) out.push_back(s);
  return out;
}

lab::RunConfig resolve_config(const Common& c, std::optional<std::size_t> default_repeats = {}) {
  json doc = json::object();
  fs::path base;
  if (!c.config_path.empty()) {
    std::ifstream f(c.config_path);
    try {
      doc = json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw lab::ConfigError("config file '" + c.config_path + "' is not valid JSON: " + e.what());
    }
    base = fs::path(c.config_path).parent_path();
  }
  json full = lab::default_config();
  lab::merge_config(full, doc);
  if (default_repeats && !doc.contains("repeats")) full["repeats"] = *default_repeats;
  if (!c.dataset.empty()) full["dataset"] = lab::read_dataset_descriptor(c.dataset);
  if (c.seed) full["seed"] = *c.seed;
  if (c.jobs) full["jobs"] = *c.jobs;
  if (c.repeats) full["repeats"] = *c.repeats;
  if (c.lambda_p) full["model"]["lambda_p"] = *c.lambda_p;
  if (c.lambda_t) full["model"]["lambda_t"] = *c.lambda_t;
  if (!c.theta_grid.empty()) full["sweep"]["thetas"] = lab::parse_list(c.theta_grid);
  if (!c.pint_grid.empty()) full["sweep"]["p_ints"] = lab::parse_list(c.pint_grid);
  if (!c.family.empty()) {
    const auto names = split_names(c.family);
    full["sweep"]["families"] = names;
    if (names.size() == 1) full["model"]["family"] = names[0];
  }
  for (const auto& s : c.sets) lab::apply_override(full, s);
  return lab::parse_config(full, base);
}

void save_run(const fs::path& dir, const lab::RunConfig& cfg, const lab::Run& run, const lab::Prepared& data) {
  models::save_bundle(dir / "model", *run.model, data.standardizer);
  json record_cfg = cfg.document;
  record_cfg["model"]["family"] = models::to_string(run.family);
  lab::write_run_record(dir / "model", {record_cfg, run.seed, run.family});
  run.history.write_csv(dir / "history.csv");
  lab::write_text(dir / "report.json", lab::run_summary(run).dump(2) + "\n");
}

json mean_std(const std::vector<double>& v) {
  double mean = 0.0, var = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (double x : v) var += (x - mean) * (x - mean);
  return json{{"mean", mean}, {"std", v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0}};
}

int cmd_build_data(const Common& c) {
  const auto cfg = resolve_config(c);
  if (cfg.dataset.is_null()) throw lab::ConfigError("build-data needs --dataset or a 'dataset' config key");
  const auto ds = lab::load_dataset(cfg.dataset, {}, cfg.seed);
  const fs::path out(c.out);
  const auto m = data::write_embedding_dataset(ds, out, "dataset");
  lab::write_manifest(out, "build-data", cfg.document, {cfg.seed}, {{"dataset", m.sha256}},
                      {"dataset.json", m.features.string(), m.concepts.string(), m.tasks.string()});
  std::cout << "wrote " << ds.size() << " samples (d=" << ds.feature_dim() << ", k=" << ds.concept_count()
            << ", N=" << ds.class_count() << ") to " << (out / "dataset.json").string() << "\n";
  return 0;
}

int cmd_train(const Common& c) {
  const auto cfg = resolve_config(c, 1);
  const auto seeds = cfg.run_seeds();
  const fs::path out(c.out);
  std::vector<lab::Prepared> data(seeds.size());
  std::vector<lab::Run> runs(seeds.size());
  lab::parallel_for(seeds.size(), cfg.jobs, [&](std::size_t i) {
    data[i] = lab::prepare(cfg, seeds[i]);
    runs[i] = lab::train_one(cfg, cfg.model.family, seeds[i], data[i]);
  });
  std::map<std::string, std::string> checksums;
  std::vector<std::string> outputs;
  if (seeds.size() == 1) {
    save_run(out, cfg, runs[0], data[0]);
    checksums["dataset"] = data[0].checksum;
    outputs = {"report.json", "history.csv", "model/model.ckpt", "model/spec.json"};
  } else {
    json report{{"runs", json::array()}};
    std::vector<double> task, concept_acc, crc;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const std::string sub = "seed-" + std::to_string(seeds[i]);
      save_run(out / sub, cfg, runs[i], data[i]);
      checksums["dataset@seed=" + std::to_string(seeds[i])] = data[i].checksum;
      for (const char* f : {"report.json", "history.csv", "model/model.ckpt"}) outputs.push_back(sub + "/" + f);
      report["runs"].push_back(lab::run_summary(runs[i]));
      task.push_back(runs[i].test.task_accuracy);
      if (runs[i].test.concept_accuracy) concept_acc.push_back(*runs[i].test.concept_accuracy);
      if (runs[i].test.crc && runs[i].test.crc->crc) crc.push_back(*runs[i].test.crc->crc);
    }
    report["task_accuracy"] = mean_std(task);
    if (!concept_acc.empty()) report["concept_accuracy"] = mean_std(concept_acc);
    if (!crc.empty()) report["crc"] = mean_std(crc);
    lab::write_text(out / "report.json", report.dump(2) + "\n");
    outputs.insert(outputs.begin(), "report.json");
  }
  lab::write_manifest(out, "train", cfg.document, seeds, checksums, outputs);
  for (const auto& r : runs)
    std::cout << models::to_string(r.family) << " seed " << r.seed << ": epochs " << r.history.epochs.size()
              << ", test task accuracy " << r.test.task_accuracy << "\n";
  return 0;
}

int cmd_eval(const Common& c, const std::string& model_dir, std::optional<std::size_t> sample,
             const std::string& overrides, double theta) {
  auto lm = lab::load_model_dir(model_dir);
  const fs::path out(c.out);
  const std::uint64_t seed = c.seed.value_or(lm.record.seed);
  if (sample) {
    lab::SampleQuery q{*sample, lab::parse_overrides(overrides), theta, seed};
    if (q.index >= lm.test.size())
      throw std::runtime_error("sample " + std::to_string(q.index) + " out of range (test split has " +
                               std::to_string(lm.test.size()) + ")");
    json j = lab::to_json(lab::query_sample(*lm.bundle.model, lm.test, q));
    j["sample_index"] = q.index;
    j["theta"] = q.theta;
    j["seed"] = q.seed;
    std::cout << j.dump(2) << "\n";
    lab::write_text(out / "query.json", j.dump(2) + "\n");
    lab::write_manifest(out, "eval", lm.record.config, {seed}, {{"dataset", lm.data_checksum}}, {"query.json"});
    return 0;
  }
  data::ConceptDataset ds = lm.test;
  std::string checksum = lm.data_checksum;
  if (!c.dataset.empty()) {
    const auto full = lab::load_dataset(lab::read_dataset_descriptor(c.dataset), {}, seed);
    ds = lm.bundle.standardizer.empty() ? full : lm.bundle.standardizer.apply(full);
    checksum = data::dataset_checksum(full);
  }
  const auto rep = train::evaluate(*lm.bundle.model, ds);
  json j{{"family", models::to_string(lm.bundle.model->family())},
         {"seed", lm.record.seed},
         {"test", json::parse(metrics::to_json(rep))}};
  lab::write_text(out / "report.json", j.dump(2) + "\n");
  lab::write_manifest(out, "eval", lm.record.config, {lm.record.seed}, {{"dataset", checksum}}, {"report.json"});
  std::cout << metrics::to_json(rep) << "\n";
  return 0;
}

int cmd_sweep(const Common& c) {
  const auto cfg = resolve_config(c);
  const auto seeds = cfg.run_seeds();
  const auto outcome = lab::sweep_families(cfg, cfg.sweep_families, seeds);
  const fs::path out(c.out);
  outcome.result.write_csv(out / "sweep.csv");
  lab::write_text(out / "sweep_summary.json", outcome.result.summary_json() + "\n");
  json report{{"runs", json::array()}};
  for (const auto& r : outcome.runs) report["runs"].push_back(lab::run_summary(r));
  lab::write_text(out / "report.json", report.dump(2) + "\n");
  std::map<std::string, std::string> checksums;
  for (std::size_t i = 0; i < seeds.size(); ++i)
    checksums["dataset@seed=" + std::to_string(seeds[i])] = outcome.checksums[i];
  lab::write_manifest(out, "sweep", cfg.document, seeds, checksums, {"sweep.csv", "sweep_summary.json", "report.json"});
  std::cout << "wrote " << outcome.result.rows.size() << " sweep rows to " << (out / "sweep.csv").string() << "\n";
  return 0;
}

int cmd_ablate(const Common& c, const std::string& values) {
  const auto cfg = resolve_config(c);
  const auto lambdas = values.empty() ? cfg.ablation_lambdas : lab::parse_list(values);
  for (double l : lambdas)
    if (!(l >= 0.0)) throw lab::ConfigError("--values: lambda_p must be non-negative");
  const auto seeds = cfg.run_seeds();
  const auto outcome = lab::ablate_lambda(cfg, lambdas, seeds);
  const fs::path out(c.out);
  std::vector<std::string> outputs{"ablation.csv", "sweep.csv", "report.json"};
  json combined{{"lambda_p", json::array()}};
  for (double l : lambdas) {
    std::ostringstream name;
    name << "lambda_p=" << l;
    json per{{"lambda_p", l}, {"runs", json::array()}};
    std::vector<double> task, crc;
    for (const auto& r : outcome.rows) {
      if (r.lambda_p != l) continue;
      per["runs"].push_back({{"seed", r.seed}, {"test", json::parse(metrics::to_json(r.test))}});
      task.push_back(r.test.task_accuracy);
      if (r.test.crc && r.test.crc->crc) crc.push_back(*r.test.crc->crc);
    }
    per["task_accuracy"] = mean_std(task);
    if (!crc.empty()) per["crc"] = mean_std(crc);
    lab::write_text(out / name.str() / "report.json", per.dump(2) + "\n");
    outputs.push_back(name.str() + "/report.json");
    combined["lambda_p"].push_back(per);
  }
  lab::write_text(out / "ablation.csv", outcome.to_csv());
  outcome.sweep.write_csv(out / "sweep.csv");
  lab::write_text(out / "report.json", combined.dump(2) + "\n");
  std::map<std::string, std::string> checksums;
  for (std::size_t i = 0; i < seeds.size(); ++i)
    checksums["dataset@seed=" + std::to_string(seeds[i])] = outcome.checksums[i];
  lab::write_manifest(out, "ablate-lambda", cfg.document, seeds, checksums, outputs);
  std::cout << outcome.to_csv();
  return 0;
}

int cmd_export(const Common& c, const std::string& model_dir) {
  auto lm = lab::load_model_dir(model_dir);
  const auto pred = train::predict_all(*lm.bundle.model, lm.test.feature_tensor());
  if (pred.embeddings.empty()) throw std::runtime_error("the blackbox family has no concept embeddings to export");
  const fs::path out(c.out);
  fs::create_directories(out);
  metrics::write_embeddings_csv(out / "embeddings.csv", pred.embeddings, pred.concept_probs,
                                train::embedding_width(*lm.bundle.model));
  lab::write_manifest(out, "export-embeddings", lm.record.config, {lm.record.seed}, {{"dataset", lm.data_checksum}},
                      {"embeddings.csv"});
  std::cout << "wrote " << lm.test.size() << " x " << lm.bundle.model->spec().k << " embedding rows to "
            << (out / "embeddings.csv").string() << "\n";
  return 0;
}

int cmd_crc(const Common& c, const std::string& model_dir, const std::string& embeddings) {
  if (model_dir.empty() == embeddings.empty()) throw lab::ConfigError("crc needs exactly one of --model or --embeddings");
  metrics::CrcResult r;
  json cfg = json::object();
  std::map<std::string, std::string> checksums;
  std::vector<std::uint64_t> seeds;
  if (!embeddings.empty()) {
    const auto t = lab::read_embeddings_csv(embeddings);
    r = metrics::crc(t.embeddings, t.probs, t.m);
    checksums["embeddings"] = lab::sha256_file(embeddings);
  } else {
    auto lm = lab::load_model_dir(model_dir);
    if (!models::is_concept_based(lm.bundle.model->family()))
      throw std::runtime_error("the blackbox family has no concept representations");
    const auto pred = train::predict_all(*lm.bundle.model, lm.test.feature_tensor());
    r = metrics::crc(pred.embeddings, pred.concept_probs, train::embedding_width(*lm.bundle.model));
    cfg = lm.record.config;
    seeds = {lm.record.seed};
    checksums["dataset"] = lm.data_checksum;
  }
  json per = json::array();
  for (const auto& v : r.per_concept) per.push_back(v ? json(*v) : json(nullptr));
  json j{{"crc", r.crc ? json(*r.crc) : json(nullptr)}, {"per_concept_silhouette", per}, {"skipped_concepts", r.skipped}};
  const fs::path out(c.out);
  lab::write_text(out / "report.json", j.dump(2) + "\n");
  lab::write_manifest(out, "crc", cfg, seeds, checksums, {"report.json"});
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_serve(const std::string& model_dir, const std::string& host, int port) {
  const auto svc = service::Service::from_model_dir(model_dir);
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  service::serve(svc, host, port, g_stop, [&](int bound) {
    std::cout << "serving " << models::to_string(svc.model().family()) << " on http://" << host << ":" << bound
              << " (" << svc.split().size() << " samples)" << std::endl;
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"V-CEM lab: concept-based models, interventions and representation metrics"};
  app.require_subcommand(1);
  Common c;
  std::string model_dir, overrides, embeddings, values, host = "127.0.0.1";
  std::optional<std::size_t> sample;
  double theta = 0.0;
  int port = 8080;

  auto* build = app.add_subcommand("build-data", "materialize a dataset in the embedding-blob format");
  auto* train = app.add_subcommand("train", "train one family (per seed) and evaluate on the test split");
  auto* eval = app.add_subcommand("eval", "evaluate a saved model, or query one sample with interventions");
  auto* sweep = app.add_subcommand("sweep", "train families and run the noise x intervention sweep");
  auto* ablate = app.add_subcommand("ablate-lambda", "V-CEM lambda_p ablation with sweeps");
  auto* exportc = app.add_subcommand("export-embeddings", "write test-split concept embeddings as CSV");
  auto* crc = app.add_subcommand("crc", "concept representation cohesiveness of a model or embeddings CSV");
  auto* serve = app.add_subcommand("serve", "HTTP inference service for a saved model");
  for (auto* cmd : {build, train, eval, sweep, ablate, exportc, crc, serve}) add_common(cmd, c);
  for (auto* cmd : {eval, exportc, crc, serve}) cmd->add_option("--model", model_dir, "saved model directory");
  eval->add_option("--sample", sample, "test-split sample index to query");
  eval->add_option("--overrides", overrides, "concept overrides, e.g. 0=1,3=0");
  eval->add_option("--theta", theta, "input noise level for --sample")->check(CLI::Range(0.0, 1.0));
  ablate->add_option("--values", values, "comma list of lambda_p values");
  crc->add_option("--embeddings", embeddings, "embeddings.csv from export-embeddings")->check(CLI::ExistingFile);
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str()->check(CLI::Range(0, 65535));
  for (auto* cmd : {eval, exportc, serve}) cmd->get_option("--model")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (!*serve) fs::create_directories(c.out);
    if (*build) return cmd_build_data(c);
    if (*train) return cmd_train(c);
    if (*eval) return cmd_eval(c, model_dir, sample, overrides, theta);
    if (*sweep) return cmd_sweep(c);
    if (*ablate) return cmd_ablate(c, values);
    if (*exportc) return cmd_export(c, model_dir);
    if (*crc) return cmd_crc(c, model_dir, embeddings);
    if (*serve) return cmd_serve(model_dir, host, port);
  } catch (const lab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
