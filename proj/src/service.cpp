#include "vcem/service.hpp"

#include <httplib.h>

#include <chrono>
#include <thread>

namespace vcem::service {

using json = nlohmann::ordered_json;

namespace {

struct HttpError {
  int status;
  std::string code, message;
};

Response error(int status, const std::string& code, const std::string& message) {
  return {status, json{{"code", code}, {"message", message}}};
}

std::size_t sample_index(const json& body, std::size_t n) {
  if (!body.contains("sample_index")) throw HttpError{422, "invalid_request", "sample_index is required"};
  const auto& v = body["sample_index"];
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw HttpError{422, "invalid_request", "sample_index must be a non-negative integer"};
  const auto i = v.get<std::size_t>();
  if (i >= n) throw HttpError{404, "unknown_sample", "sample " + std::to_string(i) + " does not exist (split has " +
                                                        std::to_string(n) + " samples)"};
  return i;
}

std::size_t query_number(const Request& r, const char* key, std::size_t fallback) {
  auto it = r.query.find(key);
  if (it == r.query.end()) return fallback;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used != it->second.size() || v < 0) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw HttpError{422, "invalid_request", std::string(key) + " must be a non-negative integer"};
  }
}

}  // namespace

Service::Service(models::ModelBundle bundle, data::ConceptDataset split)
    : bundle_(std::move(bundle)), split_(std::move(split)) {
  const auto& spec = bundle_.model->spec();
  if (split_.feature_dim() != spec.d) throw std::invalid_argument("service split does not match the model input width");
  concept_names_ = split_.concept_names();
  if (concept_names_.size() != spec.k) {
    concept_names_.clear();
    for (std::size_t j = 0; j < spec.k; ++j) concept_names_.push_back("c" + std::to_string(j));
  }
  class_names_ = split_.class_names();
  if (class_names_.size() != spec.n_classes) {
    class_names_.clear();
    for (std::size_t c = 0; c < spec.n_classes; ++c) class_names_.push_back(std::to_string(c));
  }
}

Service Service::from_model_dir(const std::filesystem::path& dir) {
  auto lm = lab::load_model_dir(dir);
  return Service(std::move(lm.bundle), std::move(lm.test));
}

Response Service::handle(const Request& r) const {
  try {
    if (r.method == "GET" && r.path == "/meta") return meta();
    if (r.method == "GET" && r.path == "/samples") return samples(r);
    if (r.method == "POST" && (r.path == "/predict" || r.path == "/intervene")) {
      json body;
      try {
        body = json::parse(r.body);
      } catch (const nlohmann::json::exception& e) {
        return error(400, "malformed_json", e.what());
      }
      if (!body.is_object()) return error(422, "invalid_request", "request body must be a JSON object");
      return r.path == "/predict" ? predict(body) : intervene(body);
    }
    return error(404, "not_found", "no route for " + r.method + " " + r.path);
  } catch (const HttpError& e) {
    return error(e.status, e.code, e.message);
  }
}

Response Service::meta() const {
  const auto& s = bundle_.model->spec();
  return {200, json{{"family", models::to_string(s.family)},
                    {"k", s.k},
                    {"m", models::has_embeddings(s.family) ? s.m : std::size_t{0}},
                    {"N", s.n_classes},
                    {"samples", split_.size()},
                    {"concept_names", concept_names_},
                    {"class_names", class_names_}}};
}

Response Service::samples(const Request& r) const {
  const std::size_t offset = query_number(r, "offset", 0);
  const std::size_t limit = std::min<std::size_t>(query_number(r, "limit", 20), 1000);
  json items = json::array();
  for (std::size_t i = offset; i < std::min(split_.size(), offset + limit); ++i) {
    const auto c = split_.concept_row(i);
    items.push_back({{"index", i}, {"concepts", std::vector<int>(c.begin(), c.end())}, {"task", split_.tasks()[i]}});
  }
  return {200, json{{"total", split_.size()}, {"offset", offset}, {"limit", limit}, {"samples", items}}};
}

Response Service::predict(const json& body) const {
  const std::size_t i = sample_index(body, split_.size());
  lab::SampleQuery q;
  q.index = i;
  const auto a = lab::query_sample(*bundle_.model, split_, q);
  return {200, json{{"sample_index", i}, {"concept_probs", a.concept_probs_before}, {"class_probs", a.class_probs_before}}};
}

Response Service::intervene(const json& body) const {
  lab::SampleQuery q;
  q.index = sample_index(body, split_.size());
  if (body.contains("theta")) {
    if (!body["theta"].is_number()) throw HttpError{422, "invalid_theta", "theta must be a number in [0,1]"};
    q.theta = body["theta"].get<double>();
    if (!(q.theta >= 0.0 && q.theta <= 1.0)) throw HttpError{422, "invalid_theta", "theta must lie in [0,1]"};
  }
  if (body.contains("seed")) {
    if (!body["seed"].is_number_unsigned()) throw HttpError{422, "invalid_request", "seed must be a non-negative integer"};
    q.seed = body["seed"].get<std::uint64_t>();
  }
  if (body.contains("overrides")) {
    const auto& ov = body["overrides"];
    if (!ov.is_object()) throw HttpError{422, "invalid_override", "overrides must be an object {index: 0|1}"};
    const std::size_t k = bundle_.model->spec().k;
    for (auto it = ov.begin(); it != ov.end(); ++it) {
      std::size_t j = 0, used = 0;
      try {
        j = std::stoul(it.key(), &used);
      } catch (const std::logic_error&) {
        used = 0;
      }
      if (used == 0 || used != it.key().size() || it.key()[0] == '-')
        throw HttpError{422, "invalid_override", "override key '" + it.key() + "' is not a concept index"};
      if (!models::is_concept_based(bundle_.model->family()))
        throw HttpError{422, "invalid_override", "the blackbox family has no concepts to override"};
      if (j >= k)
        throw HttpError{422, "invalid_override", "override index " + it.key() + " must be below k=" + std::to_string(k)};
      if (!it.value().is_number_integer() || (it.value().get<int>() != 0 && it.value().get<int>() != 1))
        throw HttpError{422, "invalid_override", "override value for concept " + it.key() + " must be 0 or 1"};
      q.overrides[j] = it.value().get<int>();
    }
  }
  const auto a = lab::query_sample(*bundle_.model, split_, q);
  json out = lab::to_json(a);
  out["sample_index"] = q.index;
  out["theta"] = q.theta;
  out["seed"] = q.seed;
  return {200, out};
}

void serve(const Service& service, const std::string& host, int port, const std::atomic<bool>& stop,
           const std::function<void(int)>& on_bound) {
  httplib::Server server;
  auto adapt = [&service](const httplib::Request& req, httplib::Response& res) {
    Request r{req.method, req.path, {}, req.body};
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    const Response out = service.handle(r);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  server.Get(R"(/.*)", adapt);
  server.Post(R"(/.*)", adapt);
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  if (on_bound) on_bound(bound);
  std::atomic<bool> done{false};
  std::thread watcher([&] {
    while (!stop.load() && !done.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  });
  server.listen_after_bind();
  done = true;
  watcher.join();
}

}  // namespace vcem::service
