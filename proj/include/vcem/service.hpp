#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <string>

#include "vcem/lab.hpp"

namespace vcem::service {

struct Request {
  std::string method, path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct Response {
  int status = 200;
  nlohmann::ordered_json body;
};

/// Read-only inference state: one model and the split it serves.
class Service {
 public:
  Service(models::ModelBundle bundle, data::ConceptDataset split);
  static Service from_model_dir(const std::filesystem::path& model_dir);

  /// Dispatches GET /meta, GET /samples, POST /predict and POST /intervene.
  /// Errors come back as {code, message} with status 400, 404 or 422.
  Response handle(const Request& request) const;

  const models::Model& model() const { return *bundle_.model; }
  const data::ConceptDataset& split() const { return split_; }

 private:
  Response meta() const;
  Response samples(const Request& r) const;
  Response predict(const nlohmann::ordered_json& body) const;
  Response intervene(const nlohmann::ordered_json& body) const;

  models::ModelBundle bundle_;
  data::ConceptDataset split_;
  std::vector<std::string> concept_names_, class_names_;
};

/// Serves on host:port until `stop` is set (checked every 100 ms) or the
/// process is signalled; port 0 picks a free port and reports it via `on_bound`.
void serve(const Service& service, const std::string& host, int port, const std::atomic<bool>& stop,
           const std::function<void(int)>& on_bound = {});

}  // namespace vcem::service
