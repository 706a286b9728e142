#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vcem/lab.hpp"
#include "vcem/service.hpp"

namespace py = pybind11;
using namespace vcem;
using json = nlohmann::ordered_json;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

diff::Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return diff::Tensor({r, c}, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const diff::Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::dict dataset_dict(const data::ConceptDataset& ds) {
  py::dict d;
  d["features"] = to_array(ds.feature_tensor());
  py::array_t<std::uint8_t> c({ds.size(), ds.concept_count()});
  std::copy(ds.concepts().begin(), ds.concepts().end(), c.mutable_data());
  d["concepts"] = c;
  py::array_t<std::int32_t> y(ds.size());
  std::copy(ds.tasks().begin(), ds.tasks().end(), y.mutable_data());
  d["tasks"] = y;
  d["n_classes"] = ds.class_count();
  return d;
}

lab::RunConfig config_from(const std::string& text) {
  json full = lab::default_config();
  if (!text.empty()) lab::merge_config(full, json::parse(text));
  return lab::parse_config(full);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings to the V-CEM lab core";
  py::register_exception<lab::ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("version", &lab::version);
  m.def("default_config", [] { return lab::default_config().dump(); });
  m.def("resolve_config", [](const std::string& text) { return config_from(text).document.dump(); });

  m.def(
      "load_dataset",
      [](const std::string& descriptor, std::uint64_t seed) {
        return dataset_dict(lab::load_dataset(json::parse(descriptor), {}, seed));
      },
      py::arg("descriptor"), py::arg("seed") = 0);

  m.def(
      "noise_blend", [](const Array& x, double theta, const Array& eps) {
        return to_array(interv::noise_blend(to_tensor(x), theta, to_tensor(eps)));
      },
      py::arg("x"), py::arg("theta"), py::arg("eps"));

  m.def(
      "crc",
      [](const Array& embeddings, const Array& probs, std::size_t m) {
        const auto r = metrics::crc(to_tensor(embeddings), to_tensor(probs), m);
        py::list per;
        for (const auto& v : r.per_concept) per.append(v ? py::cast(*v) : py::none());
        return py::make_tuple(r.crc ? py::cast(*r.crc) : py::none(), per);
      },
      py::arg("embeddings"), py::arg("probs"), py::arg("m"));

  m.def(
      "train",
      [](const std::string& config, std::uint64_t seed, const std::string& out) {
        const auto cfg = config_from(config);
        lab::Run run;
        lab::Prepared data;
        {
          py::gil_scoped_release release;
          data = lab::prepare(cfg, seed);
          run = lab::train_one(cfg, cfg.model.family, seed, data);
        }
        if (!out.empty()) {
          const std::filesystem::path dir(out);
          models::save_bundle(dir / "model", *run.model, data.standardizer);
          lab::write_run_record(dir / "model", {cfg.document, seed, cfg.model.family});
          run.history.write_csv(dir / "history.csv");
          lab::write_text(dir / "report.json", lab::run_summary(run).dump(2) + "\n");
        }
        return lab::run_summary(run).dump();
      },
      py::arg("config"), py::arg("seed") = 0, py::arg("out") = "");

  py::class_<service::Service>(m, "Service")
      .def(py::init([](const std::string& dir) { return service::Service::from_model_dir(dir); }), py::arg("model_dir"))
      .def(
          "handle",
          [](const service::Service& s, const std::string& method, const std::string& path, const std::string& body,
             const std::map<std::string, std::string>& query) {
            const auto r = s.handle({method, path, query, body});
            return py::make_tuple(r.status, r.body.dump());
          },
          py::arg("method"), py::arg("path"), py::arg("body") = "", py::arg("query") = std::map<std::string, std::string>{});
}
