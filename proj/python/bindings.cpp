#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "tsgnn/error.hpp"
#include "tsgnn/experiment.hpp"

namespace py = pybind11;
using namespace tsgnn;
using nlohmann::json;

namespace {

// Python passes configs as JSON text; missing keys keep their defaults.
TrainConfig train_config_from(const std::string& text) {
  json doc = TrainConfig{};
  doc.merge_patch(json::parse(text));
  return doc.get<TrainConfig>();
}

std::string trial_json(const GraphDataset& ds, const std::string& config) {
  const TrialResult r = run_trial(ds, train_config_from(config));
  json out = trial_record("", 0, r, "", 0.0);
  out.erase("trial_id");
  out.erase("checkpoint");
  out.erase("timing");
  return out.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-stage metric-learning GNN training";
  m.attr("__version__") = version_string();

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_RuntimeError);

  py::class_<GraphDataset>(m, "GraphDataset")
      .def_readonly("name", &GraphDataset::name)
      .def_readonly("num_classes", &GraphDataset::num_classes)
      .def_readonly("num_feature_categories", &GraphDataset::num_feature_categories)
      .def("__len__", [](const GraphDataset& d) { return d.graphs.size(); })
      .def("labels", &GraphDataset::labels)
      .def("mean_nodes", &GraphDataset::mean_nodes)
      .def("mean_edges", &GraphDataset::mean_edges)
      .def("save", [](const GraphDataset& d, const std::filesystem::path& p) { save_dataset(d, p); })
      .def("__repr__", [](const GraphDataset& d) {
        std::ostringstream s;
        s << "<GraphDataset " << d.name << ": " << d.graphs.size() << " graphs, " << d.num_classes << " classes>";
        return s.str();
      });

  m.def("load_tudataset", &parse_tudataset, py::arg("directory"), py::arg("name"));
  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("clique_path_dataset", [](std::size_t n, std::uint64_t seed) { return make_clique_path_dataset(n, seed); },
        py::arg("num_graphs") = 200, py::arg("seed") = 0);

  m.def("triplet_loss",
        [](std::vector<double> a, std::vector<double> p, std::vector<double> n, double margin) {
          Tape tape;
          return triplet_loss(tape, Tensor::vector(std::move(a)), Tensor::vector(std::move(p)),
                              Tensor::vector(std::move(n)), margin)
              .item();
        },
        py::arg("anchor"), py::arg("positive"), py::arg("negative"), py::arg("margin"));
  m.def("sample_triplets",
        [](const std::vector<std::size_t>& labels, const std::vector<std::size_t>& restricted, std::uint64_t seed) {
          std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> out;
          for (const auto& t : sample_triplets(labels, restricted, seed).triplets)
            out.emplace_back(t.anchor, t.positive, t.negative);
          return out;
        },
        py::arg("labels"), py::arg("restricted_to"), py::arg("seed"));

  m.def("explained_variance",
        [](const Eigen::MatrixXd& x) { return pca_explained_variance(EmbeddingMatrix{x, {}}).cumulative; },
        py::arg("embeddings"));
  m.def("intrinsic_dimension",
        [](const Eigen::MatrixXd& x, double threshold) {
          return intrinsic_dimension(pca_explained_variance(EmbeddingMatrix{x, {}}).cumulative, threshold);
        },
        py::arg("embeddings"), py::arg("threshold") = 0.99);
  m.def("avg_abs_correlation", [](const Eigen::MatrixXd& x) { return avg_abs_correlation(EmbeddingMatrix{x, {}}); },
        py::arg("embeddings"));

  m.def("_run_trial", &trial_json, py::arg("dataset"), py::arg("config_json"),
        py::call_guard<py::gil_scoped_release>());
  m.def("_run_experiment",
        [](const std::filesystem::path& config, const std::filesystem::path& out, std::size_t jobs) {
          RunOptions o;
          o.out_dir = out;
          o.jobs = jobs;
          std::ostringstream log;
          const RunStats s = run_experiment(load_experiment_config(config), o, log);
          return py::dict(py::arg("planned") = s.planned, py::arg("skipped") = s.skipped,
                          py::arg("completed") = s.completed);
        },
        py::arg("config"), py::arg("out"), py::arg("jobs") = 1);
  m.def("_report_json", [](const std::filesystem::path& out) {
    const Report r = build_report(out);
    return json{{"complete", summary_to_json(r.complete)},
                {"partial", summary_to_json(r.partial)},
                {"warnings", r.warnings},
                {"table", r.table}}
        .dump();
  });
}
