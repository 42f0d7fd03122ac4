#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "xmbench/bench.hpp"

namespace py = pybind11;

namespace {

xmb::SynthSpec spec_from_json_text(const std::string& text) {
  return xmb::synth_spec_from_json(nlohmann::json::parse(text));
}

xmb::RunConfig config_from_json_text(const std::string& text) {
  return xmb::parse_run_config(nlohmann::json::parse(text));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cross-modal retrieval benchmark core";

  py::class_<xmb::CrossModalDataset>(m, "Dataset")
      .def_property_readonly("name",
                             [](const xmb::CrossModalDataset& d) { return d.name; })
      .def_property_readonly("num_samples", &xmb::CrossModalDataset::num_samples)
      .def_property_readonly(
          "num_classes",
          [](const xmb::CrossModalDataset& d) { return d.labels.num_classes; })
      .def_property_readonly(
          "dim_a",
          [](const xmb::CrossModalDataset& d) {
            return static_cast<int>(d.modality_a.cols());
          })
      .def_property_readonly(
          "dim_b",
          [](const xmb::CrossModalDataset& d) {
            return static_cast<int>(d.modality_b.cols());
          })
      .def_property_readonly(
          "sample_ids",
          [](const xmb::CrossModalDataset& d) { return d.sample_ids; })
      .def("labels_of",
           [](const xmb::CrossModalDataset& d, int row) {
             if (row < 0 || row >= d.num_samples()) {
               throw py::index_error("sample row out of range");
             }
             const auto& s = d.labels.labels[static_cast<std::size_t>(row)];
             return std::vector<int>(s.begin(), s.end());
           })
      .def("save",
           [](const xmb::CrossModalDataset& d, const std::string& path) {
             xmb::write_dataset(d, path);
           })
      .def_static("synthetic",
                  [](const std::string& spec_json) {
                    return xmb::generate_synthetic(spec_from_json_text(spec_json));
                  })
      .def_static("load", [](const std::string& path) {
        return xmb::load_dataset(path);
      });

  m.def("fold_plan_json",
        [](const xmb::CrossModalDataset& dataset, int folds, std::uint64_t seed,
           double fraction_db) {
          return xmb::make_fold_plan(dataset, folds, seed, fraction_db).to_json();
        },
        py::arg("dataset"), py::arg("folds") = 5, py::arg("seed") = 7,
        py::arg("fraction_db") = 0.8);

  m.def("run_benchmark_json",
        [](const std::string& config_json, const std::string& out_dir, int jobs) {
          xmb::RunConfig config = config_from_json_text(config_json);
          xmb::CrossModalDataset dataset = xmb::acquire_dataset(config);
          xmb::RunOutcome outcome =
              xmb::run_benchmark(config, dataset, jobs, out_dir);
          if (!out_dir.empty()) xmb::emit_report(outcome, out_dir);
          return outcome.report.to_json();
        },
        py::arg("config_json"), py::arg("out_dir") = "", py::arg("jobs") = 0);

  m.def("config_hash_json", [](const std::string& config_json) {
    return xmb::config_hash(config_from_json_text(config_json));
  });

  m.def("score_run_json",
        [](const std::string& run_path, const std::string& qrels_path) {
          xmb::RunFile run = xmb::read_run_file(run_path);
          xmb::LabeledIds qrels = xmb::read_label_table(qrels_path);
          return xmb::score_run(run, qrels.sample_ids, qrels.labels).dump();
        });

  m.def("average_precision", [](const std::vector<std::uint8_t>& rel) {
    xmb::ApValue ap = xmb::average_precision(rel);
    return py::make_tuple(ap.value, ap.defined);
  });

  m.def("expected_ap_with_ties",
        [](const std::vector<std::pair<int, int>>& groups,
           const std::vector<std::uint8_t>& rel) {
          xmb::ApValue ap = xmb::expected_ap_with_ties(groups, rel);
          return py::make_tuple(ap.value, ap.defined);
        });

  m.def("cmc_from_first_ranks",
        [](const std::vector<int>& first_ranks, int gallery_size,
           int excluded_queries) {
          return xmb::cmc_from_first_ranks(first_ranks, gallery_size,
                                           excluded_queries)
              .values;
        },
        py::arg("first_ranks"), py::arg("gallery_size"),
        py::arg("excluded_queries") = 0);
}
