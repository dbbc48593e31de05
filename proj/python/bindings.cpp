// Python bindings: datasets as numpy arrays, loss and metric helpers, and the
// experiment driver with JSON configs.

#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "qair/dataset.hpp"
#include "qair/errors.hpp"
#include "qair/harness.hpp"
#include "qair/numerics.hpp"
#include "qair/objective.hpp"
#include "qair/stealing.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::pair<Array, py::array_t<std::uint32_t>> to_numpy(const qair::Dataset& d) {
  const auto s = d.shape;
  Array images({static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(s.channels),
                static_cast<py::ssize_t>(s.height), static_cast<py::ssize_t>(s.width)});
  py::array_t<std::uint32_t> labels(static_cast<py::ssize_t>(d.size()));
  double* px = images.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::memcpy(px + i * s.size(), d.images[i].pixels.data(), s.size() * sizeof(double));
    labels.mutable_at(static_cast<py::ssize_t>(i)) = d.labels[i];
  }
  return {images, labels};
}

qair::Dataset from_numpy(const Array& images, const py::array_t<std::uint32_t>& labels) {
  if (images.ndim() != 4) throw std::invalid_argument("images must have shape (N, C, H, W)");
  if (labels.ndim() != 1 || labels.shape(0) != images.shape(0)) {
    throw std::invalid_argument("labels must have shape (N,)");
  }
  qair::Dataset d;
  d.shape = {static_cast<std::uint32_t>(images.shape(1)), static_cast<std::uint32_t>(images.shape(2)),
             static_cast<std::uint32_t>(images.shape(3))};
  const std::size_t n = d.shape.size();
  for (py::ssize_t i = 0; i < images.shape(0); ++i) {
    const Eigen::Map<const Eigen::VectorXd> px(images.data() + i * static_cast<py::ssize_t>(n),
                                               static_cast<Eigen::Index>(n));
    d.push_back(qair::Image(d.shape, px), labels.at(i));
  }
  return d;
}

qair::RankedList ranked(const std::vector<qair::ItemId>& ids) {
  qair::RankedList l;
  l.ids = ids;
  l.distances.assign(ids.size(), 0.0);
  return l;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  py::register_exception<qair::FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<qair::IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<qair::UndefinedMetric>(m, "UndefinedMetric", PyExc_ArithmeticError);

  m.def("default_config_json", [] { return qair::config_to_json(qair::ExperimentConfig::defaults()); });
  m.def("config_schema", &qair::config_schema);

  m.def("relevance_weights", [](std::size_t k) { return qair::relevance_weights(k).omega; }, py::arg("k"));
  m.def(
      "relevance_loss",
      [](const std::vector<qair::ItemId>& original, const std::vector<qair::ItemId>& adversarial) {
        return qair::relevance_loss(ranked(original), ranked(adversarial));
      },
      py::arg("original"), py::arg("adversarial"));
  m.def(
      "count_loss",
      [](const std::vector<qair::ItemId>& original, const std::vector<qair::ItemId>& adversarial) {
        return qair::count_loss(ranked(original), ranked(adversarial));
      },
      py::arg("original"), py::arg("adversarial"));
  m.def("drr_at_1", &qair::drr_at_1, py::arg("recall_before"), py::arg("recall_after"));
  m.def(
      "spearman",
      [](const std::vector<double>& a, const std::vector<double>& b) { return qair::spearman(a, b); },
      py::arg("a"), py::arg("b"));
  m.def(
      "kendall_tau",
      [](const std::vector<double>& a, const std::vector<double>& b) { return qair::kendall_tau(a, b); },
      py::arg("a"), py::arg("b"));

  m.def(
      "quantize_to_grid",
      [](const Array& image) {
        Array out(std::vector<py::ssize_t>(image.shape(), image.shape() + image.ndim()));
        const auto n = static_cast<Eigen::Index>(image.size());
        const qair::Image q = qair::quantize_to_grid(
            qair::Image({1, 1, static_cast<std::uint32_t>(n)}, Eigen::Map<const Eigen::VectorXd>(image.data(), n)));
        std::memcpy(out.mutable_data(), q.pixels.data(), static_cast<std::size_t>(n) * sizeof(double));
        return out;
      },
      py::arg("image"));

  m.def(
      "gen_synthetic_dataset",
      [](std::uint32_t classes, std::uint32_t per_class, std::tuple<std::uint32_t, std::uint32_t, std::uint32_t> shape,
         double noise, std::uint64_t seed) {
        const auto [c, h, w] = shape;
        return to_numpy(qair::gen_synthetic_dataset(classes, per_class, {c, h, w}, noise, seed));
      },
      py::arg("classes"), py::arg("per_class"), py::arg("shape"), py::arg("noise"), py::arg("seed"));
  m.def(
      "load_dataset", [](const std::string& path) { return to_numpy(qair::load_dataset(path)); },
      py::arg("path"));
  m.def(
      "save_dataset",
      [](const Array& images, const py::array_t<std::uint32_t>& labels, const std::string& path) {
        qair::save_dataset(from_numpy(images, labels), path);
      },
      py::arg("images"), py::arg("labels"), py::arg("path"));

  m.def(
      "run_experiment_json",
      [](const std::string& config_json, const std::string& out_dir) {
        const qair::ExperimentConfig cfg = qair::config_from_json(config_json);
        cfg.validate();
        qair::MetricsReport report;
        {
          py::gil_scoped_release release;
          report = qair::run_experiment(cfg);
        }
        if (!out_dir.empty()) qair::write_results(std::span(&report, 1), out_dir);
        std::vector<std::string> lines;
        for (const auto& r : report.records) lines.push_back(qair::record_to_json_line(r));
        return std::make_pair(qair::summary_csv(report.rows), lines);
      },
      py::arg("config_json"), py::arg("out_dir") = "");
}
