#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "fedsplit/error.hpp"
#include "fedsplit/experiment.hpp"

namespace py = pybind11;
using namespace fedsplit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Array features_of(const Dataset& ds) {
  Array out({static_cast<py::ssize_t>(ds.size()), static_cast<py::ssize_t>(ds.dim)});
  auto* p = out.mutable_data();
  for (const auto& s : ds.samples) p = std::copy(s.features.begin(), s.features.end(), p);
  return out;
}

// 0 negative, 1 positive, 2 uncertain.
py::array_t<std::int8_t> labels_of(const Dataset& ds) {
  py::array_t<std::int8_t> out({static_cast<py::ssize_t>(ds.size()), static_cast<py::ssize_t>(kNumLabels)});
  auto* p = out.mutable_data();
  for (const auto& s : ds.samples) {
    for (auto v : s.labels) *p++ = static_cast<std::int8_t>(v);
  }
  return out;
}

std::vector<std::int64_t> ids_of(const Dataset& ds) {
  std::vector<std::int64_t> ids;
  for (const auto& s : ds.samples) ids.push_back(s.id);
  return ids;
}

// Values may be strings, numbers, or (for hidden) sequences of widths.
ExperimentSpec spec_from(const py::dict& settings) {
  ExperimentSpec spec;
  for (const auto& [k, v] : settings) {
    std::string value;
    if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
      for (const auto& item : v) value += (value.empty() ? "" : ",") + py::str(item).cast<std::string>();
    } else {
      value = py::str(v).cast<std::string>();
    }
    apply_setting(spec, py::str(k).cast<std::string>(), value);
  }
  return spec;
}

py::dict row_dict(const SummaryRow& r) {
  py::dict d;
  d["experiment"] = r.experiment;
  d["paradigm"] = r.paradigm;
  d["layout"] = r.layout;
  d["granularity"] = r.granularity;
  d["partition"] = r.partition;
  d["aggregation"] = r.aggregation;
  d["mean_auc"] = r.mean_auc ? py::object(py::float_(*r.mean_auc)) : py::object(py::none());
  d["epochs_run"] = r.epochs_run;
  d["best_epoch"] = r.best_epoch;
  d["messages"] = r.messages;
  d["bytes"] = r.bytes;
  return d;
}

py::dict label_dict(const MetricsReport& report) {
  py::dict d;
  for (const auto& l : report.labels) d[py::str(l.label)] = l.auc ? py::object(py::float_(*l.auc)) : py::object(py::none());
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Federated and split learning simulator";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ProtocolError>(m, "ProtocolError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", base.ptr());
  py::register_exception<PrivacyError>(m, "PrivacyError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.attr("NUM_LABELS") = kNumLabels;
  m.def("label_names", &default_label_names);
  m.def("target_labels", &default_target_labels);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("dim", &Dataset::dim)
      .def_readonly("label_names", &Dataset::label_names)
      .def_readonly("target_labels", &Dataset::target_labels)
      .def_readonly("generation_seed", &Dataset::generation_seed)
      .def("__len__", &Dataset::size)
      .def_property_readonly("features", &features_of)
      .def_property_readonly("labels", &labels_of)
      .def_property_readonly("ids", &ids_of)
      .def("prevalence", &Dataset::prevalence)
      .def("target_indices", &Dataset::target_indices)
      .def("save", [](const Dataset& ds, const std::string& path) { save_dataset(path, ds); });

  m.def(
      "gen_synthetic",
      [](std::size_t n_samples, std::size_t d, std::uint64_t seed, double noise_scale, double signal_scale) {
        return gen_synthetic(GenerationParams{n_samples, d, seed, noise_scale, signal_scale});
      },
      py::arg("n_samples") = 6250, py::arg("d") = 32, py::arg("seed") = 1, py::arg("noise_scale") = 6.0,
      py::arg("signal_scale") = 20.0);
  m.def("split_train_val", &split_train_val, py::arg("dataset"), py::arg("train_fraction") = 0.8, py::arg("seed") = 1);
  m.def("load_dataset", &load_dataset);

  py::class_<PartitionPlan>(m, "PartitionPlan")
      .def_property_readonly("scheme", [](const PartitionPlan& p) { return std::string(to_string(p.scheme)); })
      .def_readonly("assignments", &PartitionPlan::assignments)
      .def_readonly("achieved_prevalence", &PartitionPlan::achieved_prevalence)
      .def_readonly("client_names", &PartitionPlan::client_names)
      .def_readonly("majority_label", &PartitionPlan::majority_label)
      .def_readonly("majority_target", &PartitionPlan::majority_target)
      .def("num_clients", &PartitionPlan::num_clients);
  m.def("partition_uniform", &partition_uniform, py::arg("train"), py::arg("k"), py::arg("seed") = 1);
  m.def("partition_skewed", &partition_skewed, py::arg("train"), py::arg("k") = 5, py::arg("majority_target") = 0.45,
        py::arg("seed") = 1);

  py::class_<SequentialModel>(m, "Model")
      .def("parameter_count", &SequentialModel::parameter_count)
      .def("num_layers", [](const SequentialModel& model) { return model.layers().size(); })
      .def("parameters",
           [](const SequentialModel& model) {
             std::vector<Array> out;
             for (const auto& t : model.parameters()) out.push_back(to_array(t));
             return out;
           })
      .def("predict", [](const SequentialModel& model, const Array& x) { return to_array(predict(model, to_tensor(x))); });
  m.def(
      "init_model", [](const std::vector<std::size_t>& dims, std::uint64_t seed) { return init_model(dims, seed); },
      py::arg("dims"), py::arg("seed") = 1);
  m.def("split_model", [](const SequentialModel& model, std::size_t cut_m, std::optional<std::size_t> cut_n) {
    ModelPartition p = split_model(model, cut_m, cut_n);
    py::list out;
    out.append(p.front);
    out.append(p.server);
    if (p.back) out.append(*p.back);
    return out;
  }, py::arg("model"), py::arg("cut_m"), py::arg("cut_n") = py::none());

  m.def("bce_loss", [](const Array& y_hat, const Array& target) {
    const LossResult r = bce_loss(to_tensor(y_hat), to_tensor(target));
    return py::make_tuple(r.loss, to_array(r.grad));
  });
  m.def("auroc", [](const std::vector<double>& scores, const std::vector<double>& truths) { return auroc(scores, truths); });
  m.def(
      "early_stop",
      [](const std::vector<double>& history, std::size_t patience, std::size_t max_epochs) {
        const EarlyStopDecision d = early_stop(history, patience, max_epochs);
        return py::make_tuple(d.stop, d.best_epoch);
      },
      py::arg("history"), py::arg("patience") = 4, py::arg("max_epochs") = 10);
  m.def("message_bytes", [](const std::vector<Shape>& shapes) { return message_bytes(shapes); });

  m.def(
      "resolve_config",
      [](const py::dict& settings) {
        const ExperimentSpec spec = spec_from(settings);
        spec.resolved().validate();
        return echo_spec(spec);
      },
      py::arg("settings"),
      "Validated, fully resolved key=value text for a settings dict.");
  m.def(
      "run_experiment",
      [](const py::dict& settings, const std::string& out) {
        ExperimentSpec spec = spec_from(settings);
        spec.resolved().validate();
        RunArtifacts artifacts;
        {
          py::gil_scoped_release release;
          artifacts = run_experiment(spec, prepare_data(spec.data));
          if (!out.empty()) write_artifacts(artifacts, out);
        }
        py::dict result;
        result["name"] = experiment_name(spec);
        result["summary"] = row_dict(artifacts.summary.front());
        result["labels"] = label_dict(artifacts.reports.front());
        py::list rows;
        for (const auto& r : artifacts.summary) rows.append(row_dict(r));
        result["rows"] = rows;
        result["messages"] = artifacts.comm.size();
        result["bytes"] = artifacts.comm.total_bytes();
        std::ostringstream comm;
        artifacts.comm.write_csv(comm);
        result["comm_csv"] = comm.str();
        if (artifacts.server_parameter_fraction) result["server_parameter_fraction"] = *artifacts.server_parameter_fraction;
        return result;
      },
      py::arg("settings") = py::dict(), py::arg("out") = "");
}
