// Python surface: experiment configs in, metric reports out, plus the small
// numeric helpers and checkpoint IO so results can be inspected from numpy.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdio>
#include <cstring>
#include <optional>

#include "mwuf/experiment.hpp"
#include "mwuf/metrics.hpp"

namespace py = pybind11;

namespace {

using namespace mwuf;

MetricReport run_once(ExperimentConfig cfg, const std::string& method) {
  validate(cfg);
  Method m = parse_method(method.empty() ? cfg.method : method);
  py::gil_scoped_release release;
  Prepared prep = prepare_experiment(cfg);
  return run_protocol(prep.schema, cfg.model, m, prep.phases, protocol_config(cfg, cfg.seed));
}

std::vector<MetricReport> run_ablation(ExperimentConfig cfg,
                                       std::optional<std::vector<uint64_t>> seeds) {
  validate(cfg);
  std::vector<uint64_t> list = seeds ? std::move(*seeds) : std::vector<uint64_t>{};
  if (list.empty())
    for (size_t i = 0; i < cfg.seeds; ++i) list.push_back(cfg.seed + i);
  py::gil_scoped_release release;
  Prepared prep = prepare_experiment(cfg);
  return ablation_suite(prep.schema, cfg.model, prep.phases, protocol_config(cfg, cfg.seed),
                        list);
}

py::dict summarize_split(ExperimentConfig cfg) {
  validate(cfg);
  Prepared prep = [&] {
    py::gil_scoped_release release;
    return prepare_experiment(cfg);
  }();
  size_t eval_samples = 0;
  for (Slice s : {Slice::warm_a, Slice::warm_b, Slice::warm_c, Slice::test})
    eval_samples += pooled_slice(prep.phases, s).size();
  py::dict out;
  out["old_items"] = prep.phases.old_item_rows.size();
  out["new_items"] = prep.phases.new_items.size();
  out["dropped_items"] = prep.phases.dropped_items;
  out["old_train_samples"] = prep.phases.old_train.size();
  out["new_item_samples"] = eval_samples;
  return out;
}

py::dict load_ckpt(const std::string& path) {
  NamedTensors tensors = load_checkpoint(path);
  py::dict out;
  for (auto& [name, t] : tensors) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> arr(shape);
    std::memcpy(arr.mutable_data(), t.data(), t.size() * sizeof(float));
    out[py::str(name)] = std::move(arr);
  }
  return out;
}

void save_ckpt(const py::dict& tensors, const std::string& path) {
  NamedTensors out;
  for (auto item : tensors) {
    auto name = item.first.cast<std::string>();
    auto arr =
        py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(item.second);
    if (!arr)
      throw UsageError("checkpoint: value for '" + name + "' is not a numeric array");
    std::vector<size_t> shape(arr.shape(), arr.shape() + arr.ndim());
    std::vector<float> values(arr.data(), arr.data() + arr.size());
    out.emplace_back(std::move(name), Tensor<float>::from(std::move(shape), std::move(values)));
  }
  save_checkpoint(out, path);
}

std::string report_repr(const MetricReport& r) {
  char buf[192];
  std::snprintf(buf, sizeof buf,
                "Report(method='%s', seed=%llu, auc=[%.4f, %.4f, %.4f, %.4f])", r.method.c_str(),
                static_cast<unsigned long long>(r.seed), r.auc[0], r.auc[1], r.auc[2], r.auc[3]);
  return buf;
}

}  // namespace

PYBIND11_MODULE(_mwuf, m) {
  m.doc() = "Warm-up experiments for cold-start item embeddings: pretrain a base "
            "recommender on old items, then compare ID-embedding warm-up methods on new ones.";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const UsageError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const ParseError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const Error& e) {
      PyErr_SetString(PyExc_RuntimeError, e.what());
    }
  });

  py::class_<ExperimentConfig>(m, "Config", "Experiment settings; same keys as the CLI accepts.")
      .def(py::init<>())
      .def_readwrite("dataset", &ExperimentConfig::dataset)
      .def_readwrite("data_dir", &ExperimentConfig::data_dir)
      .def_readwrite("include_titles", &ExperimentConfig::include_titles)
      .def_readwrite("synthetic_users", &ExperimentConfig::synthetic_users)
      .def_readwrite("synthetic_items", &ExperimentConfig::synthetic_items)
      .def_readwrite("synthetic_interactions", &ExperimentConfig::synthetic_interactions)
      .def_readwrite("synthetic_categories", &ExperimentConfig::synthetic_categories)
      .def_readwrite("synthetic_groups", &ExperimentConfig::synthetic_groups)
      .def_readwrite("synthetic_latent_dim", &ExperimentConfig::synthetic_latent_dim)
      .def_readwrite("synthetic_noise", &ExperimentConfig::synthetic_noise)
      .def_readwrite("synthetic_skew", &ExperimentConfig::synthetic_skew)
      .def_readwrite("model", &ExperimentConfig::model)
      .def_readwrite("k", &ExperimentConfig::k)
      .def_readwrite("hidden", &ExperimentConfig::hidden)
      .def_readwrite("meta_hidden", &ExperimentConfig::meta_hidden)
      .def_readwrite("lr", &ExperimentConfig::lr)
      .def_readwrite("batch", &ExperimentConfig::batch)
      .def_readwrite("pretrain_epochs", &ExperimentConfig::pretrain_epochs)
      .def_readwrite("meta_epochs", &ExperimentConfig::meta_epochs)
      .def_readwrite("user_cap", &ExperimentConfig::user_cap)
      .def_readwrite("online_base_update", &ExperimentConfig::online_base_update)
      .def_readwrite("split_n", &ExperimentConfig::split_n)
      .def_readwrite("split_k", &ExperimentConfig::split_k)
      .def_readwrite("seed", &ExperimentConfig::seed)
      .def_readwrite("seeds", &ExperimentConfig::seeds)
      .def_readwrite("method", &ExperimentConfig::method)
      .def("set", &apply_config_value, py::arg("key"), py::arg("value"),
           "Apply one key=value pair; raises ValueError on unknown keys or bad values.")
      .def("validate", &validate, "Cross-field checks; raises ValueError on conflicts.")
      .def_static(
          "from_file",
          [](const std::string& path) {
            ExperimentConfig cfg;
            load_config_file(cfg, path);
            return cfg;
          },
          py::arg("path"), "Defaults overlaid with a key=value file.");

  py::class_<MetricReport>(m, "Report",
                           "One method's four ordered AUCs (cold plus three warm phases) and "
                           "relative improvements over the plain baseline.")
      .def_readonly("method", &MetricReport::method)
      .def_readonly("model_kind", &MetricReport::model_kind)
      .def_readonly("baseline", &MetricReport::baseline)
      .def_readonly("seed", &MetricReport::seed)
      .def_readonly("auc", &MetricReport::auc)
      .def_readonly("relaimpr", &MetricReport::relaimpr)
      .def_readonly("old_items", &MetricReport::old_items)
      .def_readonly("new_items", &MetricReport::new_items)
      .def_readonly("dropped_items", &MetricReport::dropped_items)
      .def("__repr__", &report_repr);

  m.attr("PHASES") = py::make_tuple("cold", "warm_a", "warm_b", "warm_c");
  m.attr("METHODS") = py::make_tuple("base", "mwuf_init", "mwuf_scale", "mwuf_shift", "mwuf");

  m.def("config_help", &config_help, "The key reference the CLI prints under --help.");
  m.def("run", &run_once, py::arg("config"), py::arg("method") = std::string(),
        "Full protocol for one method (config.method unless overridden): pretrain, "
        "warm-up phases, report.");
  m.def("ablate", &run_ablation, py::arg("config"), py::arg("seeds") = py::none(),
        "Every method once per seed on a shared pretrain; defaults to config.seed "
        "through config.seed + config.seeds - 1.");
  m.def(
      "reports_csv",
      [](const std::vector<MetricReport>& reports) { return reports_csv(reports); },
      py::arg("reports"), "One CSV row per report and phase.");
  m.def("split_summary", &summarize_split, py::arg("config"),
        "Item counts after the old/new/dropped split, without training anything.");

  m.def(
      "auc",
      [](const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
        return auc(scores, labels);
      },
      py::arg("scores"), py::arg("labels"),
      "Rank-based AUC with average ranks over ties; raises on single-class labels.");
  m.def("relaimpr", &relaimpr, py::arg("measured_auc"), py::arg("base_auc"),
        "Relative improvement in percent over a baseline, both measured from 0.5.");

  m.def("load_checkpoint", &load_ckpt, py::arg("path"),
        "Checkpoint file -> dict of float32 arrays, in stored order.");
  m.def("save_checkpoint", &save_ckpt, py::arg("tensors"), py::arg("path"),
        "Dict of arrays (cast to float32) -> checkpoint file.");
}
