#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "diffrisk/config.hpp"
#include "diffrisk/error.hpp"
#include "diffrisk/libsvm.hpp"
#include "diffrisk/runner.hpp"
#include "diffrisk/theory.hpp"
#include "diffrisk/topology.hpp"

namespace py = pybind11;
using namespace diffrisk;

namespace {

py::dict series_dict(const Series& s) {
  py::dict d;
  d["mean"] = Vector(Eigen::Map<const Vector>(s.mean.data(), static_cast<Eigen::Index>(s.mean.size())));
  d["stderr"] = Vector(Eigen::Map<const Vector>(s.std_error.data(), static_cast<Eigen::Index>(s.std_error.size())));
  return d;
}

py::dict trace_dict(const MetricTrace& trace) {
  py::dict out;
  for (const auto& name : trace.learners) {
    const auto& v = trace.at(name);
    py::dict d;
    for (auto m : {Metric::excess_risk, Metric::prediction_mse, Metric::filtering_mse, Metric::accuracy}) {
      if (m == Metric::accuracy && !v.has_accuracy()) continue;
      d[py::str(std::string(to_string(m)))] = series_dict(v.series(m));
    }
    d["node_er_tail"] = v.node_er_tail();
    const auto tail = v.tail(Metric::excess_risk);
    d["tail_er"] = py::make_tuple(tail.mean, tail.std_error);
    py::dict roc;
    if (const auto it = trace.roc.find(name); it != trace.roc.end()) {
      for (const auto& [tick, acc] : it->second) {
        if (acc.empty()) continue;
        const auto curve = acc.curve();
        std::vector<double> pfa, pd;
        for (const auto& p : curve.points) {
          pfa.push_back(p.pfa);
          pd.push_back(p.pd);
        }
        roc[py::int_(tick)] = py::dict(py::arg("auc") = curve.auc(), py::arg("pfa") = pfa, py::arg("pd") = pd);
      }
    }
    d["roc"] = roc;
    out[py::str(name)] = d;
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_diffrisk, m) {
  m.doc() = "Diffusion learners over networks: simulation and closed-form excess-risk predictors";

  static py::exception<Error> base(m, "DiffriskError", PyExc_RuntimeError);
  static py::exception<ParseError> parse(m, "ParseError", base.ptr());
  static py::exception<ValidationError> validation(m, "ValidationError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ParseError& e) {
      parse(e.what());
    } catch (const ValidationError& e) {
      validation(e.what());
    } catch (const Error& e) {
      base(e.what());
    }
  });

  py::class_<ExperimentConfig>(m, "Config")
      .def_readwrite("seed", &ExperimentConfig::seed)
      .def_readwrite("horizon", &ExperimentConfig::horizon)
      .def_readwrite("repetitions", &ExperimentConfig::repetitions)
      .def_readwrite("eval_batch", &ExperimentConfig::eval_batch)
      .def_readwrite("threads", &ExperimentConfig::threads)
      .def_readwrite("roc_ticks", &ExperimentConfig::roc_ticks)
      .def_readwrite("theory", &ExperimentConfig::theory)
      .def_readwrite("tail_fraction", &ExperimentConfig::tail_fraction)
      .def_readwrite("output", &ExperimentConfig::output)
      .def_readwrite("topology", &ExperimentConfig::topology)
      .def_readwrite("process", &ExperimentConfig::process)
      .def_readwrite("label_noise", &ExperimentConfig::label_noise)
      .def_readwrite("model", &ExperimentConfig::model)
      .def_readwrite("mu", &ExperimentConfig::mu)
      .def_readonly("origin", &ExperimentConfig::origin)
      .def_property_readonly("learners",
                             [](const ExperimentConfig& c) {
                               std::vector<std::string> names;
                               for (const auto& l : c.learners) names.push_back(l.name);
                               return names;
                             })
      .def("echo", &echo_config)
      .def("validate", &validate_config)
      .def("__repr__", [](const ExperimentConfig& c) {
        return "<Config " + c.origin + ": " + c.topology + ", " + c.process + ", T=" + std::to_string(c.horizon) + ">";
      });

  m.def("parse_config", &parse_config_text, py::arg("text"), py::arg("origin") = "<string>");
  m.def("load_config", &parse_config_file, py::arg("path"));
  m.def("load_preset", &load_preset, py::arg("name"), py::arg("preset_dir") = "");
  m.def("list_presets", &list_presets, py::arg("preset_dir") = "");
  m.def("apply_overrides", &apply_overrides, py::arg("config"), py::arg("assignments"));
  m.def("select_learners", &select_learners, py::arg("config"), py::arg("names"));

  m.def(
      "simulate",
      [](const ExperimentConfig& cfg) {
        const auto r = resolve(cfg);
        MetricTrace trace;
        {
          py::gil_scoped_release release;
          trace = run_experiment(r.spec);
        }
        return trace_dict(trace);
      },
      py::arg("config"), "Runs the experiment in memory and returns per-learner series.");

  m.def(
      "run",
      [](const ExperimentConfig& cfg, const std::string& output_dir, bool quiet) {
        RunResult res;
        {
          py::gil_scoped_release release;
          res = run(cfg, RunOptions{output_dir, quiet});
        }
        py::list files;
        for (const auto& f : res.files) files.append(py::dict(py::arg("path") = f.path, py::arg("sha256") = f.sha256));
        py::dict d;
        d["output_dir"] = res.output_dir;
        d["files"] = files;
        d["warnings"] = res.warnings;
        d["wall_seconds"] = res.wall_seconds;
        d["trace"] = trace_dict(res.trace);
        return d;
      },
      py::arg("config"), py::arg("output_dir") = "", py::arg("quiet") = true);

  m.def("predict_json", &predict, py::arg("config"), py::arg("formula"), py::arg("learner") = "");
  m.def("predict_formulas", &predict_formulas);

  m.def(
      "metropolis_weights", [](const std::string& topology) { return metropolis_weights(parse_topology(topology)); },
      py::arg("topology"));
  m.def("scalar_steady_state_er", &scalar_steady_state_er, py::arg("mu"), py::arg("d"), py::arg("r"), py::arg("t"));
  m.def(
      "read_libsvm",
      [](const std::string& path, std::optional<std::size_t> dim) {
        const auto d = load_libsvm(path, dim);
        return py::make_tuple(Matrix(d.features.transpose()), d.labels);
      },
      py::arg("path"), py::arg("dim") = py::none(), "Returns (features as count x dim, labels in {-1, +1}).");
  m.attr("__version__") = DIFFRISK_VERSION;
}
