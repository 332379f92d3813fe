#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "json.hpp"
#include "oex/error.hpp"
#include "oex/extrapolation.hpp"
#include "oex/gmm.hpp"
#include "oex/metrics.hpp"
#include "oex/pipeline.hpp"
#include "oex/selftest.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

oex::Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return oex::Tensor::matrix(rows, cols, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const oex::Tensor& t) {
  const std::size_t rows = t.empty() ? 0 : t.rows();
  const std::size_t cols = t.empty() ? 0 : t.cols();
  Array out({rows, cols});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict dataset_dict(const oex::Dataset& d) {
  py::dict out;
  out["x"] = to_array(d.x);
  if (d.labels) out["labels"] = *d.labels;
  return out;
}

oex::RunConfig config_from(const std::string& text) { return oex::run_config_from_json(json::parse(text)); }

}  // namespace

PYBIND11_MODULE(_oex, m) {
  m.doc() = "Outlier exposure workbench";

  py::register_exception<oex::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<oex::DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<oex::NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("default_config_json", [] { return oex::run_config_to_json(oex::default_run_config()).dump(); });
  m.def("normalize_config_json", [](const std::string& text) {
    return oex::run_config_to_json(config_from(text)).dump();
  });
  m.def("config_digest_json", [](const std::string& text) { return oex::config_digest(config_from(text)); });

  m.def("fpr_at_tpr", &oex::fpr_at_tpr, py::arg("id_scores"), py::arg("ood_scores"), py::arg("tpr") = 0.95);
  m.def("auroc", &oex::auroc, py::arg("id_scores"), py::arg("ood_scores"));
  m.def("aupr", &oex::aupr, py::arg("id_scores"), py::arg("ood_scores"));
  m.def(
      "mmd_rbf",
      [](const Array& x, const Array& y, std::optional<double> bw) { return oex::mmd_rbf(to_tensor(x), to_tensor(y), bw); },
      py::arg("x"), py::arg("y"), py::arg("bandwidth") = py::none());
  m.def(
      "split_half_mmd", [](const Array& x, std::optional<double> bw) { return oex::split_half_mmd(to_tensor(x), bw); },
      py::arg("x"), py::arg("bandwidth") = py::none());

  m.def("generate_benchmark_json", [](const std::string& text) {
    oex::Benchmark b = oex::generate_benchmark(config_from(text));
    py::dict out;
    out["id_train"] = dataset_dict(b.id_train);
    out["id_test"] = dataset_dict(b.id_test);
    out["aux"] = dataset_dict(b.aux);
    py::dict ood;
    for (const auto& [name, d] : b.ood) ood[py::str(name)] = dataset_dict(d);
    out["ood"] = ood;
    return out;
  });

  m.def("run_pipeline_json", [](const std::string& text) {
    const oex::RunConfig cfg = config_from(text);
    std::string reports, model, history;
    {
      py::gil_scoped_release release;
      oex::Benchmark b = oex::generate_benchmark(cfg);
      oex::TrainedModels trained = oex::train_pipeline(cfg, b);
      reports = oex::reports_to_json(oex::evaluate_pipeline(cfg, trained.fine_tuned, b)).dump();
      model = oex::model_to_json(trained.fine_tuned).dump();
      history = oex::history_to_csv(trained.history);
    }
    py::dict out;
    out["reports"] = reports;
    out["model"] = model;
    out["history_csv"] = history;
    return out;
  });

  m.def(
      "extrapolate_json",
      [](const std::string& model_text, const Array& x, double epsilon, int steps, const std::string& target) {
        oex::MlpClassifier model = oex::model_from_json(json::parse(model_text));
        oex::ExtrapolationConfig cfg;
        cfg.epsilon = epsilon;
        cfg.steps = steps;
        cfg.target = oex::parse_target(target);
        oex::ExtrapolatedBatch b = oex::pgd_extrapolate(model, to_tensor(x), cfg);
        py::dict out;
        out["synthesized"] = to_array(b.synthesized);
        out["initial_loss"] = b.initial_loss;
        out["final_loss"] = b.final_loss;
        return out;
      },
      py::arg("model"), py::arg("x"), py::arg("epsilon") = 0.05, py::arg("steps") = 5, py::arg("target") = "uniform");

  m.def(
      "gradcheck",
      [](std::size_t cases, std::uint64_t seed) {
        oex::GradcheckSummary s = oex::run_gradcheck_suite(cases, seed);
        py::dict out;
        out["cases"] = s.cases.size();
        out["max_rel_error"] = s.max_rel_error;
        out["failures"] = s.failures;
        out["passed"] = s.passed();
        return out;
      },
      py::arg("cases") = 100, py::arg("seed") = 0);

  m.def(
      "verify_bound",
      [](std::uint64_t seed) {
        const oex::gmm::TheoryConfig t = oex::gmm::frozen_theory_config();
        oex::gmm::VerifyResult r = oex::gmm::verify_bound(t.spec, t.params, t.trials, seed);
        py::dict out;
        out["trials"] = r.trials.size();
        out["violation_fraction"] = r.violation_fraction;
        std::vector<double> ratios, rhs;
        for (const auto& tr : r.trials) ratios.push_back(tr.ratio), rhs.push_back(tr.rhs);
        out["ratio"] = ratios;
        out["rhs"] = rhs;
        return out;
      },
      py::arg("seed") = 0);
}
