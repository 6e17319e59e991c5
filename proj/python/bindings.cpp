#include "utilgate/calibration.hpp"
#include "utilgate/curvefit.hpp"
#include "utilgate/error.hpp"
#include "utilgate/importance.hpp"
#include "utilgate/metrics.hpp"
#include "utilgate/noise.hpp"
#include "utilgate/synth.hpp"
#include "utilgate/tensor.hpp"
#include "utilgate/tier.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <sstream>

namespace py = pybind11;
namespace ug = utilgate;

namespace {

template <typename T>
ug::Tensor tensor_from(const py::array& a) {
  auto c = py::array_t<T, py::array::c_style | py::array::forcecast>::ensure(a);
  ug::Shape shape(c.shape(), c.shape() + c.ndim());
  std::vector<T> data(static_cast<std::size_t>(c.size()));
  if (!data.empty()) std::memcpy(data.data(), c.data(), data.size() * sizeof(T));
  return ug::Tensor(std::move(shape), std::move(data));
}

ug::Tensor to_tensor(const py::array& a) {
  const auto kind = a.dtype().kind();
  if (kind == 'f') return tensor_from<float>(a);
  if (a.dtype().is(py::dtype::of<std::uint8_t>()) || kind == 'b') return tensor_from<std::uint8_t>(a);
  if (kind == 'i' || kind == 'u') return tensor_from<std::int32_t>(a);
  throw ug::InvalidArgument("unsupported array dtype");
}

template <typename T>
py::array array_from(std::span<const T> data, const ug::Shape& shape) {
  std::vector<py::ssize_t> dims(shape.begin(), shape.end());
  py::array_t<T> out(dims);
  if (!data.empty()) std::memcpy(out.mutable_data(), data.data(), data.size() * sizeof(T));
  return out;
}

py::array to_array(const ug::Tensor& t) {
  switch (t.dtype()) {
  case ug::DType::float32: return array_from(t.floats(), t.shape());
  case ug::DType::int32: return array_from(t.ints(), t.shape());
  case ug::DType::uint8: return array_from(t.bytes(), t.shape());
  }
  throw ug::InvalidArgument("unknown dtype");
}

ug::LogitsBatch to_logits(const py::array& a) { return ug::LogitsBatch::infer(tensor_from<float>(a)); }
ug::LabelBatch to_labels(const py::array& a) { return ug::LabelBatch(tensor_from<std::int32_t>(a)); }

ug::DecayFit parse_fit(const std::string& text) {
  std::istringstream in(text);
  return ug::DecayFit::parse(in);
}

ug::CalibrationTable parse_table(const std::string& text) {
  std::istringstream in(text);
  return ug::CalibrationTable::read_text(in);
}

} // namespace

PYBIND11_MODULE(_utilgate, m) {
  m.doc() = "Calibrated logit perturbation and utility control";

  auto base = py::register_exception<ug::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ug::InvalidArgument>(m, "InvalidArgument", base.ptr());
  py::register_exception<ug::FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ug::ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ug::FitError>(m, "FitError", base.ptr());

  m.def("save_tensor", [](const py::array& a, const std::string& path) { ug::save_tensor(to_tensor(a), path); },
        py::arg("array"), py::arg("path"));
  m.def("load_tensor", [](const std::string& path) { return to_array(ug::load_tensor(path)); }, py::arg("path"));
  m.def("encode_tensor", [](const py::array& a) {
    std::ostringstream out(std::ios::binary);
    ug::write_tensor(to_tensor(a), out);
    return py::bytes(out.str());
  });
  m.def("decode_tensor", [](const py::bytes& b) {
    std::istringstream in(std::string(b), std::ios::binary);
    return to_array(ug::read_tensor(in));
  });

  m.def("argmax_classes", [](const py::array& logits) { return to_array(ug::argmax_classes(to_logits(logits)).tensor()); });

  m.def(
      "perturb",
      [](const py::array& logits, double sigma, const std::string& mode, std::uint64_t seed, double delta,
         std::optional<py::array> mask, std::optional<py::array> labels) {
        ug::PerturbationSpec spec{sigma, delta, ug::parse_mode(mode), seed};
        std::optional<ug::Tensor> mask_t;
        if (mask) mask_t = to_tensor(*mask);
        std::optional<ug::LabelBatch> labels_b;
        if (labels) labels_b = to_labels(*labels);
        const auto r = ug::perturb(to_logits(logits), spec, mask_t ? &*mask_t : nullptr, labels_b ? &*labels_b : nullptr);
        return to_array(r.logits.tensor());
      },
      py::arg("logits"), py::arg("sigma"), py::arg("mode") = "global", py::arg("seed") = 0, py::arg("delta") = 1.0,
      py::arg("mask") = py::none(), py::arg("labels") = py::none());

  m.def("normalize_importance", [](const py::array& raw) {
    return to_array(ug::ImportanceMap::from_raw(tensor_from<float>(raw)).scores());
  });
  m.def(
      "make_mask",
      [](const py::array& raw, double tau, bool invert) {
        return to_array(ug::make_mask(ug::ImportanceMap::from_raw(tensor_from<float>(raw)), {tau, invert}));
      },
      py::arg("importance"), py::arg("tau") = 0.5, py::arg("invert") = false);
  m.def("margin_saliency", [](const py::array& logits) { return to_array(ug::margin_saliency(to_logits(logits)).scores()); });

  m.def(
      "evaluate",
      [](const std::string& metric, const py::array& pred, const py::array& truth, std::size_t classes) {
        const auto r = ug::evaluate(ug::parse_metric(metric), to_labels(pred), to_labels(truth), classes);
        py::dict d;
        d["metric_kind"] = std::string(ug::metric_name(r.kind));
        d["value"] = r.value;
        d["per_class"] = r.per_class;
        d["sample_count"] = r.sample_count;
        return d;
      },
      py::arg("metric"), py::arg("pred"), py::arg("truth"), py::arg("classes") = 0);

  m.def("default_sigma_grid", &ug::default_sigma_grid);
  m.def("seed_for", &ug::seed_for, py::arg("base"), py::arg("sigma_index"), py::arg("trial"));
  m.def(
      "calibrate",
      [](const py::array& logits, const py::array& labels, const std::string& metric, std::vector<double> grid,
         std::size_t trials, std::uint64_t seed, const std::string& mode, double delta,
         std::optional<py::array> importance, std::optional<double> tau, bool invert, std::size_t workers) {
        ug::SweepPlan plan;
        if (!grid.empty()) plan.sigma_grid = std::move(grid);
        plan.trials = trials;
        plan.base_seed = seed;
        plan.mode = ug::parse_mode(mode);
        plan.delta = delta;
        plan.metric = ug::parse_metric(metric);
        if (importance) plan.importance = ug::ImportanceMap::from_raw(tensor_from<float>(*importance));
        if (tau) plan.mask_config = ug::MaskConfig{*tau, invert};
        const auto table = ug::run_sweep(to_logits(logits), to_labels(labels), plan, workers);
        std::ostringstream out;
        table.write_text(out);
        return out.str();
      },
      py::arg("logits"), py::arg("labels"), py::arg("metric") = "accuracy", py::arg("grid") = std::vector<double>{},
      py::arg("trials") = 20, py::arg("seed") = 0, py::arg("mode") = "global", py::arg("delta") = 1.0,
      py::arg("importance") = py::none(), py::arg("tau") = py::none(), py::arg("invert") = false,
      py::arg("workers") = 1);

  m.def(
      "fit",
      [](const std::string& table_text, const std::string& family) {
        const auto table = parse_table(table_text);
        if (family == "exp") return ug::fit_decay(table).to_text();
        if (family == "isotonic") return ug::fit_interpolant(table).to_text();
        if (family == "auto") return ug::fit_auto(table).to_text();
        throw ug::InvalidArgument("family must be exp, auto or isotonic");
      },
      py::arg("table"), py::arg("family") = "auto");
  m.def("predict", [](const std::string& fit, double sigma) { return ug::predict(parse_fit(fit), sigma); },
        py::arg("fit"), py::arg("sigma"));
  m.def(
      "solve_sigma",
      [](const std::string& fit, double target) {
        const auto s = ug::solve_sigma(parse_fit(fit), target);
        return py::make_tuple(s.sigma, std::string(ug::clamp_name(s.clamp)));
      },
      py::arg("fit"), py::arg("target"));

  m.def(
      "make_policy",
      [](const std::string& fit, const std::string& metric, std::uint64_t seed,
         const std::vector<std::pair<std::string, double>>& tiers) {
        std::vector<ug::Tier> t;
        for (const auto& [name, target] : tiers) t.push_back({name, target});
        return ug::TierPolicy(ug::parse_metric(metric), seed, parse_fit(fit), std::move(t)).to_text();
      },
      py::arg("fit"), py::arg("metric"), py::arg("seed"), py::arg("tiers"));
  m.def(
      "resolve_tier",
      [](const std::string& policy, const std::string& tier) {
        std::istringstream in(policy);
        const auto r = ug::resolve_tier(ug::TierPolicy::parse(in), tier);
        return py::make_tuple(r.spec.sigma, r.achieved, std::string(ug::clamp_name(r.clamp)));
      },
      py::arg("policy"), py::arg("tier"));
  m.def(
      "apply_tier",
      [](const std::string& policy, const std::string& tier, const py::array& logits, std::uint64_t request_id) {
        std::istringstream in(policy);
        return to_array(ug::apply_tier(ug::TierPolicy::parse(in), tier, to_logits(logits), request_id).tensor());
      },
      py::arg("policy"), py::arg("tier"), py::arg("logits"), py::arg("request_id"));

  m.def(
      "gen_blobs",
      [](std::size_t classes, std::size_t per_class, double separation, std::size_t dim, std::uint64_t seed) {
        const auto b = ug::gen_blobs_logits({classes, per_class, separation, dim, seed});
        return py::make_tuple(to_array(b.logits.tensor()), to_array(b.labels.tensor()));
      },
      py::arg("classes") = 10, py::arg("per_class") = 100, py::arg("separation") = 1.25, py::arg("dim") = 16,
      py::arg("seed") = 0);
  m.def(
      "gen_scene",
      [](std::size_t height, std::size_t width, std::size_t classes, std::size_t shapes, std::uint64_t seed) {
        const auto s = ug::gen_scene({height, width, classes, shapes, seed});
        return py::make_tuple(to_array(s.logits.tensor()), to_array(s.labels.tensor()), to_array(s.importance.scores()));
      },
      py::arg("height") = 64, py::arg("width") = 64, py::arg("classes") = 4, py::arg("shapes") = 3,
      py::arg("seed") = 0);
}
