#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tptkit/error.hpp"
#include "tptkit/evaluate.hpp"
#include "tptkit/gridding.hpp"
#include "tptkit/height_adjust.hpp"
#include "tptkit/pipeline.hpp"
#include "tptkit/projection.hpp"
#include "tptkit/stats.hpp"

namespace py = pybind11;
using namespace tptkit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::span<const double> view(const Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

py::array_t<double> to_array(const std::vector<double>& v) {
  return py::array_t<double>(static_cast<py::ssize_t>(v.size()), v.data());
}

std::vector<Point2> points(const Array& xy) {
  if (xy.ndim() != 2 || xy.shape(1) != 2) throw ShapeError("points must be an (n, 2) array");
  std::vector<Point2> p(static_cast<std::size_t>(xy.shape(0)));
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = {xy.data()[2 * i], xy.data()[2 * i + 1]};
  return p;
}

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
  if (o.is_none()) return nlohmann::json::object();
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

} // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Turbulent potential temperature forecasting toolkit";
  m.attr("__version__") = kVersion;

  py::exception<Error>(m, "TptkitError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object cls = py::module_::import("tptkit._core").attr("TptkitError");
      py::object inst = cls(e.what());
      inst.attr("kind") = e.kind();
      PyErr_SetObject(cls.ptr(), inst.ptr());
    }
  });

  py::class_<GeoBox>(m, "GeoBox")
      .def(py::init<>())
      .def_readwrite("lat_min", &GeoBox::lat_min)
      .def_readwrite("lat_max", &GeoBox::lat_max)
      .def_readwrite("lon_min", &GeoBox::lon_min)
      .def_readwrite("lon_max", &GeoBox::lon_max);
  m.def("project", &project, py::arg("lat"), py::arg("lon"), py::arg("box") = GeoBox{},
        "WGS84 degrees to EPSG:5179 (easting, northing) in metres.");
  m.def("unproject", &unproject, py::arg("easting"), py::arg("northing"));

  py::class_<VariogramModel>(m, "VariogramModel")
      .def(py::init([](const std::string& kind, double nugget, double sill, double range_m) {
             VariogramModel v{parse_variogram_kind(kind), nugget, sill, range_m};
             v.validate();
             return v;
           }),
           py::arg("kind") = "exponential", py::arg("nugget") = 0.0, py::arg("sill") = 1.0,
           py::arg("range_m") = 50000.0)
      .def_property_readonly("kind", [](const VariogramModel& v) { return to_string(v.kind); })
      .def_readwrite("nugget", &VariogramModel::nugget)
      .def_readwrite("sill", &VariogramModel::sill)
      .def_readwrite("range_m", &VariogramModel::range_m)
      .def("__call__", &VariogramModel::operator(), py::arg("h"))
      .def("__repr__", [](const VariogramModel& v) {
        return "VariogramModel(" + v.to_json().dump() + ")";
      });

  m.def(
      "empirical_variogram",
      [](const Array& xy, const Array& values, double bin_width_m, double max_lag_m) {
        auto bins = empirical_variogram(points(xy), view(values), bin_width_m, max_lag_m);
        std::vector<double> lag, gamma, pairs;
        for (const auto& b : bins) {
          lag.push_back(b.lag);
          gamma.push_back(b.semivariance);
          pairs.push_back(static_cast<double>(b.pairs));
        }
        return py::make_tuple(to_array(lag), to_array(gamma), to_array(pairs));
      },
      py::arg("points"), py::arg("values"), py::arg("bin_width_m") = 5000.0,
      py::arg("max_lag_m") = 150000.0, "Returns (lag, semivariance, pairs) arrays.");
  m.def(
      "fit_variogram",
      [](const Array& lag, const Array& gamma, const Array& pairs, const std::string& kind) {
        if (lag.size() != gamma.size() || lag.size() != pairs.size())
          throw ShapeError("lag, semivariance and pairs differ in length");
        std::vector<VariogramBin> bins;
        for (py::ssize_t i = 0; i < lag.size(); ++i)
          bins.push_back({lag.data()[i], gamma.data()[i], static_cast<std::int64_t>(pairs.data()[i])});
        return fit_variogram(bins, parse_variogram_kind(kind));
      },
      py::arg("lag"), py::arg("semivariance"), py::arg("pairs"), py::arg("kind") = "exponential");

  py::class_<OrdinaryKriging>(m, "OrdinaryKriging")
      .def(py::init([](const Array& xy, const VariogramModel& vg) {
             return OrdinaryKriging(points(xy), vg);
           }),
           py::arg("points"), py::arg("variogram"))
      .def("weights", [](const OrdinaryKriging& k, const Array& targets) {
        const auto t = points(targets);
        auto w = k.weight_matrix(t);
        return py::array_t<double>({static_cast<py::ssize_t>(t.size()), static_cast<py::ssize_t>(k.size())},
                                   w.data());
      }, py::arg("targets"), "Weights as a (targets, stations) array.")
      .def("estimate", [](const OrdinaryKriging& k, const Array& targets, const Array& values) {
        if (static_cast<std::size_t>(values.size()) != k.size())
          throw ShapeError("one value per station expected");
        std::vector<double> out;
        for (const auto& p : points(targets)) out.push_back(k.estimate(p, view(values)));
        return to_array(out);
      }, py::arg("targets"), py::arg("values"))
      .def("__len__", &OrdinaryKriging::size);

  py::class_<GridSpec>(m, "GridSpec")
      .def(py::init([](int nx, int ny, double dx, double origin_e, double origin_n) {
             return GridSpec{nx, ny, dx, origin_e, origin_n};
           }),
           py::arg("nx") = 128, py::arg("ny") = 128, py::arg("dx") = 5000.0,
           py::arg("origin_e") = 0.0, py::arg("origin_n") = 0.0)
      .def_readwrite("nx", &GridSpec::nx)
      .def_readwrite("ny", &GridSpec::ny)
      .def_readwrite("dx", &GridSpec::dx)
      .def_readwrite("origin_e", &GridSpec::origin_e)
      .def_readwrite("origin_n", &GridSpec::origin_n);

  m.def(
      "sample_bilinear",
      [](const GridSpec& g, const Array& field, const Array& xy) {
        if (static_cast<std::size_t>(field.size()) != g.size())
          throw ShapeError("field must hold ny*nx values");
        return to_array(sample_bilinear(g, view(field), points(xy)));
      },
      py::arg("grid"), py::arg("field"), py::arg("points"));

  m.def("autocorrelation", [](const Array& x, std::size_t max_lag) {
    return to_array(autocorrelation(view(x), max_lag));
  }, py::arg("series"), py::arg("max_lag"));
  m.def("integral_time_scale", [](const Array& rho, double step_hours) {
    return integral_time_scale(view(rho), step_hours);
  }, py::arg("rho"), py::arg("step_hours") = 1.0);

  m.def("rmse_station", [](const Array& pred, const Array& truth, const Array& clim) {
    return rmse_station(view(pred), view(truth), view(clim));
  }, py::arg("pred_tprime"), py::arg("truth_k"), py::arg("clim_k"));
  m.def("rmse_aggregate", [](const Array& v) { return rmse_aggregate(view(v)); },
        py::arg("per_station"));
  m.def(
      "rmse_mesh",
      [](const Array& pred, const Array& truth, const py::array_t<std::uint8_t>& inland,
         std::size_t steps) {
        Mask mask(inland.data(), inland.data() + inland.size());
        return rmse_mesh(view(pred), view(truth), mask, steps);
      },
      py::arg("pred"), py::arg("truth"), py::arg("inland"), py::arg("steps"));

  py::class_<HeightAdjustModel>(m, "HeightAdjustModel")
      .def(py::init<>())
      .def_readwrite("p0_hpa", &HeightAdjustModel::p0_hpa)
      .def_readwrite("kappa", &HeightAdjustModel::kappa)
      .def_readwrite("scale_height_m", &HeightAdjustModel::scale_height_m)
      .def("factor", &HeightAdjustModel::factor, py::arg("z"))
      .def("pressure_hpa", &HeightAdjustModel::pressure_hpa, py::arg("z"));
  m.def("to_potential", &to_potential, py::arg("tprime"), py::arg("z"), py::arg("model") = HeightAdjustModel{});
  m.def("from_potential", &from_potential, py::arg("theta_prime"), py::arg("z"),
        py::arg("model") = HeightAdjustModel{});

  py::class_<Pipeline>(m, "Pipeline")
      .def(py::init([](const py::object& config) {
             return Pipeline(PipelineConfig::from_json(from_py(config)));
           }),
           py::arg("config") = py::none(), "Config as a dict with the CLI's JSON keys.")
      .def_property_readonly("config", [](const Pipeline& p) { return to_py(p.config().to_json()); })
      .def("synth", [](Pipeline& p) { return to_py(p.synth()); })
      .def("ingest", [](Pipeline& p) { return to_py(p.ingest()); })
      .def("qc", [](Pipeline& p) { return to_py(p.qc()); })
      .def("climatology", [](Pipeline& p) { return to_py(p.climatology()); })
      .def("transform", [](Pipeline& p) { return to_py(p.transform()); })
      .def("krige", [](Pipeline& p) { return to_py(p.krige()); })
      .def("stats", [](Pipeline& p) { return to_py(p.stats()); })
      .def("train", [](Pipeline& p, const std::string& model, int lead) {
        return to_py(p.train(model, lead));
      }, py::arg("model"), py::arg("lead_hours") = 12)
      .def("predict", [](Pipeline& p, const std::string& model, int lead, const std::string& split) {
        return to_py(p.predict(model, lead, parse_split(split)));
      }, py::arg("model"), py::arg("lead_hours") = 12, py::arg("split") = "test")
      .def("rollout", [](Pipeline& p, const std::string& model, int lead, int steps,
                         const std::string& split) {
        return to_py(p.rollout(model, lead, steps, parse_split(split)));
      }, py::arg("model"), py::arg("lead_hours"), py::arg("steps"), py::arg("split") = "test")
      .def("evaluate", [](Pipeline& p, int lead, const std::string& split) {
        EvaluateOptions opt;
        opt.lead_hours = lead;
        opt.split = parse_split(split);
        return to_py(p.evaluate(opt));
      }, py::arg("lead_hours") = 12, py::arg("split") = "test")
      .def("report", [](Pipeline& p) { return to_py(p.report()); });
}
