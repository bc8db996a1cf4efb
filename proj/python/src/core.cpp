#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "pegp/config.hpp"
#include "pegp/diagnostics.hpp"
#include "pegp/error.hpp"
#include "pegp/experiment.hpp"
#include "pegp/io.hpp"

namespace py = pybind11;
using namespace pegp;

namespace {

ExperimentConfig config_from(const std::string& text) {
  return parse_experiment_config(text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text));
}

// masks cross the boundary as uint8 arrays
Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask_out(const MaskMatrix& m) { return m.cast<std::uint8_t>(); }

MaskMatrix mask_in(const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& m) { return m.array() != 0; }

struct Prediction {
  Field mean;
  PredictiveField raw;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Physics-embedded Gaussian processes for traffic state estimation";
  m.attr("__version__") = PEGP_VERSION;

  py::register_exception<Error>(m, "PegpError", PyExc_ValueError);

  py::class_<SpaceTimeGrid>(m, "Grid")
      .def(py::init(&SpaceTimeGrid::make), py::arg("x_min"), py::arg("x_max"), py::arg("t_min"), py::arg("t_max"),
           py::arg("dx"), py::arg("dt"))
      .def_readonly("x_min", &SpaceTimeGrid::x_min)
      .def_readonly("x_max", &SpaceTimeGrid::x_max)
      .def_readonly("t_min", &SpaceTimeGrid::t_min)
      .def_readonly("t_max", &SpaceTimeGrid::t_max)
      .def_readonly("dx", &SpaceTimeGrid::dx)
      .def_readonly("dt", &SpaceTimeGrid::dt)
      .def_readonly("nx", &SpaceTimeGrid::nx)
      .def_readonly("nt", &SpaceTimeGrid::nt)
      .def("x_centers", [](const SpaceTimeGrid& g) {
        Eigen::VectorXd c(g.nx);
        for (int i = 0; i < g.nx; ++i) c[i] = g.x_center(i);
        return c;
      })
      .def("t_centers", [](const SpaceTimeGrid& g) {
        Eigen::VectorXd c(g.nt);
        for (int j = 0; j < g.nt; ++j) c[j] = g.t_center(j);
        return c;
      })
      .def("__repr__", [](const SpaceTimeGrid& g) {
        return "Grid(" + std::to_string(g.nx) + " x " + std::to_string(g.nt) + ")";
      });

  py::class_<Field>(m, "Field")
      .def(py::init([](const SpaceTimeGrid& g, const Eigen::MatrixXd& rho, const Eigen::MatrixXd& v,
                       const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& mask) {
             if (rho.rows() != g.nx || rho.cols() != g.nt || v.rows() != g.nx || v.cols() != g.nt ||
                 mask.rows() != g.nx || mask.cols() != g.nt)
               throw validation_error("field arrays must be nx x nt");
             Field f = Field::zeros(g);
             f.rho = rho;
             f.v = v;
             f.mask = mask_in(mask);
             return f;
           }),
           py::arg("grid"), py::arg("rho"), py::arg("v"), py::arg("mask"))
      .def_readonly("grid", &Field::grid)
      .def_readonly("rho", &Field::rho)
      .def_readonly("v", &Field::v)
      .def_property_readonly("mask", [](const Field& f) { return mask_out(f.mask); })
      .def("to_csv", [](const Field& f) {
        std::ostringstream os;
        write_field_csv(os, f);
        return os.str();
      })
      .def_static("from_csv", [](const std::string& text) {
        std::istringstream is(text);
        return read_field_csv(is);
      });

  py::class_<ObservationSet>(m, "Observations")
      .def("__len__", &ObservationSet::size)
      .def_readonly("seed", &ObservationSet::seed)
      .def_property_readonly("x", [](const ObservationSet& o) {
        Eigen::VectorXd v(o.size());
        for (std::size_t k = 0; k < o.size(); ++k) v[k] = o.entries[k].x;
        return v;
      })
      .def_property_readonly("t", [](const ObservationSet& o) {
        Eigen::VectorXd v(o.size());
        for (std::size_t k = 0; k < o.size(); ++k) v[k] = o.entries[k].t;
        return v;
      })
      .def_property_readonly("output", [](const ObservationSet& o) {
        Eigen::VectorXi v(o.size());
        for (std::size_t k = 0; k < o.size(); ++k) v[k] = static_cast<int>(o.entries[k].output);
        return v;
      })
      .def_property_readonly("value", [](const ObservationSet& o) {
        Eigen::VectorXd v(o.size());
        for (std::size_t k = 0; k < o.size(); ++k) v[k] = o.entries[k].value;
        return v;
      })
      .def("to_csv", [](const ObservationSet& o) {
        std::ostringstream os;
        write_observations_csv(os, o);
        return os.str();
      });

  py::class_<TruthData>(m, "Truth")
      .def_readonly("field", &TruthData::field)
      .def_property_readonly("n_vehicles", [](const TruthData& t) { return t.trajectories.vehicle_ids().size(); })
      .def_property_readonly("vehicle_weight", [](const TruthData& t) { return t.trajectories.weight; });

  py::class_<Prediction>(m, "Prediction")
      .def_readonly("mean", &Prediction::mean)
      .def_property_readonly("var_rho", [](const Prediction& p) { return p.raw.var_rho_obs; })
      .def_property_readonly("var_v", [](const Prediction& p) { return p.raw.var_v_obs; })
      .def_property_readonly("var_rho_latent", [](const Prediction& p) { return p.raw.var_rho_latent; })
      .def_property_readonly("var_v_latent", [](const Prediction& p) { return p.raw.var_v_latent; });

  py::class_<SVGPState>(m, "Model")
      .def_property_readonly("kernel", [](const SVGPState& s) { return kernel_mode_name(s.kernel.mode); })
      .def_property_readonly("inducing", &SVGPState::inducing)
      .def_property_readonly("final_elbo", [](const SVGPState& s) { return s.meta.final_elbo; })
      .def_property_readonly("trace", [](const SVGPState& s) { return s.meta.trace; })
      .def("predict", [](const SVGPState& s, const SpaceTimeGrid& g) {
        Prediction p;
        p.raw = predict_field(s, g);
        p.mean = p.raw.mean_field();
        return p;
      }, py::arg("grid"))
      .def("decompose", [](const SVGPState& s, const Eigen::MatrixXd& xt) {
        if (xt.cols() != 2) throw validation_error("points must be an n x 2 array of (x, t)");
        std::vector<Point> pts;
        for (Eigen::Index k = 0; k < xt.rows(); ++k) pts.push_back({xt(k, 0), xt(k, 1)});
        const MeanDecomposition d = decompose_mean(s, pts);
        return py::make_tuple(d.total, d.phys, d.res);
      }, py::arg("points"))
      .def("to_json", [](const SVGPState& s) { return model_to_json(s).dump(2); })
      .def_static("from_json", [](const std::string& text) { return model_from_json(nlohmann::json::parse(text)); });


  m.def("simulate", [](const std::string& config, std::optional<std::uint64_t> seed) {
    ExperimentConfig c = config_from(config);
    if (seed) c.scenario.seed = *seed;
    py::gil_scoped_release release;
    return simulate(c.scenario);
  }, py::arg("config") = "", py::arg("seed") = py::none());

  m.def("sample", [](const TruthData& truth, const std::string& config, std::optional<double> p, std::uint64_t seed) {
    const ExperimentConfig c = config_from(config);
    return sample_observations(truth, c.sampling, p.value_or(c.sampling.penetration), seed);
  }, py::arg("truth"), py::arg("config") = "", py::arg("penetration") = py::none(), py::arg("seed") = 1);

  m.def("fit", [](const ObservationSet& obs, const std::string& config, std::optional<std::uint64_t> seed) {
    ExperimentConfig c = config_from(config);
    if (seed) c.model.seed = *seed;
    py::gil_scoped_release release;
    return train(obs, c.model);
  }, py::arg("observations"), py::arg("config") = "", py::arg("seed") = py::none());

  m.def("reconstruct", [](const std::string& method, const ObservationSet& obs, const SpaceTimeGrid& grid,
                          const std::string& config, std::uint64_t seed) {
    const ExperimentConfig c = config_from(config);
    const Method mt = parse_method(method);
    py::gil_scoped_release release;
    return run_method(mt, obs, grid, c.methods, seed);
  }, py::arg("method"), py::arg("observations"), py::arg("grid"), py::arg("config") = "", py::arg("seed") = 1);

  m.def("evaluate", [](const Field& truth, const Field& estimate, double speed_unit, double density_unit) {
    const MetricRow r = mae_rmse(truth, estimate, Units{speed_unit, density_unit});
    py::dict d;
    d["mae_v"] = r.mae_v;
    d["rmse_v"] = r.rmse_v;
    d["mae_rho"] = r.mae_rho;
    d["rmse_rho"] = r.rmse_rho;
    d["n"] = r.n;
    return d;
  }, py::arg("truth"), py::arg("estimate"), py::arg("speed_unit") = 1.0, py::arg("density_unit") = 1.0);

  m.def("shares", [](const Eigen::VectorXd& mu, const Eigen::VectorXd& phys, const Eigen::VectorXd& res) {
    const Shares s = shares(mu, phys, res);
    py::dict d;
    d["s_phys"] = s.s_phys;
    d["s_res"] = s.s_res;
    d["e_phys"] = s.e_phys;
    d["e_res"] = s.e_res;
    return d;
  }, py::arg("mu"), py::arg("mu_phys"), py::arg("mu_res"));
  m.def("joint_ratio", &joint_ratio, py::arg("mu"), py::arg("mu_phys"), py::arg("mu_res"));
  m.def("cka", &cka, py::arg("x"), py::arg("y"));
  m.def("principal_angles", [](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int k) {
    return principal_angles(x, y, k).degrees;
  }, py::arg("x"), py::arg("y"), py::arg("k") = 5);
}
