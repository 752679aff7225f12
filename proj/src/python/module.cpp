// Python bindings: thin numpy-facing wrappers over the field types plus the
// entry points a notebook user actually wants (recipes, Hodge splits, the
// stability fit, config validation).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <complex>

#include "polyharm/bench.hpp"
#include "polyharm/fields.hpp"
#include "polyharm/forward.hpp"
#include "polyharm/hodge.hpp"
#include "polyharm/reconstruct.hpp"

namespace py = pybind11;
using namespace polyharm;

namespace {

using CArray = py::array_t<std::complex<double>>;

CArray to_numpy(const GridSpec& g, const Eigen::VectorXcd& v, int comps) {
  CArray out(comps == 1 ? std::vector<py::ssize_t>{g.N, g.N, g.N}
                        : std::vector<py::ssize_t>{g.N, g.N, g.N, comps});
  std::complex<double>* dst = out.mutable_data();
  for (Eigen::Index i = 0; i < v.size(); ++i) dst[i] = v[i];
  return out;
}

Eigen::VectorXcd from_numpy(const CArray& a, const GridSpec& g, int comps) {
  const auto info = a.request();
  const py::ssize_t want = static_cast<py::ssize_t>(g.num_nodes()) * comps;
  if (info.size != want)
    throw py::value_error("array size does not match the grid");
  CArray c = py::array_t<std::complex<double>,
                         py::array::c_style | py::array::forcecast>(a);
  Eigen::VectorXcd v(want);
  const std::complex<double>* src = c.data();
  for (py::ssize_t i = 0; i < want; ++i) v[i] = src[i];
  return v;
}

py::dict scenario_dict(const Scenario& sc, const GridSpec& g) {
  py::dict d;
  d["name"] = sc.name;
  d["m"] = sc.coeffs.m;
  d["A"] = to_numpy(g, sc.coeffs.A.v, 6);
  d["B"] = to_numpy(g, sc.coeffs.B.v, 3);
  d["q"] = to_numpy(g, sc.coeffs.q.v, 1);
  if (sc.V_truth) d["V_truth"] = to_numpy(g, sc.V_truth->v, 3);
  if (sc.theta_truth) d["theta_truth"] = to_numpy(g, sc.theta_truth->v, 1);
  if (sc.a_truth) d["a_truth"] = to_numpy(g, sc.a_truth->v, 1);
  return d;
}

}  // namespace

PYBIND11_MODULE(_polyharm, mod) {
  mod.doc() = "polyharmonic inverse-problem laboratory";
  mod.attr("__version__") = "0.1.0";

  mod.def(
      "grid_info",
      [](int N, double L) {
        auto g = build_grid(N, L);
        py::dict d;
        d["N"] = g->N;
        d["L"] = g->L;
        d["dx"] = g->dx;
        d["num_nodes"] = g->num_nodes();
        d["num_boundary"] = g->num_boundary();
        return d;
      },
      py::arg("N"), py::arg("L") = 1.0);

  mod.def(
      "bump",
      [](int N, double L, std::vector<double> center, double rho,
         std::complex<double> amplitude) {
        if (center.size() != 3) throw py::value_error("center needs 3 entries");
        auto g = build_grid(N, L);
        ScalarField f = bump_scalar(g, Vec3(center[0], center[1], center[2]),
                                    rho, amplitude);
        return to_numpy(*g, f.v, 1);
      },
      py::arg("N"), py::arg("L"), py::arg("center"), py::arg("rho"),
      py::arg("amplitude") = std::complex<double>(1.0, 0.0));

  mod.def(
      "scenario",
      [](const std::string& recipe, std::uint64_t seed, int m, int N,
         double L) {
        auto g = build_grid(N, L);
        return scenario_dict(make_coefficients(g, recipe, seed, m), *g);
      },
      py::arg("recipe"), py::arg("seed") = 1, py::arg("m") = 2,
      py::arg("N") = 17, py::arg("L") = 1.0);

  mod.def(
      "hodge_tensor",
      [](const CArray& A, int N, double L) {
        auto g = build_grid(N, L);
        SymTensorField T(g);
        T.v = from_numpy(A, *g, 6);
        TensorHodge H = decompose_tensor(T);
        py::dict d;
        d["A_prime"] = to_numpy(*g, H.A_prime.v, 6);
        d["V"] = to_numpy(*g, H.V.v, 3);
        d["theta"] = to_numpy(*g, H.theta.v, 1);
        d["div_norm"] = H.div_norm;
        d["trace_norm"] = H.trace_norm;
        d["bvp_residual"] = H.bvp_residual;
        return d;
      },
      py::arg("A"), py::arg("N"), py::arg("L") = 1.0);

  mod.def(
      "hodge_vector",
      [](const CArray& X, int N, double L) {
        auto g = build_grid(N, L);
        VectorField F(g);
        F.v = from_numpy(X, *g, 3);
        VectorHodge H = decompose_vector(F);
        py::dict d;
        d["X_prime"] = to_numpy(*g, H.X_prime.v, 3);
        d["theta"] = to_numpy(*g, H.theta.v, 1);
        d["div_norm"] = H.div_norm;
        d["bvp_residual"] = H.bvp_residual;
        return d;
      },
      py::arg("X"), py::arg("N"), py::arg("L") = 1.0);

  mod.def(
      "xi_lattice",
      [](double R, double delta) {
        XiLattice lat = make_xi_lattice(R, delta);
        py::array_t<double> out(
            std::vector<py::ssize_t>{(py::ssize_t)lat.points.size(), 3});
        double* dst = out.mutable_data();
        for (std::size_t i = 0; i < lat.points.size(); ++i)
          for (int c = 0; c < 3; ++c) dst[3 * i + c] = lat.points[i][c];
        return out;
      },
      py::arg("R"), py::arg("delta"));

  mod.def(
      "dtn_norm",
      [](const std::string& recipe1, const std::string& recipe2,
         std::uint64_t seed, int m, int N, double L, int modes_per_face) {
        auto g = build_grid(N, L);
        Scenario s1 = make_coefficients(g, recipe1, seed, m);
        Scenario s2 = make_coefficients(g, recipe2, seed + 1, m);
        return dtn_norm(s1.coeffs, s2.coeffs, modes_per_face);
      },
      py::arg("recipe1"), py::arg("recipe2"), py::arg("seed") = 1,
      py::arg("m") = 2, py::arg("N") = 17, py::arg("L") = 1.0,
      py::arg("modes_per_face") = 9);

  mod.def(
      "fit_stability",
      [](std::vector<double> proxies, std::vector<double> errors) {
        if (proxies.size() != errors.size())
          throw py::value_error("proxy and error lists must match");
        std::vector<StabilityRecord> recs(proxies.size());
        for (std::size_t i = 0; i < proxies.size(); ++i) {
          recs[i].dtn_norm_proxy = proxies[i];
          recs[i].err_l2["q"] = errors[i];
        }
        StabilityFit fit = polyharm::fit_stability(recs, "q");
        py::dict d;
        d["mu"] = fit.mu;
        d["c_log"] = fit.c_log;
        d["c_root"] = fit.c_root;
        d["residual"] = fit.residual;
        d["power_residual"] = fit.power_residual;
        d["power_exponent"] = fit.power_exponent;
        d["monotone"] = fit.monotone;
        d["degenerate"] = fit.degenerate;
        return d;
      },
      py::arg("proxies"), py::arg("errors"));

  mod.def(
      "validate_config",
      [](const std::string& text) {
        nlohmann::json doc;
        try {
          doc = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
          throw py::value_error(e.what());
        }
        try {
          ExperimentConfig c = parse_config(doc);
          py::dict d;
          d["recipe1"] = c.recipe1;
          d["recipe2"] = c.recipe2;
          d["m"] = c.m;
          d["N"] = c.N;
          d["L"] = c.L;
          d["h_list"] = c.h_list;
          d["pipeline"] = c.pipeline;
          return d;
        } catch (const ConfigError& e) {
          throw py::value_error(e.what());
        }
      },
      py::arg("text"));
}
