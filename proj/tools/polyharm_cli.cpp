// Command-line front end: every subcommand reads a JSON config and writes its
// artifacts into an output directory.  Exit codes: 0 success, 2 config error,
// 3 solver failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "polyharm/bench.hpp"
#include "polyharm/cgo.hpp"
#include "polyharm/fields.hpp"
#include "polyharm/forward.hpp"
#include "polyharm/hodge.hpp"
#include "polyharm/reconstruct.hpp"

namespace fs = std::filesystem;
using namespace polyharm;
using nlohmann::json;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

std::shared_ptr<const GridSpec> grid_from(const json& doc) {
  int N = 21;
  double L = 1.0;
  if (doc.contains("grid")) {
    N = doc.at("grid").value("N", 21);
    L = doc.at("grid").value("L", 1.0);
  }
  if (N < 17 || N % 2 == 0) throw ConfigError("grid N must be odd and >= 17");
  if (L <= 0) throw ConfigError("grid L must be positive");
  return build_grid(N, L);
}

/// Boundary data described either inline ("plane": exp(i k.x) on f_0) or by
/// a trace file {"m": ..., "f": [[[re, im], ...], ...]}.
NavierTrace trace_from(std::shared_ptr<const GridSpec> g, int m,
                       const json& doc) {
  NavierTrace f(g, m);
  if (doc.contains("trace_file")) {
    json t = read_json(doc.at("trace_file"));
    if (t.value("m", m) != m) throw ConfigError("trace order mismatch");
    const auto& rows = t.at("f");
    if (static_cast<int>(rows.size()) != m)
      throw ConfigError("trace must carry m component lists");
    for (int j = 0; j < m; ++j) {
      const auto& row = rows.at(j);
      if (static_cast<int>(row.size()) != g->num_boundary())
        throw ConfigError("trace length does not match the grid boundary");
      for (int b = 0; b < g->num_boundary(); ++b)
        f.f[j][b] = Complex(row.at(b).at(0), row.at(b).at(1));
    }
    return f;
  }
  std::vector<double> k = doc.value("plane", std::vector<double>{1.0, 0.0, 0.0});
  if (k.size() != 3) throw ConfigError("plane wave needs three components");
  for (int b = 0; b < g->num_boundary(); ++b) {
    const Vec3 x = g->point(g->boundary_nodes[b]);
    f.f[0][b] = std::exp(Complex(0.0, k[0] * x[0] + k[1] * x[1] + k[2] * x[2]));
  }
  return f;
}

json neumann_to_json(const NeumannTrace& gn) {
  json rows = json::array();
  for (const auto& comp : gn.g) {
    json row = json::array();
    for (Eigen::Index b = 0; b < comp.size(); ++b)
      row.push_back({comp[b].real(), comp[b].imag()});
    rows.push_back(std::move(row));
  }
  return json{{"m", gn.order()}, {"g", std::move(rows)}};
}

int cmd_forward(const json& doc, const std::string& out, bool with_dtn) {
  auto g = grid_from(doc);
  const int m = doc.value("m", 2);
  Scenario sc = make_coefficients(g, doc.value("recipe", "zero"),
                                  doc.value("seed", 1), m);
  NavierTrace f = trace_from(g, m, doc);
  Solution sol = solve_navier(sc.coeffs, f);
  fs::create_directories(out);
  for (int j = 0; j < m; ++j)
    dump_field((fs::path(out) / ("v" + std::to_string(j) + ".field")).string(),
               *g, sol.v[j].v, 1, "solution");
  NeumannTrace gn = neumann_trace(sol);
  atomic_write(out, "neumann.json", neumann_to_json(gn).dump(2) + "\n");
  json diag{{"iterations", sol.iterations},
            {"residual", sol.residual},
            {"m", m},
            {"N", g->N},
            {"L", g->L}};
  if (with_dtn) {
    json zero_doc{{"recipe", "zero"}, {"seed", 1}};
    Scenario base = make_coefficients(g, "zero", 1, m);
    NeumannTrace g0 = neumann_trace(solve_navier(base.coeffs, f));
    json rows = json::array();
    for (int j = 0; j < m; ++j) {
      json row = json::array();
      for (Eigen::Index b = 0; b < gn.g[j].size(); ++b) {
        const Complex d = gn.g[j][b] - g0.g[j][b];
        row.push_back({d.real(), d.imag()});
      }
      rows.push_back(std::move(row));
    }
    atomic_write(out, "dtn_difference.json",
                 json{{"m", m}, {"g", rows}}.dump(2) + "\n");
    diag["dtn_norm_vs_zero"] =
        dtn_norm(base.coeffs, sc.coeffs, doc.value("modes_per_face", 16));
  }
  atomic_write(out, "diagnostics.json", diag.dump(2) + "\n");
  return 0;
}

int cmd_hodge(const json& doc, const std::string& out) {
  const std::string input = doc.value("input", "");
  if (input.empty()) throw ConfigError("hodge needs an input field dump");
  if (!fs::exists(input) || !fs::exists(input + ".json"))
    throw ConfigError("field dump not found: " + input);
  FieldDump d = load_field(input);
  auto g = build_grid(d.N, d.L);
  fs::create_directories(out);
  json diag;
  if (d.components == 6) {
    SymTensorField A(g);
    A.v = d.vals;
    TensorHodge H = decompose_tensor(A);
    dump_field((fs::path(out) / "A_prime.field").string(), *g, H.A_prime.v, 6,
               "A_prime");
    dump_field((fs::path(out) / "V.field").string(), *g, H.V.v, 3, "V");
    dump_field((fs::path(out) / "theta.field").string(), *g, H.theta.v, 1,
               "theta");
    diag = {{"div_norm", H.div_norm},
            {"trace_norm", H.trace_norm},
            {"bvp_residual", H.bvp_residual}};
  } else if (d.components == 3) {
    VectorField X(g);
    X.v = d.vals;
    VectorHodge H = decompose_vector(X);
    dump_field((fs::path(out) / "X_prime.field").string(), *g, H.X_prime.v, 3,
               "X_prime");
    dump_field((fs::path(out) / "theta.field").string(), *g, H.theta.v, 1,
               "theta");
    diag = {{"div_norm", H.div_norm}, {"bvp_residual", H.bvp_residual}};
  } else {
    throw ConfigError("hodge input must have 3 or 6 components");
  }
  atomic_write(out, "diagnostics.json", diag.dump(2) + "\n");
  return 0;
}

int cmd_cgo_verify(const json& doc, const std::string& out) {
  auto g = grid_from(doc);
  const int m = doc.value("m", 2);
  Scenario sc = make_coefficients(g, doc.value("recipe", "q-only"),
                                  doc.value("seed", 1), m);
  std::vector<double> u = doc.value("direction", std::vector<double>{});
  CgoDirection dir;
  if (u.size() == 6)
    dir = make_direction(Vec3(u[0], u[1], u[2]), Vec3(u[3], u[4], u[5]));
  else if (u.empty())
    dir = make_direction(Vec3(1, 0, 0), Vec3(0, 1, 0));
  else
    throw ConfigError("direction wants six numbers (omega, omega_tilde)");
  std::vector<double> xv = doc.value("xi", std::vector<double>{0, 0, 0});
  if (xv.size() != 3) throw ConfigError("xi wants three numbers");
  const Vec3 xi(xv[0], xv[1], xv[2]);
  std::vector<double> h_list =
      doc.value("h_list", std::vector<double>{0.5, 0.35, 0.25, 0.18});
  for (double h : h_list)
    if (h < 0.15 || h > 0.5) throw ConfigError("h outside [0.15, 0.5]");

  Scenario zero = make_coefficients(g, "zero", 1, m);
  AmplitudePair pair = make_amplitude_pair(g, AmplitudeKind::exp_xi,
                                           AmplitudeKind::one, xi, dir,
                                           sc.coeffs, zero.coeffs);
  std::vector<double> norms;
  const double slope = residual_order(sc.coeffs, dir, pair, h_list, &norms);
  json result{{"slopes", {slope}},
              {"transport_residuals",
               {pair.alpha2.transport_residual,
                pair.alpha2_star.transport_residual}},
              {"residual_norms", norms},
              {"h_list", h_list}};
  fs::create_directories(out);
  atomic_write(out, "cgo_verify.json", result.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"polyharmonic inverse-problem laboratory"};
  app.require_subcommand(1);
  std::string config_path, out_dir;

  const char* names[] = {"forward", "dtn",         "hodge",
                         "cgo-verify", "reconstruct", "sweep"};
  for (const char* n : names) {
    CLI::App* sub = app.add_subcommand(n);
    sub->add_option("--config", config_path, "JSON configuration file")
        ->required();
    sub->add_option("--out", out_dir, "output directory");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    json doc = read_json(config_path);
    if (cmd == "reconstruct" || cmd == "sweep") {
      ExperimentConfig cfg = parse_config(doc);
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (cmd == "reconstruct")
        run_scenario(cfg);
      else
        stability_sweep(cfg);
      return 0;
    }
    if (out_dir.empty()) out_dir = doc.value("output_dir", "");
    if (out_dir.empty()) throw ConfigError("--out (or output_dir) is required");
    if (cmd == "forward") return cmd_forward(doc, out_dir, false);
    if (cmd == "dtn") return cmd_forward(doc, out_dir, true);
    if (cmd == "hodge") return cmd_hodge(doc, out_dir);
    if (cmd == "cgo-verify") return cmd_cgo_verify(doc, out_dir);
    std::fprintf(stderr, "unknown subcommand %s\n", cmd.c_str());
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const SolverError& e) {
    std::fprintf(stderr, "solver failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
