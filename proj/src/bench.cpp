#include "polyharm/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "polyharm/fields.hpp"
#include "polyharm/forward.hpp"

namespace polyharm {

namespace fs = std::filesystem;

namespace {

const char* kVersion = "0.1.0";

bool anisotropic_recipe(const std::string& name) {
  return name == "A-divfree" || name == "A-potential" ||
         name == "A-isotropic" || name == "combined";
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string h_tag(double h) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "h%.4f", h);
  return buf;
}

std::string xi_text(const Vec3& xi) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.10g;%.10g;%.10g", xi[0], xi[1], xi[2]);
  return buf;
}

Scenario build_scenario(std::shared_ptr<const GridSpec> g,
                        const std::string& recipe, std::uint64_t seed, int m) {
  return make_coefficients(g, recipe, seed, m);
}

ScalarField optional_diff(std::shared_ptr<const GridSpec> g,
                          const std::optional<ScalarField>& a,
                          const std::optional<ScalarField>& b) {
  ScalarField d(g);
  if (b) d.v += b->v;
  if (a) d.v -= a->v;
  return d;
}

VectorField optional_diff(std::shared_ptr<const GridSpec> g,
                          const std::optional<VectorField>& a,
                          const std::optional<VectorField>& b) {
  VectorField d(g);
  if (b) d.v += b->v;
  if (a) d.v -= a->v;
  return d;
}

/// Ground-truth fields of the coefficient difference (operator 2 minus 1).
struct TruthSet {
  ScalarField q, theta, a_iso;
  VectorField B, V;
  SymTensorField A;
  bool has_V = false, has_theta = false, has_a = false;
};

TruthSet make_truth(std::shared_ptr<const GridSpec> g, const Scenario& s1,
                    const Scenario& s2) {
  TruthSet t{ScalarField(g), ScalarField(g), ScalarField(g),
             VectorField(g),  VectorField(g), SymTensorField(g)};
  t.q.v = s2.coeffs.q.v - s1.coeffs.q.v;
  t.B.v = s2.coeffs.B.v - s1.coeffs.B.v;
  t.A.v = s2.coeffs.A.v - s1.coeffs.A.v;
  t.has_V = s1.V_truth.has_value() || s2.V_truth.has_value();
  t.has_theta = s1.theta_truth.has_value() || s2.theta_truth.has_value();
  t.has_a = s1.a_truth.has_value() || s2.a_truth.has_value();
  t.V = optional_diff(g, s1.V_truth, s2.V_truth);
  t.theta = optional_diff(g, s1.theta_truth, s2.theta_truth);
  t.a_iso = optional_diff(g, s1.a_truth, s2.a_truth);
  return t;
}

/// Solenoidal trace-free projection at frequency xi (plain deviatoric part
/// at xi = 0, where no direction is singled out).
Eigen::Matrix3cd tt_project(const Eigen::Matrix3cd& M, const Vec3& xi) {
  const Eigen::Matrix3cd id = Eigen::Matrix3cd::Identity();
  if (xi.norm() < 1e-12) return M - (M.trace() / 3.0) * id;
  const Vec3 n = xi.normalized();
  const Eigen::Matrix3cd P = id - (n * n.transpose()).cast<Complex>();
  const Eigen::Matrix3cd S = P * M * P;
  return S - 0.5 * S.trace() * P;
}

struct TruthRow {
  bool known = false;
  Complex value;
};

/// Truth value for one (kind, xi, slot); slot indexes the entry vector.
TruthRow truth_entry(const TruthSet& t, const std::string& kind,
                     const Vec3& xi, int slot) {
  TruthRow r;
  if (kind == "q_hat") {
    r.known = true;
    r.value = fourier_truth(t.q, xi);
  } else if (kind == "a_iso" && t.has_a) {
    r.known = true;
    r.value = fourier_truth(t.a_iso, xi);
  } else if (kind == "thetaA" && t.has_theta) {
    r.known = true;
    r.value = fourier_truth(t.theta, xi);
  } else if (kind == "B") {
    r.known = true;
    r.value = fourier_truth(t.B, xi)[slot];
  } else if (kind == "V" && t.has_V) {
    r.known = true;
    r.value = fourier_truth(t.V, xi)[slot];
  } else if (kind == "A_prime") {
    r.known = true;
    const Eigen::Matrix3cd P = tt_project(fourier_truth(t.A, xi), xi);
    r.value = P(slot / 3, slot % 3);
  }
  return r;
}

nlohmann::json samples_to_json(const FourierSamples& s) {
  nlohmann::json out;
  out["kind"] = s.kind;
  out["h"] = s.h_used;
  nlohmann::json grid = nlohmann::json::array();
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < s.xi_grid.size(); ++i) {
    grid.push_back({s.xi_grid[i][0], s.xi_grid[i][1], s.xi_grid[i][2]});
    nlohmann::json e = nlohmann::json::array();
    for (Eigen::Index c = 0; c < s.entries[i].size(); ++c)
      e.push_back({s.entries[i][c].real(), s.entries[i][c].imag()});
    entries.push_back(std::move(e));
  }
  out["xi"] = std::move(grid);
  out["entries"] = std::move(entries);
  out["diagnostics"] = s.diagnostics;
  return out;
}

std::string diagnostics_csv(const PipelineResult& res, const TruthSet& truth) {
  std::ostringstream csv;
  csv << "kind,xi,re,im,truth_re,truth_im,abs_err\n";
  for (const auto& [kind, s] : res.samples)
    for (std::size_t i = 0; i < s.xi_grid.size(); ++i)
      for (Eigen::Index c = 0; c < s.entries[i].size(); ++c) {
        const Complex v = s.entries[i][c];
        csv << kind;
        if (s.entries[i].size() > 1) csv << ":" << c;
        csv << "," << xi_text(s.xi_grid[i]) << "," << fmt(v.real()) << ","
            << fmt(v.imag());
        TruthRow tr = truth_entry(truth, kind, s.xi_grid[i], c);
        if (tr.known)
          csv << "," << fmt(tr.value.real()) << "," << fmt(tr.value.imag())
              << "," << fmt(std::abs(v - tr.value));
        else
          csv << ",,,";
        csv << "\n";
      }
  return csv.str();
}

std::uint64_t file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return content_hash(ss.str());
}

std::string hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void record(nlohmann::json& files, const std::string& dir,
            const std::string& name) {
  files[name] = hex(file_hash(fs::path(dir) / name));
}

void dump_and_record(nlohmann::json& files, const std::string& dir,
                     const std::string& name, const GridSpec& g,
                     const Eigen::VectorXcd& vals, int comps,
                     const std::string& kind) {
  dump_field((fs::path(dir) / name).string(), g, vals, comps, kind);
  record(files, dir, name);
  record(files, dir, name + ".json");
}

/// Relative errors of every reconstructed field against the truth set.
void field_errors(const PipelineResult& res, const TruthSet& truth,
                  StabilityRecord& rec) {
  auto scalar_err = [&](const char* key, const ScalarField& got,
                        const ScalarField& want) {
    ScalarField d(got.grid);
    d.v = got.v - want.v;
    const double ref = l2_norm(want);
    rec.err_l2[key] = l2_norm(d) / (ref > 0 ? ref : 1.0);
    const double refi = want.v.cwiseAbs().maxCoeff();
    rec.err_linf[key] =
        d.v.cwiseAbs().maxCoeff() / (refi > 0 ? refi : 1.0);
  };
  auto vector_err = [&](const char* key, const VectorField& got,
                        const VectorField& want) {
    VectorField d(got.grid);
    d.v = got.v - want.v;
    const double ref = l2_norm(want);
    rec.err_l2[key] = l2_norm(d) / (ref > 0 ? ref : 1.0);
    const double refi = want.v.cwiseAbs().maxCoeff();
    rec.err_linf[key] =
        d.v.cwiseAbs().maxCoeff() / (refi > 0 ? refi : 1.0);
  };
  if (res.q) scalar_err("q", *res.q, truth.q);
  if (res.a_iso && truth.has_a) scalar_err("a_iso", *res.a_iso, truth.a_iso);
  if (res.theta_A && truth.has_theta)
    scalar_err("theta_A", *res.theta_A, truth.theta);
  if (res.B) vector_err("B", *res.B, truth.B);
  if (res.V && truth.has_V) vector_err("V", *res.V, truth.V);
  if (res.A_prime) {
    SymTensorField d(res.A_prime->grid);
    d.v = res.A_prime->v - truth.A.v;
    const double ref = l2_norm(truth.A);
    rec.err_l2["A_prime"] = l2_norm(d) / (ref > 0 ? ref : 1.0);
    const double refi = truth.A.v.cwiseAbs().maxCoeff();
    rec.err_linf["A_prime"] =
        d.v.cwiseAbs().maxCoeff() / (refi > 0 ? refi : 1.0);
  }
}

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& doc) {
  ExperimentConfig c;
  c.raw = doc;
  try {
    if (doc.contains("recipe1")) c.recipe1 = doc.at("recipe1");
    c.recipe2 = doc.at("recipe2");
    c.m = doc.value("m", 2);
    if (doc.contains("grid")) {
      c.N = doc.at("grid").value("N", 21);
      c.L = doc.at("grid").value("L", 1.0);
    }
    if (doc.contains("h_list"))
      c.h_list = doc.at("h_list").get<std::vector<double>>();
    else if (doc.contains("h"))
      c.h_list = {doc.at("h").get<double>()};
    if (doc.contains("xi_lattice")) {
      c.xi_R = doc.at("xi_lattice").value("R", 6.0);
      c.xi_delta = doc.at("xi_lattice").value("delta", 0.0);
    }
    if (doc.contains("noise")) {
      c.noise_kind = doc.at("noise").value(
          "kind", "multiplicative-gaussian-on-neumann");
      if (doc.at("noise").contains("levels"))
        c.noise_levels = doc.at("noise").at("levels").get<std::vector<double>>();
      else if (doc.at("noise").contains("level"))
        c.noise_levels = {doc.at("noise").at("level").get<double>()};
    }
    c.seed = doc.value("seed", 1);
    c.output_dir = doc.value("output_dir", "");
    c.pipeline = doc.value("pipeline", std::vector<std::string>{});
    c.workers = doc.value("workers", 0);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }

  if (c.m < 2) throw ConfigError("m must be >= 2");
  if (c.N < 17 || c.N % 2 == 0)
    throw ConfigError("grid N must be odd and >= 17");
  if (c.L <= 0) throw ConfigError("grid L must be positive");
  if (c.h_list.empty()) throw ConfigError("h_list must not be empty");
  for (double h : c.h_list)
    if (h < 0.15 || h > 0.5)
      throw ConfigError("h outside the supported range [0.15, 0.5]");
  if (c.xi_R <= 0) throw ConfigError("xi_lattice.R must be positive");
  if (c.xi_delta < 0) throw ConfigError("xi_lattice.delta must be >= 0");
  if (c.noise_kind != "multiplicative-gaussian-on-neumann")
    throw ConfigError("unknown noise kind: " + c.noise_kind);
  for (double lv : c.noise_levels)
    if (lv < 0) throw ConfigError("noise level must be >= 0");
  if (c.pipeline.empty()) throw ConfigError("pipeline must name >= 1 stage");
  if (c.m == 2 &&
      (anisotropic_recipe(c.recipe1) || anisotropic_recipe(c.recipe2)))
    throw ConfigError("m = 2 admits only isotropic second-order recipes");
  for (const std::string& st : c.pipeline) {
    if (c.m == 2 && (st == "A_prime" || st == "V" || st == "theta_A"))
      throw ConfigError("stage " + st + " requires m > 2");
    if (c.m > 2 && st == "a_iso")
      throw ConfigError("stage a_iso requires m = 2");
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

void atomic_write(const std::string& dir, const std::string& name,
                  const std::string& content) {
  fs::create_directories(dir);
  const fs::path tmp = fs::path(dir) / (".tmp." + name);
  const fs::path dst = fs::path(dir) / name;
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, dst);
}

std::uint64_t content_hash(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

nlohmann::json run_scenario(const ExperimentConfig& config) {
  if (config.output_dir.empty()) throw ConfigError("output_dir is required");
  auto g = build_grid(config.N, config.L);
  Scenario s1 = build_scenario(g, config.recipe1, config.seed, config.m);
  Scenario s2 = build_scenario(g, config.recipe2, config.seed + 1, config.m);
  DtnPair pair(s1.coeffs, s2.coeffs);
  if (!config.noise_levels.empty()) {
    pair.noise_level = config.noise_levels.front();
    pair.noise_seed = config.seed;
  }
  const double delta =
      config.xi_delta > 0 ? config.xi_delta : M_PI / (2.0 * config.L);
  XiLattice lat = make_xi_lattice(config.xi_R, delta);
  TruthSet truth = make_truth(g, s1, s2);

  fs::create_directories(config.output_dir);
  nlohmann::json files = nlohmann::json::object();
  for (double h : config.h_list) {
    PipelineResult res =
        run_pipeline(pair, h, lat, config.pipeline, config.workers);
    const std::string tag = h_tag(h);
    for (const auto& [kind, s] : res.samples) {
      const std::string name = "samples_" + kind + "_" + tag + ".json";
      atomic_write(config.output_dir, name, samples_to_json(s).dump(2) + "\n");
      record(files, config.output_dir, name);
    }
    const std::string csv = "diagnostics_" + tag + ".csv";
    atomic_write(config.output_dir, csv, diagnostics_csv(res, truth));
    record(files, config.output_dir, csv);

    const GridSpec& gr = *g;
    if (res.q)
      dump_and_record(files, config.output_dir, "q_" + tag + ".field", gr,
                      res.q->v, 1, "q");
    if (res.a_iso)
      dump_and_record(files, config.output_dir, "a_iso_" + tag + ".field", gr,
                      res.a_iso->v, 1, "a_iso");
    if (res.theta_A)
      dump_and_record(files, config.output_dir, "theta_A_" + tag + ".field",
                      gr, res.theta_A->v, 1, "theta_A");
    if (res.B)
      dump_and_record(files, config.output_dir, "B_" + tag + ".field", gr,
                      res.B->v, 3, "B");
    if (res.V)
      dump_and_record(files, config.output_dir, "V_" + tag + ".field", gr,
                      res.V->v, 3, "V");
    if (res.A_prime)
      dump_and_record(files, config.output_dir, "A_prime_" + tag + ".field",
                      gr, res.A_prime->v, 6, "A_prime");
    if (res.A)
      dump_and_record(files, config.output_dir, "A_" + tag + ".field", gr,
                      res.A->v, 6, "A");
  }

  nlohmann::json manifest;
  manifest["version"] = kVersion;
  manifest["config"] = config.raw;
  manifest["config_hash"] = hex(content_hash(config.raw.dump()));
  manifest["files"] = files;
  atomic_write(config.output_dir, "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

SweepResult stability_sweep(const ExperimentConfig& config) {
  if (config.output_dir.empty()) throw ConfigError("output_dir is required");
  if (config.noise_levels.size() < 5)
    throw ConfigError("stability sweep needs >= 5 noise levels");
  double lo = 0.0, hi = 0.0;
  for (double lv : config.noise_levels)
    if (lv > 0) {
      lo = lo == 0.0 ? lv : std::min(lo, lv);
      hi = std::max(hi, lv);
    }
  if (lo == 0.0 || hi / lo < 100.0)
    throw ConfigError("noise levels must span >= 2 decades");

  auto g = build_grid(config.N, config.L);
  Scenario s1 = build_scenario(g, config.recipe1, config.seed, config.m);
  Scenario s2 = build_scenario(g, config.recipe2, config.seed + 1, config.m);
  TruthSet truth = make_truth(g, s1, s2);
  const double h = config.h_list.front();
  const double delta =
      config.xi_delta > 0 ? config.xi_delta : M_PI / (2.0 * config.L);
  XiLattice lat = make_xi_lattice(config.xi_R, delta);

  // One probe, one draw of the perturbation pattern; each level scales the
  // same pattern so the proxy column is a deterministic function of the level.
  DtnProbe probe = dtn_probe(s1.coeffs, s2.coeffs, 16);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> gauss;
  Eigen::MatrixXd Z(probe.response2.rows(), probe.response2.cols());
  for (Eigen::Index j = 0; j < Z.cols(); ++j)
    for (Eigen::Index i = 0; i < Z.rows(); ++i) Z(i, j) = gauss(rng);

  DtnPair pair(s1.coeffs, s2.coeffs);
  SweepResult out;
  std::vector<double> sorted_levels = config.noise_levels;
  std::sort(sorted_levels.begin(), sorted_levels.end());
  for (double level : sorted_levels) {
    DtnProbe pert = probe;
    pert.response2.array() *= (1.0 + level * Z.array());
    StabilityRecord rec;
    rec.h = h;
    rec.noise_level = level;
    rec.dtn_norm_proxy = probe_norm(pert);

    pair.noise_level = level;
    pair.noise_seed = config.seed;
    PipelineResult res =
        run_pipeline(pair, h, lat, config.pipeline, config.workers);
    field_errors(res, truth, rec);
    out.records.push_back(std::move(rec));
  }

  out.fit_key = out.records.front().err_l2.count("q")
                    ? "q"
                    : out.records.front().err_l2.begin()->first;
  out.fit = fit_stability(out.records, out.fit_key);

  std::vector<std::string> keys;
  for (const auto& [k, v] : out.records.front().err_l2) keys.push_back(k);
  std::ostringstream csv;
  csv << "noise_level,dtn_norm_proxy";
  for (const auto& k : keys) csv << ",err_l2_" << k;
  for (const auto& k : keys) csv << ",err_linf_" << k;
  csv << "\n";
  for (const auto& r : out.records) {
    csv << fmt(r.noise_level) << "," << fmt(r.dtn_norm_proxy);
    for (const auto& k : keys) csv << "," << fmt(r.err_l2.at(k));
    for (const auto& k : keys) csv << "," << fmt(r.err_linf.at(k));
    csv << "\n";
  }
  nlohmann::json files = nlohmann::json::object();
  atomic_write(config.output_dir, "sweep.csv", csv.str());
  record(files, config.output_dir, "sweep.csv");

  nlohmann::json fitdoc;
  fitdoc["key"] = out.fit_key;
  fitdoc["mu"] = out.fit.mu;
  fitdoc["c_log"] = out.fit.c_log;
  fitdoc["c_root"] = out.fit.c_root;
  fitdoc["residual"] = out.fit.residual;
  fitdoc["power_residual"] = out.fit.power_residual;
  fitdoc["power_exponent"] = out.fit.power_exponent;
  fitdoc["monotone"] = out.fit.monotone;
  fitdoc["degenerate"] = out.fit.degenerate;
  atomic_write(config.output_dir, "fit.json", fitdoc.dump(2) + "\n");
  record(files, config.output_dir, "fit.json");

  std::ostringstream gp;
  gp << "set datafile separator ','\n"
     << "set logscale x\n"
     << "set logscale y\n"
     << "set xlabel 'boundary operator norm proxy'\n"
     << "set ylabel 'relative L2 error (" << out.fit_key << ")'\n"
     << "set key left top\n"
     << "mu = " << fmt(out.fit.mu) << "\n"
     << "clog = " << fmt(out.fit.c_log) << "\n"
     << "croot = " << fmt(out.fit.c_root) << "\n"
     << "phi(t) = clog * abs(log(t))**(-mu) + croot * sqrt(t)\n"
     << "plot 'sweep.csv' using 2:3 skip 1 with points title 'sweep', \\\n"
     << "     phi(x) with lines title 'fitted log-type bound'\n";
  atomic_write(config.output_dir, "sweep.gp", gp.str());
  record(files, config.output_dir, "sweep.gp");

  nlohmann::json manifest;
  manifest["version"] = kVersion;
  manifest["config"] = config.raw;
  manifest["config_hash"] = hex(content_hash(config.raw.dump()));
  manifest["files"] = files;
  atomic_write(config.output_dir, "manifest.json", manifest.dump(2) + "\n");
  return out;
}

}  // namespace polyharm
