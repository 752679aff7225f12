#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "polyharm/bench.hpp"
#include "polyharm/fields.hpp"

using namespace polyharm;
namespace fs = std::filesystem;

namespace {

nlohmann::json minimal_config(const std::string& out) {
  return nlohmann::json{{"recipe2", "q-only"},
                        {"m", 2},
                        {"grid", {{"N", 17}, {"L", 1.0}}},
                        {"h_list", {0.25}},
                        {"xi_lattice", {{"R", 2.0}}},
                        {"seed", 9},
                        {"pipeline", {"q"}},
                        {"output_dir", out}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config validation accepts and rejects") {
  ExperimentConfig c = parse_config(minimal_config("/tmp/x"));
  CHECK(c.recipe1 == "zero");
  CHECK(c.recipe2 == "q-only");
  CHECK(c.h_list.size() == 1);

  nlohmann::json bad = minimal_config("/tmp/x");
  bad["recipe2"] = "A-divfree";
  CHECK_THROWS_AS(parse_config(bad), ConfigError);  // m = 2, anisotropic A

  bad = minimal_config("/tmp/x");
  bad["h_list"] = {0.05};
  CHECK_THROWS_AS(parse_config(bad), ConfigError);

  bad = minimal_config("/tmp/x");
  bad["grid"]["N"] = 16;
  CHECK_THROWS_AS(parse_config(bad), ConfigError);

  bad = minimal_config("/tmp/x");
  bad["noise"] = {{"kind", "salt-and-pepper"}};
  CHECK_THROWS_AS(parse_config(bad), ConfigError);

  bad = minimal_config("/tmp/x");
  bad["pipeline"] = nlohmann::json::array();
  CHECK_THROWS_AS(parse_config(bad), ConfigError);

  bad = minimal_config("/tmp/x");
  bad["pipeline"] = {"A_prime"};
  CHECK_THROWS_AS(parse_config(bad), ConfigError);  // tensor stage at m = 2

  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("run_scenario: artifacts, manifest, byte-identical reruns") {
  const std::string out1 = "/tmp/polyharm_test_run1";
  const std::string out2 = "/tmp/polyharm_test_run2";
  fs::remove_all(out1);
  fs::remove_all(out2);
  ExperimentConfig c1 = parse_config(minimal_config(out1));
  ExperimentConfig c2 = parse_config(minimal_config(out2));

  nlohmann::json m1 = run_scenario(c1);
  nlohmann::json m2 = run_scenario(c2);

  CHECK(fs::exists(fs::path(out1) / "manifest.json"));
  CHECK(fs::exists(fs::path(out1) / "diagnostics_h0.2500.csv"));
  CHECK(fs::exists(fs::path(out1) / "samples_q_hat_h0.2500.json"));
  CHECK(fs::exists(fs::path(out1) / "q_h0.2500.field"));

  // Every manifest entry points at a real file.
  for (const auto& [name, hash] : m1.at("files").items())
    CHECK(fs::exists(fs::path(out1) / name));

  // Same seed, same bytes.
  CHECK(m1.at("files") == m2.at("files"));
  CHECK(slurp(fs::path(out1) / "diagnostics_h0.2500.csv") ==
        slurp(fs::path(out2) / "diagnostics_h0.2500.csv"));

  // Diagnostics carry truth columns for the q estimator.
  const std::string csv = slurp(fs::path(out1) / "diagnostics_h0.2500.csv");
  CHECK(csv.rfind("kind,xi,re,im,truth_re,truth_im,abs_err\n", 0) == 0);
  CHECK(csv.find("q_hat,") != std::string::npos);

  // The dumped field loads back on the same grid.
  FieldDump d = load_field((fs::path(out1) / "q_h0.2500.field").string());
  CHECK(d.N == 17);
  CHECK(d.components == 1);
}

TEST_CASE("run_scenario: config errors reported before any work") {
  ExperimentConfig c = parse_config(minimal_config(""));
  CHECK_THROWS_AS(run_scenario(c), ConfigError);
}

TEST_CASE("stability sweep: proxy growth, zero-noise baseline, artifacts") {
  const std::string out = "/tmp/polyharm_test_sweep";
  fs::remove_all(out);
  nlohmann::json doc = minimal_config(out);
  doc["xi_lattice"] = {{"R", 1.6}};
  doc["noise"] = {{"kind", "multiplicative-gaussian-on-neumann"},
                  {"levels", {0.0, 1e-3, 1e-2, 1e-1, 0.5, 2.0}}};
  ExperimentConfig c = parse_config(doc);
  SweepResult res = stability_sweep(c);

  REQUIRE(res.records.size() == 6);
  CHECK(res.fit_key == "q");
  // Proxy strictly increases with the injected level.
  for (std::size_t i = 1; i < res.records.size(); ++i)
    CHECK(res.records[i].dtn_norm_proxy > res.records[i - 1].dtn_norm_proxy);

  // The zero-noise row reproduces the clean reconstruction exactly.
  auto g = build_grid(17, 1.0);
  Scenario s1 = make_coefficients(g, "zero", c.seed, 2);
  Scenario s2 = make_coefficients(g, "q-only", c.seed + 1, 2);
  DtnPair pair(s1.coeffs, s2.coeffs);
  XiLattice lat = make_xi_lattice(1.6, M_PI / 2);
  PipelineResult clean = run_pipeline(pair, 0.25, lat, {"q"}, 0);
  ScalarField diff(g);
  diff.v = clean.q->v - s2.coeffs.q.v;
  const double want = l2_norm(diff) / l2_norm(s2.coeffs.q);
  CHECK(res.records.front().noise_level == 0.0);
  CHECK(res.records.front().err_l2.at("q") == doctest::Approx(want).epsilon(1e-12));

  CHECK(fs::exists(fs::path(out) / "sweep.csv"));
  CHECK(fs::exists(fs::path(out) / "fit.json"));
  CHECK(fs::exists(fs::path(out) / "sweep.gp"));
  CHECK(fs::exists(fs::path(out) / "manifest.json"));

  // Sweep preconditions.
  nlohmann::json narrow = doc;
  narrow["noise"]["levels"] = {1e-2, 2e-2, 4e-2, 8e-2, 1e-1};
  CHECK_THROWS_AS(stability_sweep(parse_config(narrow)), ConfigError);
}
