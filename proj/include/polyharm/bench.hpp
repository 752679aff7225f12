#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "polyharm/reconstruct.hpp"

namespace polyharm {

/// Raised for malformed or inconsistent configuration (maps to CLI exit
/// code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Parsed experiment description.  recipe1 / recipe2 name the scenario pair
/// (operator 1 and operator 2); "zero" is the empty set.
struct ExperimentConfig {
  std::string recipe1 = "zero";
  std::string recipe2;
  int m = 2;
  int N = 21;
  double L = 1.0;
  std::vector<double> h_list;        // each within [0.15, 0.5]
  double xi_R = 6.0;
  double xi_delta = 0.0;             // 0 -> pi / (2 L)
  std::string noise_kind = "multiplicative-gaussian-on-neumann";
  std::vector<double> noise_levels;  // one entry for run_scenario
  std::uint64_t seed = 1;
  std::string output_dir;
  std::vector<std::string> pipeline;
  int workers = 0;

  nlohmann::json raw;
};

/// Validates ranges and the m = 2 isotropy restriction; throws ConfigError.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);

/// Writes content to dir/name atomically (temp file + rename) and records
/// the file in the manifest the callers assemble.
void atomic_write(const std::string& dir, const std::string& name,
                  const std::string& content);

/// FNV-1a over bytes; the hash used for manifest entries and noise seeding.
std::uint64_t content_hash(const std::string& bytes);

/// Runs the reconstruction pipeline for every h in h_list and writes, under
/// config.output_dir: per-h Fourier sample tables (JSON), reconstructed
/// field dumps, a diagnostics CSV with estimator-vs-truth rows, and
/// manifest.json listing every artifact with its content hash.  Returns the
/// manifest document.
nlohmann::json run_scenario(const ExperimentConfig& config);

/// One record per noise level (single h = h_list.front()): perturbs the
/// probe responses and the reconstruction inputs, recomputes the boundary
/// operator-norm proxy, reruns the pipeline, and measures field errors.
/// Writes sweep.csv, fit.json, and a gnuplot script; returns the records
/// plus the fitted stability model on the leading pipeline target.
struct SweepResult {
  std::vector<StabilityRecord> records;
  StabilityFit fit;
  std::string fit_key;
};
SweepResult stability_sweep(const ExperimentConfig& config);

}  // namespace polyharm
