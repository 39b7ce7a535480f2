#pragma once

#include "tsvdlm/cli/config.hpp"
#include "tsvdlm/inversion.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace tsvdlm::cli {

namespace fs = std::filesystem;

/// Writes content to path via a temporary sibling and a rename.
void write_file_atomic(const fs::path& path, const std::string& content);
std::string read_file(const fs::path& path);

struct TwinSetup {
  std::shared_ptr<const forward::TimeSteppingModel> model;
  inversion::InverseProblem problem;
  forward::ObservationSet observations;
};

/// Model, regularizer and problem for a config plus an observation set.
TwinSetup make_setup(const RunConfig& config, forward::ObservationSet observations);

/// Hash of everything that defines the inverse problem (model, problem
/// settings, observation values); manifests from different problems cannot
/// be compared.
std::string problem_hash(const RunConfig& config, const forward::ObservationSet& obs);

/// Convergence CSV: iter,trial,Phi,Phi_d,Phi_N,Phi_m,p,gamma,accepted,
/// simulation_failed,n_direct_cols,n_adjoint_cols,n_simulations.
std::string convergence_csv(const inversion::RunResult& run);
/// Per-TSVD CSV including excess Lanczos iterations (iterations - p).
std::string tsvd_csv(const inversion::RunResult& run);

nlohmann::json make_manifest(const RunConfig& config, const std::string& hash,
                             std::uint64_t seed, int replicate,
                             const inversion::RunResult& run, double mu);

// Subcommands; each returns the process exit status and writes progress to log.

struct GenerateTwinResult {
  fs::path observations;
  fs::path truth;
  double phi_d_truth = 0.0;
};
GenerateTwinResult generate_twin(const RunConfig& config, std::ostream& log);

struct InvertOptions {
  int threads = 1;
};

struct ReplicateOutcome {
  std::uint64_t seed = 0;
  fs::path dir;
  inversion::RunResult run;
};

/// Runs every replicate; outputs per replicate go to
/// <out>/manifest.json, convergence.csv, tsvd.csv, final_grid.csv (single run)
/// or <out>/replicate-<k>/... plus <out>/summary.csv (several runs).
std::vector<ReplicateOutcome> invert(const RunConfig& config, const InvertOptions& options,
                                     std::ostream& log);

/// Exit status for a finished run: 0 converged or iteration budget used,
/// 4 stalled on rejections, 5 failed at the starting point.
int exit_status(inversion::Termination t);

/// Comparison table over manifests. Throws when problem hashes differ.
struct CompareReport {
  std::string csv;
  std::string table;
};
CompareReport compare(const std::vector<fs::path>& manifests);

}  // namespace tsvdlm::cli
