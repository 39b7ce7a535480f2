#pragma once

#include "tsvdlm/forward.hpp"
#include "tsvdlm/inversion.hpp"
#include "tsvdlm/tsvd.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsvdlm::cli {

/// Invalid configuration; the message starts with the offending field path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TwinSettings {
  double noise_sigma = 0.5;
  std::uint64_t truth_seed = 1;
  std::uint64_t noise_seed = 2;
};

struct ProblemSettings {
  double mu = 5.0;
  double m_prior = -14.0;
  double regularization_shift = 1e-3;
};

struct DataSettings {
  /// Relative paths resolve against the output directory.
  std::string observations = "observations.csv";
};

struct OutputSettings {
  std::string dir = "out";
};

struct ReplicateSettings {
  int n_runs = 1;
  /// Explicit seeds; empty means method seed + k for replicate k.
  std::vector<std::uint64_t> seeds;
};

struct RunConfig {
  forward::ModelConfig model;
  TwinSettings twin;
  ProblemSettings problem;
  inversion::DriverConfig driver;  ///< method, sketch, schedule, damping, limits
  DataSettings data;
  OutputSettings output;
  ReplicateSettings replicates;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  std::vector<std::uint64_t> replicate_seeds() const;
};

/// Parses INI text (sections, key = value, whole-line ';' comments). Unknown
/// sections or keys are rejected.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical INI rendering; parse_config(render_config(c)) reproduces c
/// exactly. With comments, each key carries a one-line description.
std::string render_config(const RunConfig& config, bool with_comments = false);

}  // namespace tsvdlm::cli
