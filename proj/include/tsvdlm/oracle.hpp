#pragma once

#include "tsvdlm/dense.hpp"
#include "tsvdlm/forward.hpp"
#include "tsvdlm/inversion.hpp"
#include "tsvdlm/operators.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace tsvdlm::oracle {

enum class AssemblyMode { finite_difference, adjoint_columns };
std::string to_string(AssemblyMode mode);

/// Brute-force dense sensitivities for small instances.
struct DenseReference {
  AssemblyMode mode = AssemblyMode::adjoint_columns;
  double eps_scale = 0.0;  ///< central-difference step factor (finite_difference only)
  int eps_retries = 0;     ///< columns that needed a reduced step
  Matrix s;                ///< N_d x N_m
  Matrix s_d;              ///< Gamma^{-1/2} S L
  dense::Svd svd;          ///< of s_d
  double condition = 0.0;  ///< lambda_1 / lambda_min of s_d
};

/// Bitwise equality of every stored field.
bool identical(const DenseReference& a, const DenseReference& b);

/// S column by column. Finite differences use the central quotient with
/// eps_i = eps_scale * max(1, |m_i|); a failed perturbed simulation is
/// retried once at eps_i / 10. Adjoint mode forms row i as S^T e_i.
Matrix assemble_sensitivity(const forward::TimeSteppingModel& model, const Vector& m,
                            AssemblyMode mode, double eps_scale = 1e-6,
                            int* retries = nullptr);

DenseReference assemble_dense_sensitivity(const forward::TimeSteppingModel& model,
                                          const Vector& m, AssemblyMode mode,
                                          const Vector& noise_scale, const Whitener& whitener,
                                          double eps_scale = 1e-6);

/// Dense solve of [S_D^T S_D + (mu + gamma) I] dm~ = -S_D^T Gamma^{-1/2} r - mu m~.
Vector solve_full_lm(const DenseReference& ref, const inversion::InverseProblem& problem,
                     const Vector& m_tilde, double gamma, const Vector& r);

// Disk cache -------------------------------------------------------------------

/// Hex key over the model configuration, m, the assembly mode and eps.
std::string reference_key(const forward::ModelConfig& config, const Vector& m,
                          AssemblyMode mode, double eps_scale);

/// Raw little-endian binary; reading returns a bit-identical reference.
void write_reference(std::ostream& os, const DenseReference& ref);
DenseReference read_reference(std::istream& is);

class ReferenceCache {
 public:
  explicit ReferenceCache(std::filesystem::path dir);
  std::optional<DenseReference> load(const std::string& key) const;
  /// Atomic: written to a temporary file and renamed into place.
  void store(const std::string& key, const DenseReference& ref) const;
  std::filesystem::path path_for(const std::string& key) const;

 private:
  std::filesystem::path dir_;
};

}  // namespace tsvdlm::oracle
