#pragma once

#include "tsvdlm/cli/config.hpp"

#include <iosfwd>

namespace tsvdlm::cli {

/// Dense brute-force checks on the configured (small) model at the prior:
/// adjoint/direct duality, finite-difference vs adjoint-column assembly,
/// Lanczos vs dense SVD, and the full-rank TSVD update vs the dense LM
/// solve. Prints one line per check; returns 0 when all pass.
int oracle_check(const RunConfig& config, std::ostream& log);

/// The small model oracle-check uses when no config is given.
RunConfig small_oracle_config();

}  // namespace tsvdlm::cli
