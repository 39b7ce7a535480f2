#pragma once

#include "tsvdlm/dense.hpp"

#include <cstdint>

namespace tsvdlm {

/// Standard-normal block filled column by column. Column j of the result is
/// drawn from an engine keyed on (seed, stream, first_column + j), so a
/// column's values do not depend on how many columns are requested or on
/// which leading columns are replaced by other data.
Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                       std::uint64_t stream = 0, Eigen::Index first_column = 0);

/// Single standard-normal vector, keyed like one column of gaussian_matrix.
Vector gaussian_vector(Eigen::Index n, std::uint64_t seed, std::uint64_t stream = 0);

}  // namespace tsvdlm
