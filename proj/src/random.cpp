#include "tsvdlm/random.hpp"

#include <random>

namespace tsvdlm {

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                       std::uint64_t stream, Eigen::Index first_column) {
  Matrix out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    const auto col = static_cast<std::uint64_t>(first_column + j);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      static_cast<std::uint32_t>(col), static_cast<std::uint32_t>(col >> 32)};
    std::mt19937_64 engine(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = normal(engine);
  }
  return out;
}

Vector gaussian_vector(Eigen::Index n, std::uint64_t seed, std::uint64_t stream) {
  return gaussian_matrix(n, 1, seed, stream).col(0);
}

}  // namespace tsvdlm
