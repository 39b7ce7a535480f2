#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tsvdlm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised when a dense factorization cannot proceed (non-finite input,
/// loss of definiteness, singular triangle, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotPositiveDefinite : public NumericalError {
 public:
  NotPositiveDefinite(std::size_t pivot, double value);
  std::size_t pivot() const { return pivot_; }

 private:
  std::size_t pivot_;
};

namespace dense {

bool all_finite(const Matrix& a);
void require_finite(const Matrix& a, const char* what);

struct ThinQr {
  Matrix q;  ///< rows x cols, orthonormal columns
  Matrix r;  ///< cols x cols, upper triangular
  /// True when some |r_ii| fell below 1e-12 * max_j |r_jj|. The matching
  /// columns of q still complete an orthonormal basis.
  bool rank_deficient = false;
};

/// Householder thin QR with r_ii >= 0. Requires rows >= cols.
ThinQr qr_thin(const Matrix& a);

/// Orthonormal basis for range(a) with a.cols() columns (the q of qr_thin).
Matrix orth(const Matrix& a);

struct Svd {
  Matrix u;       ///< rows x k
  Vector lambda;  ///< k = min(rows, cols), nonincreasing
  Matrix v;       ///< cols x k
};

/// Thin SVD, a = u diag(lambda) v^T. Columns of u are sign-normalized so
/// that their first entry with magnitude above 1e-300 is positive, with v
/// flipped to match.
Svd svd_full(const Matrix& a);

/// Lower Cholesky factor l with l l^T = a. Throws NotPositiveDefinite
/// naming the first non-positive pivot.
Matrix cholesky_lower(const Matrix& a);

enum class Triangle { lower, upper };
enum class Side { left, right };
enum class Op { none, transpose };

/// Solves op(t) x = b (side left) or x op(t) = b (side right) where t is
/// triangular in the given triangle. Entries outside the triangle are
/// ignored.
Matrix solve_triangular(const Matrix& t, const Matrix& b, Triangle tri,
                        Side side = Side::left, Op op = Op::none);

/// Frobenius inner product <a, b>.
double inner(const Matrix& a, const Matrix& b);

/// max |q^T q - I|.
double orthonormality_defect(const Matrix& q);

}  // namespace dense
}  // namespace tsvdlm
