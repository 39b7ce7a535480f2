#include "tsvdlm/dense.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tsvdlm {

namespace {
std::string pivot_message(std::size_t pivot, double value) {
  std::ostringstream os;
  os << "matrix is not positive definite: pivot " << pivot << " is " << value;
  return os.str();
}
}  // namespace

NotPositiveDefinite::NotPositiveDefinite(std::size_t pivot, double value)
    : NumericalError(pivot_message(pivot, value)), pivot_(pivot) {}

namespace dense {

bool all_finite(const Matrix& a) { return a.allFinite(); }

void require_finite(const Matrix& a, const char* what) {
  if (!a.allFinite()) {
    throw NumericalError(std::string(what) + ": input contains NaN or Inf");
  }
}

ThinQr qr_thin(const Matrix& a) {
  require_finite(a, "qr_thin");
  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  if (m < n) {
    throw std::invalid_argument("qr_thin: rows must be >= cols");
  }
  ThinQr out;
  if (n == 0) {
    out.q = Matrix(m, 0);
    out.r = Matrix(0, 0);
    return out;
  }
  Eigen::HouseholderQR<Matrix> qr(a);
  out.q = qr.householderQ() * Matrix::Identity(m, n);
  out.r = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
  // Nonnegative diagonal in r.
  for (Eigen::Index i = 0; i < n; ++i) {
    if (out.r(i, i) < 0.0) {
      out.r.row(i) *= -1.0;
      out.q.col(i) *= -1.0;
    }
  }

  // Householder reflectors keep q orthonormal even when a loses rank; the
  // flag only reports it.
  const double rmax = out.r.diagonal().cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(out.r(i, i)) <= 1e-12 * rmax || rmax == 0.0) {
      out.rank_deficient = true;
      break;
    }
  }
  return out;
}

Matrix orth(const Matrix& a) { return qr_thin(a).q; }

Svd svd_full(const Matrix& a) {
  require_finite(a, "svd_full");
  Svd out;
  const Eigen::Index k = std::min(a.rows(), a.cols());
  if (k == 0) {
    out.u = Matrix(a.rows(), 0);
    out.v = Matrix(a.cols(), 0);
    out.lambda = Vector(0);
    return out;
  }
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  out.u = svd.matrixU();
  out.v = svd.matrixV();
  out.lambda = svd.singularValues();
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index i = 0; i < out.u.rows(); ++i) {
      const double x = out.u(i, j);
      if (std::abs(x) > 1e-300) {
        if (x < 0.0) {
          out.u.col(j) *= -1.0;
          out.v.col(j) *= -1.0;
        }
        break;
      }
    }
  }
  return out;
}

Matrix cholesky_lower(const Matrix& a) {
  require_finite(a, "cholesky_lower");
  const Eigen::Index n = a.rows();
  if (a.cols() != n) {
    throw std::invalid_argument("cholesky_lower: matrix must be square");
  }
  const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-300);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j + 1; i < n; ++i) {
      if (std::abs(a(i, j) - a(j, i)) > 1e-12 * scale) {
        throw NumericalError("cholesky_lower: matrix is not symmetric");
      }
    }
  }

  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) {
      throw NotPositiveDefinite(static_cast<std::size_t>(j), d);
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

Matrix solve_triangular(const Matrix& t, const Matrix& b, Triangle tri,
                        Side side, Op op) {
  require_finite(t, "solve_triangular");
  require_finite(b, "solve_triangular");
  const Eigen::Index n = t.rows();
  if (t.cols() != n) {
    throw std::invalid_argument("solve_triangular: matrix must be square");
  }
  const Eigen::Index need = side == Side::left ? b.rows() : b.cols();
  if (need != n) {
    throw std::invalid_argument("solve_triangular: dimension mismatch");
  }
  const double tmax = n == 0 ? 0.0 : t.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(t(i, i)) < 1e-14 * tmax || t(i, i) == 0.0) {
      std::ostringstream os;
      os << "solve_triangular: singular triangle at diagonal " << i;
      throw NumericalError(os.str());
    }
  }

  // x op(t) = b  <=>  op(t)^T x^T = b^T
  const bool transpose = (op == Op::transpose) != (side == Side::right);
  const Matrix rhs = side == Side::left ? b : Matrix(b.transpose());
  Matrix x;
  if (tri == Triangle::lower) {
    x = transpose ? Matrix(t.triangularView<Eigen::Lower>().transpose().solve(rhs))
                  : Matrix(t.triangularView<Eigen::Lower>().solve(rhs));
  } else {
    x = transpose ? Matrix(t.triangularView<Eigen::Upper>().transpose().solve(rhs))
                  : Matrix(t.triangularView<Eigen::Upper>().solve(rhs));
  }
  return side == Side::left ? x : Matrix(x.transpose());
}

double inner(const Matrix& a, const Matrix& b) {
  return (a.array() * b.array()).sum();
}

double orthonormality_defect(const Matrix& q) {
  if (q.cols() == 0) return 0.0;
  return (q.transpose() * q - Matrix::Identity(q.cols(), q.cols()))
      .cwiseAbs()
      .maxCoeff();
}

}  // namespace dense
}  // namespace tsvdlm
