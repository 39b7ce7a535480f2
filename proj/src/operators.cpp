#include "tsvdlm/operators.hpp"

#include <sstream>
#include <stdexcept>

namespace tsvdlm {

namespace {
void check_rows(const Matrix& h, Eigen::Index expected, const char* what) {
  if (h.rows() != expected) {
    std::ostringstream os;
    os << what << ": block has " << h.rows() << " rows, expected " << expected;
    throw std::invalid_argument(os.str());
  }
}
}  // namespace

Matrix LinearOp::apply(const Matrix& h) const {
  check_rows(h, cols(), "LinearOp::apply");
  if (h.cols() == 0) return Matrix(rows(), 0);
  return do_apply(h);
}

Matrix LinearOp::apply_transpose(const Matrix& h) const {
  check_rows(h, rows(), "LinearOp::apply_transpose");
  if (h.cols() == 0) return Matrix(cols(), 0);
  return do_apply_transpose(h);
}

OpCounts CountingOp::counts() const {
  return {forward_calls_.load(), forward_cols_.load(), adjoint_calls_.load(),
          adjoint_cols_.load()};
}

void CountingOp::reset() {
  forward_calls_ = 0;
  forward_cols_ = 0;
  adjoint_calls_ = 0;
  adjoint_cols_ = 0;
}

Matrix CountingOp::do_apply(const Matrix& h) const {
  forward_calls_.fetch_add(1);
  forward_cols_.fetch_add(h.cols());
  return inner_.apply(h);
}

Matrix CountingOp::do_apply_transpose(const Matrix& h) const {
  adjoint_calls_.fetch_add(1);
  adjoint_cols_.fetch_add(h.cols());
  return inner_.apply_transpose(h);
}

Whitener::Whitener(Matrix l_inv) : l_inv_(std::move(l_inv)) {
  if (l_inv_.rows() != l_inv_.cols()) {
    throw std::invalid_argument("Whitener: inverse factor must be square");
  }
  // Only the lower triangle is meaningful.
  l_inv_ = Matrix(l_inv_.triangularView<Eigen::Lower>());
}

Matrix Whitener::apply(const Matrix& h) const {
  return dense::solve_triangular(l_inv_, h, dense::Triangle::lower);
}

Matrix Whitener::apply_transpose(const Matrix& h) const {
  return dense::solve_triangular(l_inv_, h, dense::Triangle::lower,
                                 dense::Side::left, dense::Op::transpose);
}

Matrix Whitener::apply_inverse(const Matrix& h) const {
  return l_inv_.triangularView<Eigen::Lower>() * h;
}

DimensionlessSensitivityOp::DimensionlessSensitivityOp(
    std::shared_ptr<const LinearOp> sensitivity, Vector noise_scale,
    std::shared_ptr<const Whitener> whitener)
    : sensitivity_(std::move(sensitivity)),
      noise_scale_(std::move(noise_scale)),
      whitener_(std::move(whitener)) {
  if (!sensitivity_ || !whitener_) {
    throw std::invalid_argument("DimensionlessSensitivityOp: null component");
  }
  if (noise_scale_.size() != sensitivity_->rows()) {
    throw std::invalid_argument(
        "DimensionlessSensitivityOp: noise scale length != observation count");
  }
  if (whitener_->size() != sensitivity_->cols()) {
    throw std::invalid_argument(
        "DimensionlessSensitivityOp: whitener size != parameter count");
  }
  if (!(noise_scale_.array() > 0.0).all()) {
    throw std::invalid_argument(
        "DimensionlessSensitivityOp: noise scale entries must be positive");
  }
}

Matrix DimensionlessSensitivityOp::do_apply(const Matrix& h) const {
  Matrix out = sensitivity_->apply(whitener_->apply(h));
  out.array().colwise() /= noise_scale_.array();
  return out;
}

Matrix DimensionlessSensitivityOp::do_apply_transpose(const Matrix& h) const {
  Matrix scaled = h;
  scaled.array().colwise() /= noise_scale_.array();
  return whitener_->apply_transpose(sensitivity_->apply_transpose(scaled));
}

Matrix to_dense(const LinearOp& op) {
  return op.apply(Matrix::Identity(op.cols(), op.cols()));
}

}  // namespace tsvdlm
