#pragma once

#include "tsvdlm/dense.hpp"

#include <atomic>
#include <cstdint>
#include <memory>

namespace tsvdlm {

/// Matrix-free linear map with block application. Implementations override
/// the do_* hooks; the public entry points validate shapes.
class LinearOp {
 public:
  virtual ~LinearOp() = default;

  virtual Eigen::Index rows() const = 0;
  virtual Eigen::Index cols() const = 0;

  /// A * h for h with cols() rows and any number of columns.
  Matrix apply(const Matrix& h) const;
  /// A^T * h for h with rows() rows.
  Matrix apply_transpose(const Matrix& h) const;

 protected:
  virtual Matrix do_apply(const Matrix& h) const = 0;
  virtual Matrix do_apply_transpose(const Matrix& h) const = 0;
};

class DenseOp final : public LinearOp {
 public:
  explicit DenseOp(Matrix a) : a_(std::move(a)) {}
  Eigen::Index rows() const override { return a_.rows(); }
  Eigen::Index cols() const override { return a_.cols(); }
  const Matrix& matrix() const { return a_; }

 protected:
  Matrix do_apply(const Matrix& h) const override { return a_ * h; }
  Matrix do_apply_transpose(const Matrix& h) const override {
    return a_.transpose() * h;
  }

 private:
  Matrix a_;
};

/// View of A^T. Does not own the wrapped operator.
class TransposedOp final : public LinearOp {
 public:
  explicit TransposedOp(const LinearOp& inner) : inner_(inner) {}
  Eigen::Index rows() const override { return inner_.cols(); }
  Eigen::Index cols() const override { return inner_.rows(); }

 protected:
  Matrix do_apply(const Matrix& h) const override {
    return inner_.apply_transpose(h);
  }
  Matrix do_apply_transpose(const Matrix& h) const override {
    return inner_.apply(h);
  }

 private:
  const LinearOp& inner_;
};

struct OpCounts {
  std::int64_t forward_calls = 0;
  std::int64_t forward_cols = 0;
  std::int64_t adjoint_calls = 0;
  std::int64_t adjoint_cols = 0;
};

/// Pass-through wrapper recording how many batched applications (and how
/// many columns) reach the wrapped operator. Safe for concurrent use.
class CountingOp final : public LinearOp {
 public:
  explicit CountingOp(const LinearOp& inner) : inner_(inner) {}
  Eigen::Index rows() const override { return inner_.rows(); }
  Eigen::Index cols() const override { return inner_.cols(); }

  OpCounts counts() const;
  void reset();

 protected:
  Matrix do_apply(const Matrix& h) const override;
  Matrix do_apply_transpose(const Matrix& h) const override;

 private:
  const LinearOp& inner_;
  mutable std::atomic<std::int64_t> forward_calls_{0};
  mutable std::atomic<std::int64_t> forward_cols_{0};
  mutable std::atomic<std::int64_t> adjoint_calls_{0};
  mutable std::atomic<std::int64_t> adjoint_cols_{0};
};

/// Parameter whitening map L, stored through its lower-triangular inverse
/// factor L^{-1} with R = L^{-T} L^{-1}. Applying L is a forward
/// substitution, applying L^T a transposed one.
class Whitener {
 public:
  explicit Whitener(Matrix l_inv);

  Eigen::Index size() const { return l_inv_.rows(); }
  const Matrix& inverse_factor() const { return l_inv_; }

  Matrix apply(const Matrix& h) const;            ///< L h
  Matrix apply_transpose(const Matrix& h) const;  ///< L^T h
  Matrix apply_inverse(const Matrix& h) const;    ///< L^{-1} h

 private:
  Matrix l_inv_;
};

/// S_D = Gamma_d^{-1/2} S L.
class DimensionlessSensitivityOp final : public LinearOp {
 public:
  /// noise_scale holds the diagonal of Gamma_d^{1/2} (observation standard
  /// deviations); all entries must be strictly positive.
  DimensionlessSensitivityOp(std::shared_ptr<const LinearOp> sensitivity,
                             Vector noise_scale,
                             std::shared_ptr<const Whitener> whitener);

  Eigen::Index rows() const override { return sensitivity_->rows(); }
  Eigen::Index cols() const override { return sensitivity_->cols(); }

  const LinearOp& sensitivity() const { return *sensitivity_; }
  const Vector& noise_scale() const { return noise_scale_; }
  const Whitener& whitener() const { return *whitener_; }

 protected:
  Matrix do_apply(const Matrix& h) const override;
  Matrix do_apply_transpose(const Matrix& h) const override;

 private:
  std::shared_ptr<const LinearOp> sensitivity_;
  Vector noise_scale_;
  std::shared_ptr<const Whitener> whitener_;
};

/// Materializes op column by column (A applied to the identity block).
Matrix to_dense(const LinearOp& op);

}  // namespace tsvdlm
