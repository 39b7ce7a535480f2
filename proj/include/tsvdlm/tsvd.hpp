#pragma once

#include "tsvdlm/dense.hpp"
#include "tsvdlm/operators.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tsvdlm::tsvd {

/// Rank-p factor triple A ~ U diag(lambda) V^T.
struct TruncatedSvd {
  Matrix u;
  Vector lambda;
  Matrix v;

  Eigen::Index rank() const { return lambda.size(); }
  Matrix reconstruct() const { return u * lambda.asDiagonal() * v.transpose(); }
  /// Factors of A^T (U and V swapped).
  TruncatedSvd transposed() const { return {v, lambda, u}; }
  /// First k triplets.
  TruncatedSvd truncated(Eigen::Index k) const;
  /// Throws NumericalError when lambda is unsorted/negative or a factor
  /// drifts from orthonormality by more than tol.
  void validate(double tol = 1e-8) const;
};

/// Orders singular triplets by nonincreasing value.
TruncatedSvd sorted(TruncatedSvd s);

struct SketchConfig {
  int p = 1;
  int l = 10;   ///< 2-view oversampling
  int l1 = 10;  ///< 1-view range-sketch oversampling
  int l2 = 20;  ///< 1-view co-range oversampling
  double eps_sv = 1e-5;
  std::uint64_t seed = 0;
  bool orthogonalize_samples = true;  ///< optional 1-view orthogonalization
  bool allow_equal_oversampling = false;
  int max_subspace_iterations = 100;
  int threads = 1;  ///< > 1 runs the two 1-view sketches concurrently
};

/// Throws std::invalid_argument for invalid settings, including l1 == l2
/// unless allow_equal_oversampling is set. Returns advisory warnings.
std::vector<std::string> validate(const SketchConfig& cfg);

enum class ScheduleKind { linear, sv_cut };

struct TruncationSchedule {
  ScheduleKind kind = ScheduleKind::linear;
  int p_init = 1;
  int p_step = 2;
  double sv_cut_init = 0.5;
  double sv_cut_factor = 0.5;
  int p_max = 50;

  /// sv-cut threshold used at LM iteration iter (1-based).
  double threshold(int iter) const;
};

/// Rank for LM iteration iter. The sv-cut kind needs the spectrum and
/// returns the smallest p with lambda_p / lambda_1 <= threshold(iter),
/// capped at p_max (p_max or the spectrum length when no entry qualifies).
int schedule_rank(const TruncationSchedule& schedule, int iter,
                  const std::optional<Vector>& spectrum = std::nullopt);

// Estimators -----------------------------------------------------------------

struct LanczosResult {
  TruncatedSvd svd;
  int iterations = 0;      ///< loop iterations j: j+1 forward, j adjoint applications
                           ///< (one more adjoint when a wide operator is fully bidiagonalized)
  int rank = 0;            ///< p actually retained (after any sv-cut reduction)
  bool converged = false;
  bool exhausted = false;  ///< breakdown or full bidiagonalization
};

/// Golub-Kahan-Lanczos bidiagonalization with full reorthogonalization of
/// both bases. Halts once j >= p and successive estimates of the leading p
/// singular values agree to eps_sv (relative). With sv_cut, p shrinks at
/// every iteration to the smallest rank whose ratio to lambda_1 is <= sv_cut.
LanczosResult tsvd_lanczos(const LinearOp& a, int p, double eps_sv,
                           std::optional<double> sv_cut = std::nullopt,
                           std::uint64_t seed = 0);

/// Randomized 2-view TSVD. Needs a.rows() >= a.cols() and
/// p + l <= a.cols(). Leading columns of omega_prefix replace the first
/// Gaussian sample columns.
TruncatedSvd tsvd_2view(const LinearOp& a, int p, int l, std::uint64_t seed,
                        const std::optional<Matrix>& omega_prefix = std::nullopt);

struct OneViewPrefixes {
  std::optional<Matrix> omega;  ///< n_cols x k, leading columns of Omega
  std::optional<Matrix> psi_t;  ///< n_rows x k, leading columns of Psi^T
};

/// Randomized 1-view TSVD. Needs a.rows() >= a.cols(), p + l1 <= a.cols(),
/// p + l2 <= a.rows() and l2 >= l1. The two sketches Y = A Omega and
/// Z^T = A^T Psi^T are independent and run concurrently when threads > 1.
TruncatedSvd tsvd_1view(const LinearOp& a, int p, int l1, int l2, std::uint64_t seed,
                        const OneViewPrefixes& prefixes = {},
                        bool orthogonalize_samples = true, int threads = 1);

struct SubspaceResult {
  TruncatedSvd svd;
  int iterations = 0;
  bool converged = false;
};

/// Block subspace iteration started from orthonormal v0. Singular values
/// are the square roots of the core SVD values; the left factor is taken
/// from the left singular vectors of A V.
SubspaceResult subspace_iteration(const LinearOp& a, int p, double eps_sv, const Matrix& v0,
                                  int max_iterations = 100);

/// 2-view variant that QR-factors B^T and takes the SVD of its triangle.
TruncatedSvd tsvd_2view_voronin(const LinearOp& a, int p, int l, std::uint64_t seed);

enum class SampleSpace { right, left };

/// Sampling block of target_width columns: prev's V (right) or U (left)
/// followed by fresh Gaussian columns keyed from column index prev.rank().
Matrix build_reuse_samples(const TruncatedSvd& prev, Eigen::Index target_width,
                           SampleSpace space, std::uint64_t seed, std::uint64_t stream = 1);

// Dispatch -------------------------------------------------------------------

enum class Estimator {
  lanczos,
  two_view,
  two_view_reuse,
  one_view,
  one_view_reuse,
  subspace_iter,
  two_view_voronin,
};

std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& name);
bool uses_reuse(Estimator e);

/// Orients an operator so that rows >= cols, as the randomized sketches
/// require, by viewing A^T when A is wide.
class SketchOrientation {
 public:
  explicit SketchOrientation(const LinearOp& a);
  const LinearOp& op() const { return transposed_ ? static_cast<const LinearOp&>(view_) : a_; }
  bool transposed() const { return transposed_; }
  /// Converts a factorization of op() back to one of the original operator.
  TruncatedSvd restore(TruncatedSvd s) const { return transposed_ ? s.transposed() : s; }

 private:
  const LinearOp& a_;
  TransposedOp view_;
  bool transposed_;
};

struct EstimateRequest {
  Estimator method = Estimator::lanczos;
  SketchConfig sketch;  ///< sketch.p is the requested rank
  std::optional<double> sv_cut;  ///< Lanczos only
  const TruncatedSvd* previous = nullptr;  ///< re-use variants
};

struct EstimateResult {
  TruncatedSvd svd;          ///< factors of the operator as passed in
  int lanczos_iterations = 0;
  int subspace_iterations = 0;
  bool converged = true;
  bool exhausted = false;
  int rank_requested = 0;
  int sketch_width = 0;      ///< columns of the range sample
};

/// Runs one estimator against a, orienting randomized methods so the sketch
/// input has rows >= cols. Ranks and oversampling are clamped to what the
/// operator's dimensions admit.
EstimateResult estimate(const LinearOp& a, const EstimateRequest& req);

}  // namespace tsvdlm::tsvd
