#pragma once

#include "tsvdlm/dense.hpp"
#include "tsvdlm/forward.hpp"
#include "tsvdlm/operators.hpp"
#include "tsvdlm/tsvd.hpp"

#include <Eigen/Sparse>

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tsvdlm::inversion {

using SparseMatrix = Eigen::SparseMatrix<double>;

// Regularization ---------------------------------------------------------------

struct Regularizer {
  SparseMatrix w;  ///< stacked difference, coupling and shift blocks
  Matrix l_inv;    ///< lower triangular, R = W^T W = L^{-T} L^{-1}
};

/// W = [L1 (first family); L1 (second family); [I, -I]; shift * I] for two
/// equal parameter families over n_cells cells. Each connection (i, j)
/// contributes a row with +1 at i and -1 at j.
SparseMatrix build_w(int n_cells, const std::vector<std::pair<int, int>>& connections,
                     double shift = 1e-3);

/// Factor L^{-1} with L^{-T} L^{-1} = R and L^{-1} lower triangular. Uses a
/// Cholesky factorization of R with its index order reversed, since the
/// ordinary factor C C^T = R puts the triangle on the wrong side.
Matrix inverse_whitening_factor(const Matrix& r);

Regularizer build_regularizer(int n_cells, const std::vector<std::pair<int, int>>& connections,
                              double shift = 1e-3);

// Problem and objective -------------------------------------------------------

struct InverseProblem {
  Vector d_obs;
  Vector gamma_d_diag;  ///< observation variances
  Vector m_pr;
  std::shared_ptr<const Whitener> whitener;
  double mu = 1.0;
  Vector lower;
  Vector upper;

  Eigen::Index n_obs() const { return d_obs.size(); }
  Eigen::Index n_params() const { return m_pr.size(); }
  Vector noise_scale() const { return gamma_d_diag.cwiseSqrt(); }
  /// Throws std::invalid_argument when sizes or invariants are violated.
  void validate() const;
  Vector clamp(const Vector& m) const;
  /// L^{-1} (m - m_pr)
  Vector whiten(const Vector& m) const;
};

struct Objective {
  double phi = 0.0;
  double phi_d = 0.0;
  double phi_m = 0.0;
  double phi_n = 0.0;  ///< phi_d / N_d
};

/// r is d(m) - d_obs.
Objective objective(const InverseProblem& problem, const Vector& m, const Vector& r);

/// TSVD-LM step in whitened coordinates: sum_i alpha_i v_i with
/// alpha_i = -(mu v_i^T m~ + lambda_i u_i^T Gamma^{-1/2} r) / (mu + gamma + lambda_i^2).
Vector lm_update(const tsvd::TruncatedSvd& svd, const InverseProblem& problem,
                 const Vector& m_tilde, double gamma, const Vector& r);

struct MismatchBounds {
  double lo = 0.0;
  double hi = 0.0;
  double lo_n = 0.0;
  double hi_n = 0.0;
};

/// N_d -/+ 5 sqrt(2 N_d), lower ends clamped at zero; the normalized pair is
/// the same divided by N_d.
MismatchBounds mismatch_bounds(int n_d);

// Forward evaluation -----------------------------------------------------------

struct Evaluation {
  Vector simulated;
  std::shared_ptr<const LinearOp> sensitivity;  ///< S at the evaluated point
};

/// Source of simulations for the driver. A failed simulation returns
/// nullopt; the driver treats it like a rejected candidate.
class ForwardEvaluator {
 public:
  virtual ~ForwardEvaluator() = default;
  virtual std::optional<Evaluation> evaluate(const Vector& m) = 0;
};

class ModelEvaluator final : public ForwardEvaluator {
 public:
  explicit ModelEvaluator(std::shared_ptr<const forward::TimeSteppingModel> model)
      : model_(std::move(model)) {}
  std::optional<Evaluation> evaluate(const Vector& m) override;
  /// Message of the most recent simulation failure, if any.
  const std::string& last_failure() const { return last_failure_; }

 private:
  std::shared_ptr<const forward::TimeSteppingModel> model_;
  std::string last_failure_;
};

// Driver -----------------------------------------------------------------------

struct DampingPolicy {
  double gamma0 = 1e6;
  double floor = 0.0;  ///< lower limit after successes; 0 leaves gamma unbounded below

  double after_success(double gamma) const;
  /// max(10 gamma, 100)
  double after_failure(double gamma) const;
};

struct DriverConfig {
  tsvd::Estimator method = tsvd::Estimator::lanczos;
  tsvd::SketchConfig sketch;  ///< sketch.p is ignored; the schedule sets the rank
  tsvd::TruncationSchedule schedule;
  int iter_max = 30;
  double eps_m = 1e-4;
  DampingPolicy damping;
  int max_consecutive_rejections = 30;
};

/// One row per candidate trial, plus a leading row for the starting point.
struct HistoryRecord {
  int iter = 0;      ///< accepted-iteration counter when the candidate was tried
  int trial = 0;     ///< 0 for the starting row
  Objective objective;  ///< of the candidate (of the current point for row 0)
  int p = 0;
  double gamma = 0.0;
  bool accepted = false;
  bool simulation_failed = false;
  double step_norm = 0.0;  ///< ||m_temp - m|| after clamping
  OpCounts counts;         ///< cumulative operator columns/calls
  int n_simulations = 0;   ///< cumulative
  double t_simulate = 0.0; ///< seconds spent in this row's simulation
  double t_sketch = 0.0;   ///< seconds spent in the TSVD computed after this row
  double t_update = 0.0;
};

/// Record of each TSVD estimate, in order.
struct TsvdRecord {
  int iter = 0;
  int p_requested = 0;
  int p = 0;
  int lanczos_iterations = 0;
  int subspace_iterations = 0;
  int sketch_width = 0;
  OpCounts counts;  ///< operator usage of this estimate alone
  Vector lambda;
};

enum class Termination { converged, iter_max, stalled, initial_failure };
std::string to_string(Termination t);

struct LmState {
  Vector m;
  Vector m_tilde;
  double gamma = 0.0;
  int iter = 1;
  int p = 0;
  Objective current;
  Vector r;
  tsvd::TruncatedSvd svd;
  std::vector<HistoryRecord> history;
  std::vector<TsvdRecord> tsvds;
};

struct RunResult {
  LmState state;
  Termination termination = Termination::iter_max;
  OpCounts counts;
  int n_simulations = 0;
  double wall_seconds = 0.0;
};

/// Seed handed to the estimator at LM iteration iter.
std::uint64_t iteration_seed(std::uint64_t base, int iter);

/// TSVD-Levenberg-Marquardt. Starts at m0 (m_pr when omitted), gamma0 from
/// the damping policy; the TSVD of S_D is refreshed only after accepted
/// steps and the rank schedule advances with the accepted-iteration count.
RunResult run_tsvd_lm(const InverseProblem& problem, ForwardEvaluator& evaluator,
                      const DriverConfig& config,
                      const std::optional<Vector>& m0 = std::nullopt);

}  // namespace tsvdlm::inversion
