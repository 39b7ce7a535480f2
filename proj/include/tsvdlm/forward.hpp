#pragma once

#include "tsvdlm/dense.hpp"
#include "tsvdlm/operators.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace tsvdlm::forward {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Newton failure while simulating. level 0 is the steady state, k >= 1 the
/// k-th transient step.
class SimulationError : public std::runtime_error {
 public:
  SimulationError(int level, double residual_norm, const std::string& why);
  int level() const { return level_; }
  double residual_norm() const { return residual_norm_; }

 private:
  int level_;
  double residual_norm_;
};

/// Singular coefficient block met during sensitivity propagation.
class PropagationError : public std::runtime_error {
 public:
  PropagationError(int level, const std::string& why);
  int level() const { return level_; }

 private:
  int level_;
};

struct CellIndex {
  int ix = 0;  ///< column, 0 = left
  int iz = 0;  ///< row, 0 = top
};

/// Desk-scale nonlinear diffusion analog of a geothermal vertical slice.
///
/// One scalar state per cell on an nx x nz grid. Faces carry
/// T_f * kappa(u_face) * (u_j - u_i) with kappa(u) = 1 + beta * u and T_f the
/// harmonic mean of the two cells' conductivities 10^(m - m_ref); horizontal
/// faces read the first parameter family, vertical faces the second. The top
/// row connects to a Dirichlet boundary at u_top through a half-cell face,
/// the bottom row receives a prescribed inflow, the lateral sides are
/// closed. The production period adds constant sinks at the producer cells.
struct ModelConfig {
  int nx = 16;
  int nz = 16;
  int n_steps = 12;
  double dt = 4.0;
  double storage = 1.0;
  double beta = 0.1;
  double m_ref = -14.0;
  double u_top = 1.0;
  double background_inflow = 0.3;   ///< per bottom cell
  double hot_inflow = 4.0;          ///< per bottom cell in the hot zone
  int hot_columns = 2;              ///< width of the hot zone, left edge
  int n_producers = 3;
  double production_rate = 2.0;     ///< sink per producer cell
  int n_obs_wells = 5;
  int obs_depth_stride = 2;
  double newton_tol_steady = 1e-10;
  double newton_tol_step = 1e-10;
  int newton_max_iter = 50;
  double lower_bound = -16.0;
  double upper_bound = -13.0;
};

enum class ObsKind { steady, transient };

struct ObservationSite {
  ObsKind kind = ObsKind::steady;
  int cell = 0;
  int time_index = 0;  ///< 0 for steady, 1..n_steps for transient
};

struct SolveInfo {
  int newton_iterations = 0;
  double residual_norm = 0.0;
};

class TimeSteppingModel;

/// Converged states plus the factorized linearization at every time level.
/// Immutable once built, so direct and adjoint propagation may share it from
/// different threads.
class Trajectory {
 public:
  const Vector& steady_state() const { return u_st_; }
  /// step(k) for k = 1..n_steps.
  const Vector& step(int k) const { return u_.at(static_cast<std::size_t>(k - 1)); }
  int n_steps() const { return static_cast<int>(u_.size()); }
  const std::vector<SolveInfo>& solve_info() const { return info_; }
  const Vector& parameters() const { return m_; }

 private:
  friend class TimeSteppingModel;
  friend Matrix direct_product(const TimeSteppingModel&, const Trajectory&,
                               const Matrix&, std::vector<int>*);
  friend Matrix adjoint_product(const TimeSteppingModel&, const Trajectory&,
                                const Matrix&, std::vector<int>*);

  struct Level {
    SparseMatrix a;  ///< d f / d u at this level
    SparseMatrix g;  ///< d f / d m at this level
    std::unique_ptr<Eigen::SparseLU<SparseMatrix>> lu;
  };

  Vector m_;
  Vector u_st_;
  std::vector<Vector> u_;
  std::vector<SolveInfo> info_;
  Level steady_;
  std::vector<Level> steps_;
};

struct SimulationResult {
  std::shared_ptr<const Trajectory> trajectory;
  Vector simulated;  ///< d(m)
};

class TimeSteppingModel {
 public:
  explicit TimeSteppingModel(ModelConfig config);

  const ModelConfig& config() const { return cfg_; }
  int n_cells() const { return cfg_.nx * cfg_.nz; }
  int n_params() const { return 2 * n_cells(); }
  int n_obs() const { return static_cast<int>(sites_.size()); }
  int cell(int ix, int iz) const { return iz * cfg_.nx + ix; }
  CellIndex cell_index(int c) const { return {c % cfg_.nx, c / cfg_.nx}; }

  const std::vector<ObservationSite>& observation_sites() const { return sites_; }
  const std::vector<int>& producer_cells() const { return producers_; }
  /// Interior connections (i, j) with i < j, horizontal then vertical.
  const std::vector<std::pair<int, int>>& connections() const { return conns_; }

  /// Inflow per cell during the steady period (positive = into the cell).
  const Vector& steady_source() const { return q_st_; }
  /// Inflow per cell during production.
  const Vector& production_source() const { return q_pr_; }

  // Residual functions and Jacobian blocks.
  Vector residual_steady(const Vector& u, const Vector& m) const;
  Vector residual_step(const Vector& u, const Vector& u_prev, const Vector& m,
                       double dt) const;
  /// A_st = d f_st / d u.
  SparseMatrix jacobian_state_steady(const Vector& u, const Vector& m) const;
  /// A^k = d f^k / d u^k.
  SparseMatrix jacobian_state_step(const Vector& u, const Vector& m, double dt) const;
  /// d f / d m; identical for the steady and transient residuals.
  SparseMatrix jacobian_params(const Vector& u, const Vector& m) const;
  /// Diagonal of B^k = d f^k / d u^{k-1} (constant -storage/dt).
  double step_coupling(double dt) const { return -cfg_.storage / dt; }

  /// Newton-converged steady state followed by the production steps.
  SimulationResult simulate(const Vector& m) const;

  /// Simulated observations from converged states.
  Vector observe(const Vector& u_st, const std::vector<Vector>& steps) const;

  Vector lower_bounds() const;
  Vector upper_bounds() const;
  Vector clamp(const Vector& m) const;

  double conductivity(double m_value) const;

 private:
  struct Face {
    int i;
    int j;  ///< -1 for the top boundary
    int param_i;
    int param_j;
  };

  void assemble_flux(const Vector& u, const Vector& m, Vector* f,
                     std::vector<Eigen::Triplet<double>>* jac_u,
                     std::vector<Eigen::Triplet<double>>* jac_m) const;
  Vector newton(const Vector& u0, const Vector& m, int level, const Vector* u_prev,
                double tol, SolveInfo* info) const;

  ModelConfig cfg_;
  std::vector<Face> faces_;
  std::vector<std::pair<int, int>> conns_;
  std::vector<int> producers_;
  std::vector<ObservationSite> sites_;
  Vector q_st_;
  Vector q_pr_;
};

/// S H by forward-in-time propagation: one multi-right-hand-side solve per
/// level. When trace is given, the visited levels are appended (0 = steady).
Matrix direct_product(const TimeSteppingModel& model, const Trajectory& traj,
                      const Matrix& h, std::vector<int>* trace = nullptr);

/// S^T H by backward-in-time propagation with transposed solves.
Matrix adjoint_product(const TimeSteppingModel& model, const Trajectory& traj,
                       const Matrix& h, std::vector<int>* trace = nullptr);

/// S as a LinearOp bound to one converged trajectory.
class SensitivityOp final : public LinearOp {
 public:
  SensitivityOp(std::shared_ptr<const TimeSteppingModel> model,
                std::shared_ptr<const Trajectory> traj)
      : model_(std::move(model)), traj_(std::move(traj)) {}
  Eigen::Index rows() const override { return model_->n_obs(); }
  Eigen::Index cols() const override { return model_->n_params(); }

 protected:
  Matrix do_apply(const Matrix& h) const override {
    return direct_product(*model_, *traj_, h);
  }
  Matrix do_apply_transpose(const Matrix& h) const override {
    return adjoint_product(*model_, *traj_, h);
  }

 private:
  std::shared_ptr<const TimeSteppingModel> model_;
  std::shared_ptr<const Trajectory> traj_;
};

// Twin experiment data -------------------------------------------------------

struct ObservationSet {
  std::vector<ObservationSite> sites;
  Vector values;
  Vector sigma;
};

/// Smooth synthetic "true" parameter field inside the bounds box, fully
/// determined by the seed.
Vector make_truth_field(const TimeSteppingModel& model, std::uint64_t seed);

/// Simulates truth and adds N(0, sigma^2) noise drawn from noise_seed.
ObservationSet make_observations(const TimeSteppingModel& model, const Vector& truth,
                                 double sigma, std::uint64_t noise_seed);

/// CSV with header obs_id,kind,cell,time_index,value,sigma.
void write_observations_csv(std::ostream& os, const ObservationSet& obs);
ObservationSet read_observations_csv(std::istream& is);

/// Parameter grid CSV: one row per cell in row-major order with columns
/// cell,ix,iz,m_horizontal,m_vertical.
void write_parameter_grid_csv(std::ostream& os, const TimeSteppingModel& model,
                              const Vector& m);
Vector read_parameter_grid_csv(std::istream& is, int n_cells);

}  // namespace tsvdlm::forward
