#include "tsvdlm/inversion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace tsvdlm::inversion {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

OpCounts operator+(OpCounts a, const OpCounts& b) {
  a.forward_calls += b.forward_calls;
  a.forward_cols += b.forward_cols;
  a.adjoint_calls += b.adjoint_calls;
  a.adjoint_cols += b.adjoint_cols;
  return a;
}

}  // namespace

// Regularization ---------------------------------------------------------------

SparseMatrix build_w(int n_cells, const std::vector<std::pair<int, int>>& connections,
                     double shift) {
  if (n_cells < 1) throw std::invalid_argument("build_w: n_cells must be >= 1");
  if (!(shift > 0.0)) throw std::invalid_argument("build_w: shift must be positive");
  const int n_conn = static_cast<int>(connections.size());
  const int n_params = 2 * n_cells;
  const int n_rows = 2 * n_conn + n_cells + n_params;
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(4 * n_conn + 2 * n_cells + n_params));
  int row = 0;
  for (int family = 0; family < 2; ++family) {
    const int off = family * n_cells;
    for (const auto& [i, j] : connections) {
      if (i < 0 || j < 0 || i >= n_cells || j >= n_cells || i == j) {
        throw std::invalid_argument("build_w: connection index out of range");
      }
      t.emplace_back(row, off + i, 1.0);
      t.emplace_back(row, off + j, -1.0);
      ++row;
    }
  }
  for (int i = 0; i < n_cells; ++i, ++row) {
    t.emplace_back(row, i, 1.0);
    t.emplace_back(row, i + n_cells, -1.0);
  }
  for (int i = 0; i < n_params; ++i, ++row) t.emplace_back(row, i, shift);
  SparseMatrix w(n_rows, n_params);
  w.setFromTriplets(t.begin(), t.end());
  return w;
}

Matrix inverse_whitening_factor(const Matrix& r) {
  // J R J = C C^T with J the reversal permutation; then L^{-1} = J C^T J is
  // lower triangular and (L^{-1})^T L^{-1} = J C C^T J = R.
  const Matrix rr = r.reverse();
  const Matrix c = dense::cholesky_lower(rr);
  return Matrix(c.transpose()).reverse();
}

Regularizer build_regularizer(int n_cells, const std::vector<std::pair<int, int>>& connections,
                              double shift) {
  Regularizer out;
  out.w = build_w(n_cells, connections, shift);
  const Matrix r = Matrix(out.w.transpose() * out.w);
  out.l_inv = inverse_whitening_factor(r);
  return out;
}

// Problem and objective -------------------------------------------------------

void InverseProblem::validate() const {
  const auto n_d = n_obs();
  const auto n_m = n_params();
  if (n_d < 1 || n_m < 1) throw std::invalid_argument("InverseProblem: empty problem");
  if (gamma_d_diag.size() != n_d) {
    throw std::invalid_argument("InverseProblem: gamma_d_diag length != N_d");
  }
  if (!(gamma_d_diag.array() > 0.0).all()) {
    throw std::invalid_argument("InverseProblem: observation variances must be positive");
  }
  if (!whitener || whitener->size() != n_m) {
    throw std::invalid_argument("InverseProblem: whitener missing or wrong size");
  }
  if (!(mu > 0.0)) throw std::invalid_argument("InverseProblem: mu must be positive");
  if (lower.size() != n_m || upper.size() != n_m) {
    throw std::invalid_argument("InverseProblem: bounds length != N_m");
  }
  if (!(lower.array() < upper.array()).all()) {
    throw std::invalid_argument("InverseProblem: need lower < upper elementwise");
  }
}

Vector InverseProblem::clamp(const Vector& m) const {
  return m.cwiseMax(lower).cwiseMin(upper);
}

Vector InverseProblem::whiten(const Vector& m) const {
  return whitener->apply_inverse(m - m_pr);
}

Objective objective(const InverseProblem& problem, const Vector& m, const Vector& r) {
  if (r.size() != problem.n_obs() || m.size() != problem.n_params()) {
    throw std::invalid_argument("objective: size mismatch");
  }
  Objective o;
  o.phi_d = (r.array().square() / problem.gamma_d_diag.array()).sum();
  o.phi_m = problem.whiten(m).squaredNorm();
  o.phi = o.phi_d + problem.mu * o.phi_m;
  o.phi_n = o.phi_d / static_cast<double>(problem.n_obs());
  return o;
}

Vector lm_update(const tsvd::TruncatedSvd& svd, const InverseProblem& problem,
                 const Vector& m_tilde, double gamma, const Vector& r) {
  if (svd.u.rows() != problem.n_obs() || svd.v.rows() != problem.n_params()) {
    throw std::invalid_argument("lm_update: TSVD shape does not match the problem");
  }
  const Vector r_scaled = r.cwiseQuotient(problem.noise_scale());
  const Vector vm = svd.v.transpose() * m_tilde;
  const Vector ur = svd.u.transpose() * r_scaled;
  Vector alpha(svd.rank());
  for (Eigen::Index i = 0; i < svd.rank(); ++i) {
    const double lam = svd.lambda(i);
    alpha(i) = -(problem.mu * vm(i) + lam * ur(i)) / (problem.mu + gamma + lam * lam);
  }
  return svd.v * alpha;
}

MismatchBounds mismatch_bounds(int n_d) {
  if (n_d < 1) throw std::invalid_argument("mismatch_bounds: N_d must be >= 1");
  const double nd = n_d;
  const double half = 5.0 * std::sqrt(2.0 * nd);
  MismatchBounds b;
  b.lo = std::max(0.0, nd - half);
  b.hi = nd + half;
  b.lo_n = b.lo / nd;
  b.hi_n = b.hi / nd;
  return b;
}

// Forward evaluation -----------------------------------------------------------

std::optional<Evaluation> ModelEvaluator::evaluate(const Vector& m) {
  try {
    auto sim = model_->simulate(m);
    Evaluation e;
    e.simulated = std::move(sim.simulated);
    e.sensitivity = std::make_shared<forward::SensitivityOp>(model_, sim.trajectory);
    last_failure_.clear();
    return e;
  } catch (const forward::SimulationError& err) {
    last_failure_ = err.what();
    return std::nullopt;
  }
}

// Driver -----------------------------------------------------------------------

double DampingPolicy::after_success(double gamma) const {
  return std::max(gamma / 10.0, floor);
}

double DampingPolicy::after_failure(double gamma) const {
  return std::max(10.0 * gamma, 100.0);
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::iter_max: return "iter_max";
    case Termination::stalled: return "stalled";
    case Termination::initial_failure: return "initial_failure";
  }
  return "unknown";
}

std::uint64_t iteration_seed(std::uint64_t base, int iter) {
  // splitmix64 finalizer over (base, iter)
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(iter);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

class Driver {
 public:
  Driver(const InverseProblem& problem, ForwardEvaluator& evaluator, const DriverConfig& cfg)
      : problem_(problem), evaluator_(evaluator), cfg_(cfg) {}

  RunResult run(const std::optional<Vector>& m0) {
    const auto t_start = Clock::now();
    problem_.validate();
    tsvd::validate(cfg_.sketch);
    if (cfg_.iter_max < 0) throw std::invalid_argument("driver: iter_max must be >= 0");
    if (!(cfg_.eps_m > 0.0)) throw std::invalid_argument("driver: eps_m must be positive");
    if (cfg_.max_consecutive_rejections < 1) {
      throw std::invalid_argument("driver: max_consecutive_rejections must be >= 1");
    }

    RunResult out;
    LmState& s = out.state;
    s.m = problem_.clamp(m0 ? *m0 : problem_.m_pr);
    s.gamma = cfg_.damping.gamma0;
    s.iter = 1;

    auto t0 = Clock::now();
    auto eval = evaluate(s.m);
    HistoryRecord first;
    first.t_simulate = seconds_since(t0);
    if (!eval) {
      first.simulation_failed = true;
      first.n_simulations = n_sims_;
      s.history.push_back(first);
      out.termination = Termination::initial_failure;
      return finish(out, t_start);
    }
    s.r = eval->simulated - problem_.d_obs;
    s.m_tilde = problem_.whiten(s.m);
    s.current = objective(problem_, s.m, s.r);
    first.objective = s.current;
    first.gamma = s.gamma;
    first.accepted = true;
    t0 = Clock::now();
    compute_tsvd(s, *eval);
    first.t_sketch = seconds_since(t0);
    first.p = s.p;
    first.counts = counts_;
    first.n_simulations = n_sims_;
    s.history.push_back(first);

    int rejections = 0;
    int trial = 0;
    out.termination = Termination::iter_max;
    while (s.iter <= cfg_.iter_max) {
      HistoryRecord rec;
      rec.iter = s.iter;
      rec.trial = ++trial;
      rec.gamma = s.gamma;
      rec.p = s.p;

      t0 = Clock::now();
      const Vector dmt = lm_update(s.svd, problem_, s.m_tilde, s.gamma, s.r);
      const Vector m_temp = problem_.clamp(s.m + problem_.whitener->apply(dmt));
      rec.t_update = seconds_since(t0);
      rec.step_norm = (m_temp - s.m).norm();
      if (rec.step_norm <= cfg_.eps_m * (s.m.norm() + cfg_.eps_m)) {
        out.termination = Termination::converged;
        break;
      }

      t0 = Clock::now();
      auto cand = evaluate(m_temp);
      rec.t_simulate = seconds_since(t0);
      bool accepted = false;
      if (!cand) {
        rec.simulation_failed = true;
      } else {
        const Vector r_temp = cand->simulated - problem_.d_obs;
        rec.objective = objective(problem_, m_temp, r_temp);
        if (rec.objective.phi < s.current.phi) {
          accepted = true;
          ++s.iter;
          s.m = m_temp;
          s.m_tilde = problem_.whiten(m_temp);
          s.r = r_temp;
          s.current = rec.objective;
          s.gamma = cfg_.damping.after_success(s.gamma);
          // No further update will use a TSVD once the iteration budget is
          // spent, so the final estimate is skipped.
          if (s.iter <= cfg_.iter_max) {
            t0 = Clock::now();
            compute_tsvd(s, *cand);
            rec.t_sketch = seconds_since(t0);
          }
        }
      }
      rec.accepted = accepted;
      if (!accepted) s.gamma = cfg_.damping.after_failure(s.gamma);
      rec.counts = counts_;
      rec.n_simulations = n_sims_;
      s.history.push_back(rec);

      rejections = accepted ? 0 : rejections + 1;
      if (rejections >= cfg_.max_consecutive_rejections) {
        out.termination = Termination::stalled;
        break;
      }
    }
    return finish(out, t_start);
  }

 private:
  std::optional<Evaluation> evaluate(const Vector& m) {
    ++n_sims_;
    return evaluator_.evaluate(m);
  }

  RunResult& finish(RunResult& out, Clock::time_point t_start) {
    out.counts = counts_;
    out.n_simulations = n_sims_;
    out.wall_seconds = seconds_since(t_start);
    return out;
  }

  void compute_tsvd(LmState& s, const Evaluation& eval) {
    const DimensionlessSensitivityOp sd(eval.sensitivity, problem_.noise_scale(),
                                        problem_.whitener);
    const CountingOp counted(sd);
    const int kmax = static_cast<int>(std::min(sd.rows(), sd.cols()));
    const auto& sched = cfg_.schedule;

    tsvd::EstimateRequest req;
    req.method = cfg_.method;
    req.sketch = cfg_.sketch;
    req.sketch.seed = iteration_seed(cfg_.sketch.seed, s.iter);
    req.previous = s.svd.rank() > 0 ? &s.svd : nullptr;
    const bool sv_cut = sched.kind == tsvd::ScheduleKind::sv_cut;
    int p_req = sv_cut ? sched.p_max : tsvd::schedule_rank(sched, s.iter);
    p_req = std::min(p_req, kmax);
    req.sketch.p = p_req;
    if (sv_cut && cfg_.method == tsvd::Estimator::lanczos) req.sv_cut = sched.threshold(s.iter);

    auto est = tsvd::estimate(counted, req);
    tsvd::TruncatedSvd svd = std::move(est.svd);
    if (sv_cut && cfg_.method != tsvd::Estimator::lanczos && svd.rank() > 0) {
      svd = svd.truncated(tsvd::schedule_rank(sched, s.iter, svd.lambda));
    }

    TsvdRecord rec;
    rec.iter = s.iter;
    rec.p_requested = p_req;
    rec.p = static_cast<int>(svd.rank());
    rec.lanczos_iterations = est.lanczos_iterations;
    rec.subspace_iterations = est.subspace_iterations;
    rec.sketch_width = est.sketch_width;
    rec.counts = counted.counts();
    rec.lambda = svd.lambda;
    counts_ = counts_ + rec.counts;
    s.tsvds.push_back(std::move(rec));
    s.p = static_cast<int>(svd.rank());
    s.svd = std::move(svd);
  }

  const InverseProblem& problem_;
  ForwardEvaluator& evaluator_;
  const DriverConfig& cfg_;
  OpCounts counts_;
  int n_sims_ = 0;
};

}  // namespace

RunResult run_tsvd_lm(const InverseProblem& problem, ForwardEvaluator& evaluator,
                      const DriverConfig& config, const std::optional<Vector>& m0) {
  Driver driver(problem, evaluator, config);
  return driver.run(m0);
}

}  // namespace tsvdlm::inversion
