#include "tsvdlm/cli/oracle_check.hpp"

#include "tsvdlm/cli/commands.hpp"
#include "tsvdlm/oracle.hpp"
#include "tsvdlm/random.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace tsvdlm::cli {

RunConfig small_oracle_config() {
  RunConfig c;
  c.model.nx = 8;
  c.model.nz = 8;
  return c;
}

int oracle_check(const RunConfig& config, std::ostream& log) {
  config.validate();
  const forward::TimeSteppingModel tmp(config.model);
  if (tmp.n_params() > 1024) {
    log << "oracle-check: " << tmp.n_params()
        << " parameters is too many for dense assembly (limit 1024)\n";
    return 2;
  }
  const Vector truth = forward::make_truth_field(tmp, config.twin.truth_seed);
  auto obs = forward::make_observations(tmp, truth, std::max(config.twin.noise_sigma, 1e-3),
                                        config.twin.noise_seed);
  const auto setup = make_setup(config, obs);
  const auto& model = *setup.model;
  const auto& problem = setup.problem;
  const Vector m = problem.m_pr;

  int failures = 0;
  auto report = [&](const std::string& name, double value, double limit) {
    const bool ok = value <= limit;
    failures += ok ? 0 : 1;
    log << (ok ? "PASS " : "FAIL ") << std::left << std::setw(40) << name << std::scientific
        << std::setprecision(3) << value << " (limit " << limit << ")\n";
  };

  const auto sim = model.simulate(m);
  const Matrix h1 = gaussian_matrix(model.n_params(), 5, 11);
  const Matrix h2 = gaussian_matrix(model.n_obs(), 5, 12);
  const Matrix sh = forward::direct_product(model, *sim.trajectory, h1);
  const Matrix sth = forward::adjoint_product(model, *sim.trajectory, h2);
  report("adjoint/direct duality", std::abs(dense::inner(sh, h2) - dense::inner(h1, sth)) /
                                       (sh.norm() * h2.norm()),
         1e-8);

  const auto fd = oracle::assemble_dense_sensitivity(
      model, m, oracle::AssemblyMode::finite_difference, problem.noise_scale(),
      *problem.whitener);
  const auto adj = oracle::assemble_dense_sensitivity(
      model, m, oracle::AssemblyMode::adjoint_columns, problem.noise_scale(), *problem.whitener);
  // Relative to the largest entry: small entries carry only rounding.
  report("finite-difference vs adjoint columns",
         (fd.s - adj.s).cwiseAbs().maxCoeff() / adj.s.cwiseAbs().maxCoeff(), 1e-4);

  const DimensionlessSensitivityOp sd(
      std::make_shared<forward::SensitivityOp>(setup.model, sim.trajectory),
      problem.noise_scale(), problem.whitener);
  const int p = std::min<int>(30, static_cast<int>(std::min(sd.rows(), sd.cols())));
  const auto lz = tsvd::tsvd_lanczos(sd, p, 1e-10, std::nullopt, 5);
  double sv_err = 0.0;
  for (Eigen::Index i = 0; i < lz.svd.rank(); ++i) {
    sv_err = std::max(sv_err, std::abs(lz.svd.lambda(i) - adj.svd.lambda(i)) / adj.svd.lambda(i));
  }
  report("Lanczos (eps_sv 1e-10) vs dense SVD", sv_err, 1e-8);

  const Vector r = sim.simulated - problem.d_obs;
  const Vector m_tilde = problem.whiten(m);
  const tsvd::TruncatedSvd full{adj.svd.u, adj.svd.lambda, adj.svd.v};
  double worst = 0.0;
  for (double gamma : {1e6, 1.0, 1e-3}) {
    const Vector a = inversion::lm_update(full, problem, m_tilde, gamma, r);
    const Vector b = oracle::solve_full_lm(adj, problem, m_tilde, gamma, r);
    worst = std::max(worst, (a - b).norm() / b.norm());
  }
  report("full-rank TSVD update vs dense LM solve", worst, 1e-8);

  log << (failures == 0 ? "oracle-check: all checks passed\n" : "oracle-check: FAILED\n");
  return failures == 0 ? 0 : 1;
}

}  // namespace tsvdlm::cli
