#pragma once

#include "tsvdlm/forward.hpp"
#include "tsvdlm/inversion.hpp"
#include "tsvdlm/random.hpp"

#include <memory>

namespace tsvdlm::testing {

/// Matrix with the given singular values and seeded random singular vectors.
inline Matrix with_spectrum(Eigen::Index rows, Eigen::Index cols, const Vector& sv,
                            std::uint64_t seed) {
  const Matrix u = dense::orth(gaussian_matrix(rows, sv.size(), seed, 101));
  const Matrix v = dense::orth(gaussian_matrix(cols, sv.size(), seed, 102));
  return u * sv.asDiagonal() * v.transpose();
}

inline Vector geometric_spectrum(Eigen::Index n, double ratio) {
  Vector s(n);
  for (Eigen::Index i = 0; i < n; ++i) s(i) = std::pow(ratio, static_cast<double>(i + 1));
  return s;
}

struct Twin {
  std::shared_ptr<const forward::TimeSteppingModel> model;
  inversion::InverseProblem problem;
  Vector truth;
};

/// Synthetic twin: truth seed 1, noise seed 2, sigma 0.5, prior -14.
inline Twin make_twin(forward::ModelConfig cfg = {}, double mu = 5.0, double sigma = 0.5) {
  Twin t;
  auto model = std::make_shared<forward::TimeSteppingModel>(cfg);
  t.truth = forward::make_truth_field(*model, 1);
  const auto obs = forward::make_observations(*model, t.truth, sigma, 2);
  const auto reg = inversion::build_regularizer(model->n_cells(), model->connections());
  t.problem.d_obs = obs.values;
  t.problem.gamma_d_diag = obs.sigma.array().square();
  t.problem.m_pr = Vector::Constant(model->n_params(), -14.0);
  t.problem.whitener = std::make_shared<Whitener>(reg.l_inv);
  t.problem.mu = mu;
  t.problem.lower = model->lower_bounds();
  t.problem.upper = model->upper_bounds();
  t.model = std::move(model);
  return t;
}

inline forward::ModelConfig small_config() {
  forward::ModelConfig c;
  c.nx = 8;
  c.nz = 8;
  return c;
}

}  // namespace tsvdlm::testing
