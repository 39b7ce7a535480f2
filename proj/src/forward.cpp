#include "tsvdlm/forward.hpp"

#include "tsvdlm/random.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace tsvdlm::forward {

namespace {

constexpr double kLn10 = 2.302585092994045684;

std::string level_message(int level, const std::string& why) {
  std::ostringstream os;
  os << (level == 0 ? std::string("steady state") : "time step " + std::to_string(level))
     << ": " << why;
  return os.str();
}

double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

std::unique_ptr<Eigen::SparseLU<SparseMatrix>> factorize(const SparseMatrix& a, int level) {
  auto lu = std::make_unique<Eigen::SparseLU<SparseMatrix>>();
  lu->analyzePattern(a);
  lu->factorize(a);
  if (lu->info() != Eigen::Success) {
    throw PropagationError(level, "coefficient matrix is singular");
  }
  return lu;
}

}  // namespace

SimulationError::SimulationError(int level, double residual_norm, const std::string& why)
    : std::runtime_error(level_message(level, why + " (residual " +
                                                  std::to_string(residual_norm) + ")")),
      level_(level),
      residual_norm_(residual_norm) {}

PropagationError::PropagationError(int level, const std::string& why)
    : std::runtime_error(level_message(level, why)), level_(level) {}

TimeSteppingModel::TimeSteppingModel(ModelConfig config) : cfg_(config) {
  if (cfg_.nx < 1 || cfg_.nz < 1) throw std::invalid_argument("grid must be at least 1x1");
  if (cfg_.n_steps < 0) throw std::invalid_argument("n_steps must be >= 0");
  if (!(cfg_.dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(cfg_.storage > 0.0)) throw std::invalid_argument("storage must be positive");
  if (!(cfg_.lower_bound < cfg_.upper_bound)) {
    throw std::invalid_argument("lower bound must be below upper bound");
  }
  const int n = n_cells();

  for (int iz = 0; iz < cfg_.nz; ++iz) {
    for (int ix = 0; ix + 1 < cfg_.nx; ++ix) {
      const int i = cell(ix, iz);
      const int j = cell(ix + 1, iz);
      faces_.push_back({i, j, i, j});
      conns_.emplace_back(i, j);
    }
  }
  for (int iz = 0; iz + 1 < cfg_.nz; ++iz) {
    for (int ix = 0; ix < cfg_.nx; ++ix) {
      const int i = cell(ix, iz);
      const int j = cell(ix, iz + 1);
      faces_.push_back({i, j, n + i, n + j});
      conns_.emplace_back(i, j);
    }
  }
  for (int ix = 0; ix < cfg_.nx; ++ix) {
    const int i = cell(ix, 0);
    faces_.push_back({i, -1, n + i, -1});
  }

  q_st_ = Vector::Zero(n);
  for (int ix = 0; ix < cfg_.nx; ++ix) {
    q_st_(cell(ix, cfg_.nz - 1)) += ix < cfg_.hot_columns ? cfg_.hot_inflow : cfg_.background_inflow;
  }

  const int pz = std::min(cfg_.nz - 1, (3 * cfg_.nz) / 4);
  for (int p = 0; p < cfg_.n_producers; ++p) {
    const int px = std::min(cfg_.nx - 1, ((p + 1) * cfg_.nx) / (cfg_.n_producers + 1));
    producers_.push_back(cell(px, pz));
  }
  q_pr_ = q_st_;
  for (int c : producers_) q_pr_(c) -= cfg_.production_rate;

  for (int w = 0; w < cfg_.n_obs_wells; ++w) {
    const int ix = std::min(
        cfg_.nx - 1, static_cast<int>(std::floor((w + 0.5) * cfg_.nx / cfg_.n_obs_wells)));
    for (int iz = 1; iz < cfg_.nz; iz += std::max(1, cfg_.obs_depth_stride)) {
      sites_.push_back({ObsKind::steady, cell(ix, iz), 0});
    }
  }
  for (int k = 1; k <= cfg_.n_steps; ++k) {
    for (int c : producers_) sites_.push_back({ObsKind::transient, c, k});
  }
}

double TimeSteppingModel::conductivity(double m_value) const {
  return std::pow(10.0, m_value - cfg_.m_ref);
}

void TimeSteppingModel::assemble_flux(const Vector& u, const Vector& m, Vector* f,
                                      std::vector<Eigen::Triplet<double>>* jac_u,
                                      std::vector<Eigen::Triplet<double>>* jac_m) const {
  const double half_beta = 0.5 * cfg_.beta;
  for (const Face& face : faces_) {
    const int i = face.i;
    const double ki = conductivity(m(face.param_i));
    double t, dt_dmi, dt_dmj = 0.0, uj;
    if (face.j >= 0) {
      const double kj = conductivity(m(face.param_j));
      const double s = ki + kj;
      t = 2.0 * ki * kj / s;
      dt_dmi = 2.0 * kj * kj / (s * s) * kLn10 * ki;
      dt_dmj = 2.0 * ki * ki / (s * s) * kLn10 * kj;
      uj = u(face.j);
    } else {
      t = 2.0 * ki;
      dt_dmi = 2.0 * kLn10 * ki;
      uj = cfg_.u_top;
    }
    const double diff = uj - u(i);
    const double kappa = 1.0 + half_beta * (u(i) + uj);
    if (!(kappa > 0.0)) {
      // Outside the admissible state range; poison the residual so Newton
      // backtracks or fails.
      if (f) (*f)(i) = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const double flux = t * kappa * diff;
    const double dfl_dui = t * (half_beta * diff - kappa);
    const double dfl_duj = t * (half_beta * diff + kappa);

    if (f) {
      (*f)(i) -= flux;
      if (face.j >= 0) (*f)(face.j) += flux;
    }
    if (jac_u) {
      jac_u->emplace_back(i, i, -dfl_dui);
      if (face.j >= 0) {
        jac_u->emplace_back(i, face.j, -dfl_duj);
        jac_u->emplace_back(face.j, i, dfl_dui);
        jac_u->emplace_back(face.j, face.j, dfl_duj);
      }
    }
    if (jac_m) {
      const double dfl_dmi = dt_dmi * kappa * diff;
      jac_m->emplace_back(i, face.param_i, -dfl_dmi);
      if (face.j >= 0) {
        const double dfl_dmj = dt_dmj * kappa * diff;
        jac_m->emplace_back(i, face.param_j, -dfl_dmj);
        jac_m->emplace_back(face.j, face.param_i, dfl_dmi);
        jac_m->emplace_back(face.j, face.param_j, dfl_dmj);
      }
    }
  }
}

Vector TimeSteppingModel::residual_steady(const Vector& u, const Vector& m) const {
  Vector f = -q_st_;
  assemble_flux(u, m, &f, nullptr, nullptr);
  return f;
}

Vector TimeSteppingModel::residual_step(const Vector& u, const Vector& u_prev,
                                        const Vector& m, double dt) const {
  Vector f = (cfg_.storage / dt) * (u - u_prev) - q_pr_;
  assemble_flux(u, m, &f, nullptr, nullptr);
  return f;
}

SparseMatrix TimeSteppingModel::jacobian_state_steady(const Vector& u, const Vector& m) const {
  std::vector<Eigen::Triplet<double>> trip;
  assemble_flux(u, m, nullptr, &trip, nullptr);
  SparseMatrix a(n_cells(), n_cells());
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

SparseMatrix TimeSteppingModel::jacobian_state_step(const Vector& u, const Vector& m,
                                                    double dt) const {
  std::vector<Eigen::Triplet<double>> trip;
  assemble_flux(u, m, nullptr, &trip, nullptr);
  for (int i = 0; i < n_cells(); ++i) trip.emplace_back(i, i, cfg_.storage / dt);
  SparseMatrix a(n_cells(), n_cells());
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

SparseMatrix TimeSteppingModel::jacobian_params(const Vector& u, const Vector& m) const {
  std::vector<Eigen::Triplet<double>> trip;
  assemble_flux(u, m, nullptr, nullptr, &trip);
  SparseMatrix g(n_cells(), n_params());
  g.setFromTriplets(trip.begin(), trip.end());
  return g;
}

Vector TimeSteppingModel::newton(const Vector& u0, const Vector& m, int level,
                                 const Vector* u_prev, double tol, SolveInfo* info) const {
  auto residual = [&](const Vector& u) {
    return u_prev ? residual_step(u, *u_prev, m, cfg_.dt) : residual_steady(u, m);
  };
  Vector u = u0;
  Vector f = residual(u);
  double norm = f.allFinite() ? inf_norm(f) : std::numeric_limits<double>::infinity();
  if (!std::isfinite(norm)) throw SimulationError(level, norm, "non-finite initial residual");

  for (int it = 0;; ++it) {
    if (norm <= tol) {
      info->newton_iterations = it;
      info->residual_norm = norm;
      return u;
    }
    if (it >= cfg_.newton_max_iter) {
      throw SimulationError(level, norm, "Newton did not converge");
    }
    const SparseMatrix a =
        u_prev ? jacobian_state_step(u, m, cfg_.dt) : jacobian_state_steady(u, m);
    Eigen::SparseLU<SparseMatrix> lu;
    lu.analyzePattern(a);
    lu.factorize(a);
    if (lu.info() != Eigen::Success) {
      throw SimulationError(level, norm, "singular Newton Jacobian");
    }
    const Vector delta = lu.solve(-f);

    // Backtracking on the max-norm of the residual.
    double step = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls) {
      Vector trial = u + step * delta;
      Vector ft = residual(trial);
      const double nt = ft.allFinite() ? inf_norm(ft) : std::numeric_limits<double>::infinity();
      if (nt < norm || (step == 1.0 && nt <= tol)) {
        u = std::move(trial);
        f = std::move(ft);
        norm = nt;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) throw SimulationError(level, norm, "line search stalled");
  }
}

SimulationResult TimeSteppingModel::simulate(const Vector& m) const {
  if (m.size() != n_params()) throw std::invalid_argument("simulate: wrong parameter count");
  if (!m.allFinite()) throw std::invalid_argument("simulate: non-finite parameters");

  auto traj = std::make_shared<Trajectory>();
  traj->m_ = m;
  SolveInfo info;
  traj->u_st_ = newton(Vector::Constant(n_cells(), cfg_.u_top), m, 0, nullptr,
                       cfg_.newton_tol_steady, &info);
  traj->info_.push_back(info);
  traj->steady_.a = jacobian_state_steady(traj->u_st_, m);
  traj->steady_.g = jacobian_params(traj->u_st_, m);
  traj->steady_.lu = factorize(traj->steady_.a, 0);

  const Vector* prev = &traj->u_st_;
  traj->u_.reserve(static_cast<std::size_t>(cfg_.n_steps));
  for (int k = 1; k <= cfg_.n_steps; ++k) {
    SolveInfo si;
    Vector uk = newton(*prev, m, k, prev, cfg_.newton_tol_step, &si);
    traj->u_.push_back(std::move(uk));
    traj->info_.push_back(si);
    prev = &traj->u_.back();
  }
  traj->steps_.resize(traj->u_.size());
  for (int k = 1; k <= cfg_.n_steps; ++k) {
    auto& level = traj->steps_[static_cast<std::size_t>(k - 1)];
    level.a = jacobian_state_step(traj->step(k), m, cfg_.dt);
    level.g = jacobian_params(traj->step(k), m);
    level.lu = factorize(level.a, k);
  }

  SimulationResult out;
  out.simulated = observe(traj->u_st_, traj->u_);
  out.trajectory = std::move(traj);
  return out;
}

Vector TimeSteppingModel::observe(const Vector& u_st, const std::vector<Vector>& steps) const {
  Vector d(n_obs());
  for (int o = 0; o < n_obs(); ++o) {
    const auto& s = sites_[static_cast<std::size_t>(o)];
    d(o) = s.kind == ObsKind::steady ? u_st(s.cell)
                                     : steps.at(static_cast<std::size_t>(s.time_index - 1))(s.cell);
  }
  return d;
}

Vector TimeSteppingModel::lower_bounds() const {
  return Vector::Constant(n_params(), cfg_.lower_bound);
}
Vector TimeSteppingModel::upper_bounds() const {
  return Vector::Constant(n_params(), cfg_.upper_bound);
}
Vector TimeSteppingModel::clamp(const Vector& m) const {
  return m.cwiseMax(cfg_.lower_bound).cwiseMin(cfg_.upper_bound);
}

// Propagation -----------------------------------------------------------------

namespace {

/// Observation rows grouped by time level (0 = steady).
std::vector<std::vector<std::pair<int, int>>> rows_by_level(const TimeSteppingModel& model) {
  std::vector<std::vector<std::pair<int, int>>> out(
      static_cast<std::size_t>(model.config().n_steps + 1));
  const auto& sites = model.observation_sites();
  for (std::size_t o = 0; o < sites.size(); ++o) {
    out[static_cast<std::size_t>(sites[o].time_index)].emplace_back(static_cast<int>(o),
                                                                     sites[o].cell);
  }
  return out;
}

}  // namespace

Matrix direct_product(const TimeSteppingModel& model, const Trajectory& traj, const Matrix& h,
                      std::vector<int>* trace) {
  if (h.rows() != model.n_params()) throw std::invalid_argument("direct_product: H rows");
  const auto levels = rows_by_level(model);
  // d r / d m is zero for state observations, so only C X terms remain.
  Matrix out = Matrix::Zero(model.n_obs(), h.cols());

  Matrix x = traj.steady_.lu->solve(Matrix(-(traj.steady_.g * h)));
  if (traj.steady_.lu->info() != Eigen::Success) throw PropagationError(0, "solve failed");
  if (trace) trace->push_back(0);
  for (auto [o, c] : levels[0]) out.row(o) = x.row(c);

  const double coupling = model.step_coupling(model.config().dt);
  for (int k = 1; k <= traj.n_steps(); ++k) {
    const auto& level = traj.steps_[static_cast<std::size_t>(k - 1)];
    Matrix rhs = -(level.g * h) - coupling * x;
    x = level.lu->solve(rhs);
    if (level.lu->info() != Eigen::Success) throw PropagationError(k, "solve failed");
    if (trace) trace->push_back(k);
    for (auto [o, c] : levels[static_cast<std::size_t>(k)]) out.row(o) = x.row(c);
  }
  return out;
}

Matrix adjoint_product(const TimeSteppingModel& model, const Trajectory& traj, const Matrix& h,
                       std::vector<int>* trace) {
  if (h.rows() != model.n_obs()) throw std::invalid_argument("adjoint_product: H rows");
  const auto levels = rows_by_level(model);
  const Eigen::Index n = model.n_cells();
  const Eigen::Index s = h.cols();
  Matrix out = Matrix::Zero(model.n_params(), s);
  const double coupling = model.step_coupling(model.config().dt);

  Matrix z_next;  // Z^{k+1}
  for (int k = traj.n_steps(); k >= 1; --k) {
    Matrix rhs = Matrix::Zero(n, s);
    for (auto [o, c] : levels[static_cast<std::size_t>(k)]) rhs.row(c) -= h.row(o);
    if (k < traj.n_steps()) rhs -= coupling * z_next;
    const auto& level = traj.steps_[static_cast<std::size_t>(k - 1)];
    z_next = level.lu->transpose().solve(rhs);
    if (level.lu->info() != Eigen::Success) throw PropagationError(k, "solve failed");
    if (trace) trace->push_back(k);
    out.noalias() += level.g.transpose() * z_next;
  }

  Matrix rhs = Matrix::Zero(n, s);
  for (auto [o, c] : levels[0]) rhs.row(c) -= h.row(o);
  if (traj.n_steps() > 0) rhs -= coupling * z_next;
  const Matrix z_st = traj.steady_.lu->transpose().solve(rhs);
  if (traj.steady_.lu->info() != Eigen::Success) throw PropagationError(0, "solve failed");
  if (trace) trace->push_back(0);
  out.noalias() += traj.steady_.g.transpose() * z_st;
  return out;
}

// Twin experiment ---------------------------------------------------------------

Vector make_truth_field(const TimeSteppingModel& model, std::uint64_t seed) {
  const auto& cfg = model.config();
  const int n = model.n_cells();
  const Vector noise = gaussian_vector(2 * n, seed, 0x7472757468ULL);
  const Vector shape = gaussian_vector(4, seed, 0x7368617065ULL);

  // Smoothed white noise: a few passes of neighbour averaging.
  auto smooth = [&](Vector f) {
    for (int pass = 0; pass < 4; ++pass) {
      Vector g = f;
      for (int c = 0; c < n; ++c) {
        const auto [ix, iz] = model.cell_index(c);
        double sum = f(c);
        int cnt = 1;
        if (ix > 0) { sum += f(model.cell(ix - 1, iz)); ++cnt; }
        if (ix + 1 < cfg.nx) { sum += f(model.cell(ix + 1, iz)); ++cnt; }
        if (iz > 0) { sum += f(model.cell(ix, iz - 1)); ++cnt; }
        if (iz + 1 < cfg.nz) { sum += f(model.cell(ix, iz + 1)); ++cnt; }
        g(c) = sum / cnt;
      }
      f = std::move(g);
    }
    return f;
  };
  Vector nx_field = smooth(noise.head(n));
  Vector nz_field = smooth(noise.tail(n));
  nx_field /= std::max(1e-12, std::sqrt(nx_field.squaredNorm() / n));
  nz_field /= std::max(1e-12, std::sqrt(nz_field.squaredNorm() / n));

  // Permeable upflow zone above the hot inflow, a tight cap near the top.
  const double zone_x = (0.15 + 0.05 * std::tanh(shape(0))) * cfg.nx;
  const double zone_w = (0.18 + 0.04 * std::tanh(shape(1))) * cfg.nx;
  const double cap_z = (0.22 + 0.05 * std::tanh(shape(2))) * cfg.nz;
  const double cap_gap_x = (0.55 + 0.1 * std::tanh(shape(3))) * cfg.nx;

  Vector m(2 * n);
  for (int c = 0; c < n; ++c) {
    const auto [ix, iz] = model.cell_index(c);
    const double x = ix + 0.5;
    const double z = iz + 0.5;
    double base = -14.3;
    base += 0.9 * std::exp(-0.5 * std::pow((x - zone_x) / zone_w, 2));
    const double cap = std::exp(-0.5 * std::pow((z - cap_z) / (0.07 * cfg.nz + 0.5), 2));
    const double gap = std::exp(-0.5 * std::pow((x - cap_gap_x) / (0.1 * cfg.nx + 0.5), 2));
    base -= 0.8 * cap * (1.0 - gap);
    const double mx = base + 0.25 * nx_field(c);
    const double mz = base - 0.25 * cap + 0.2 * nz_field(c);
    m(c) = std::clamp(mx, cfg.lower_bound + 0.1, cfg.upper_bound - 0.1);
    m(n + c) = std::clamp(mz, cfg.lower_bound + 0.1, cfg.upper_bound - 0.1);
  }
  return m;
}

ObservationSet make_observations(const TimeSteppingModel& model, const Vector& truth,
                                 double sigma, std::uint64_t noise_seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
  ObservationSet out;
  out.sites = model.observation_sites();
  out.values = model.simulate(truth).simulated;
  if (sigma > 0.0) {
    out.values += sigma * gaussian_vector(model.n_obs(), noise_seed, 0x6e6f697365ULL);
  }
  out.sigma = Vector::Constant(model.n_obs(), sigma);
  return out;
}

void write_observations_csv(std::ostream& os, const ObservationSet& obs) {
  os << "obs_id,kind,cell,time_index,value,sigma\n";
  os << std::setprecision(17);
  for (std::size_t o = 0; o < obs.sites.size(); ++o) {
    const auto& s = obs.sites[o];
    os << o << ',' << (s.kind == ObsKind::steady ? "steady" : "transient") << ',' << s.cell
       << ',' << s.time_index << ',' << obs.values(static_cast<Eigen::Index>(o)) << ','
       << obs.sigma(static_cast<Eigen::Index>(o)) << '\n';
  }
}

namespace {
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}
}  // namespace

ObservationSet read_observations_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("observation CSV is empty");
  if (line.rfind("obs_id,kind,cell,time_index,value,sigma", 0) != 0) {
    throw std::runtime_error("observation CSV: unexpected header '" + line + "'");
  }
  std::vector<ObservationSite> sites;
  std::vector<double> values, sigma;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) {
      throw std::runtime_error("observation CSV line " + std::to_string(line_no) +
                               ": expected 6 fields");
    }
    ObservationSite s;
    if (f[1] == "steady") {
      s.kind = ObsKind::steady;
    } else if (f[1] == "transient") {
      s.kind = ObsKind::transient;
    } else {
      throw std::runtime_error("observation CSV line " + std::to_string(line_no) +
                               ": unknown kind '" + f[1] + "'");
    }
    s.cell = std::stoi(f[2]);
    s.time_index = std::stoi(f[3]);
    sites.push_back(s);
    values.push_back(std::stod(f[4]));
    sigma.push_back(std::stod(f[5]));
  }
  ObservationSet out;
  out.sites = std::move(sites);
  out.values = Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
  out.sigma = Eigen::Map<Vector>(sigma.data(), static_cast<Eigen::Index>(sigma.size()));
  return out;
}

void write_parameter_grid_csv(std::ostream& os, const TimeSteppingModel& model, const Vector& m) {
  const int n = model.n_cells();
  os << "cell,ix,iz,m_horizontal,m_vertical\n" << std::setprecision(17);
  for (int c = 0; c < n; ++c) {
    const auto [ix, iz] = model.cell_index(c);
    os << c << ',' << ix << ',' << iz << ',' << m(c) << ',' << m(n + c) << '\n';
  }
}

Vector read_parameter_grid_csv(std::istream& is, int n_cells) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("parameter grid CSV is empty");
  Vector m = Vector::Constant(2 * n_cells, std::numeric_limits<double>::quiet_NaN());
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 5) throw std::runtime_error("parameter grid CSV: expected 5 fields");
    const int c = std::stoi(f[0]);
    if (c < 0 || c >= n_cells) throw std::runtime_error("parameter grid CSV: cell out of range");
    m(c) = std::stod(f[3]);
    m(n_cells + c) = std::stod(f[4]);
  }
  if (!m.allFinite()) throw std::runtime_error("parameter grid CSV: missing cells");
  return m;
}

}  // namespace tsvdlm::forward
