#include "tsvdlm/tsvd.hpp"

#include "tsvdlm/random.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace tsvdlm::tsvd {

namespace {

constexpr std::uint64_t kOmegaStream = 1;
constexpr std::uint64_t kPsiStream = 2;
constexpr std::uint64_t kLanczosStream = 3;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

/// Sample block: leading columns from prefix (if any), Gaussian tail keyed
/// from the first non-prefix column.
Matrix sample_block(Eigen::Index rows, Eigen::Index width, std::uint64_t seed,
                    std::uint64_t stream, const std::optional<Matrix>& prefix) {
  const Eigen::Index k = prefix ? std::min(prefix->cols(), width) : 0;
  if (prefix) require(prefix->rows() == rows, "sample prefix has the wrong row count");
  Matrix out(rows, width);
  if (k > 0) out.leftCols(k) = prefix->leftCols(k);
  if (width > k) out.rightCols(width - k) = gaussian_matrix(rows, width - k, seed, stream, k);
  return out;
}

/// Two passes of classical Gram-Schmidt projection against basis.
void reorthogonalize(Vector& x, const Matrix& basis, Eigen::Index ncols) {
  if (ncols == 0) return;
  for (int pass = 0; pass < 2; ++pass) {
    const auto b = basis.leftCols(ncols);
    x -= b * (b.transpose() * x);
  }
}

TruncatedSvd lift(const dense::Svd& core, const Matrix& left_basis, const Matrix& right_basis,
                  Eigen::Index k) {
  k = std::min<Eigen::Index>(k, core.lambda.size());
  TruncatedSvd out;
  out.u = left_basis * core.u.leftCols(k);
  out.v = right_basis * core.v.leftCols(k);
  out.lambda = core.lambda.head(k);
  return out;
}

}  // namespace

TruncatedSvd TruncatedSvd::truncated(Eigen::Index k) const {
  k = std::clamp<Eigen::Index>(k, 0, rank());
  return {u.leftCols(k), lambda.head(k), v.leftCols(k)};
}

void TruncatedSvd::validate(double tol) const {
  if (u.cols() != rank() || v.cols() != rank()) {
    throw NumericalError("TruncatedSvd: factor widths differ from rank");
  }
  for (Eigen::Index i = 0; i < rank(); ++i) {
    if (!(lambda(i) >= 0.0)) throw NumericalError("TruncatedSvd: negative singular value");
    if (i > 0 && lambda(i) > lambda(i - 1)) {
      throw NumericalError("TruncatedSvd: singular values not sorted");
    }
  }
  if (dense::orthonormality_defect(u) > tol || dense::orthonormality_defect(v) > tol) {
    throw NumericalError("TruncatedSvd: factors are not orthonormal");
  }
}

TruncatedSvd sorted(TruncatedSvd s) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(s.rank()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return s.lambda(a) > s.lambda(b); });
  TruncatedSvd out{Matrix(s.u.rows(), s.rank()), Vector(s.rank()), Matrix(s.v.rows(), s.rank())};
  for (Eigen::Index i = 0; i < s.rank(); ++i) {
    const auto j = idx[static_cast<std::size_t>(i)];
    out.u.col(i) = s.u.col(j);
    out.v.col(i) = s.v.col(j);
    out.lambda(i) = s.lambda(j);
  }
  return out;
}

std::vector<std::string> validate(const SketchConfig& cfg) {
  require(cfg.p >= 1, "sketch: p must be >= 1");
  require(cfg.l >= 0, "sketch: l must be >= 0");
  require(cfg.l1 >= 0, "sketch: l1 must be >= 0");
  require(cfg.l2 >= cfg.l1, "sketch: l2 must be >= l1");
  require(cfg.eps_sv > 0.0, "sketch: eps_sv must be positive");
  require(cfg.threads >= 1, "sketch: threads must be >= 1");
  std::vector<std::string> warnings;
  if (cfg.l1 == cfg.l2) {
    if (!cfg.allow_equal_oversampling) {
      throw std::invalid_argument(
          "sketch: l1 == l2 makes the 1-view method fragile; set "
          "allow_equal_oversampling to override");
    }
    warnings.emplace_back("l1 == l2: 1-view estimates may be unstable");
  }
  return warnings;
}

double TruncationSchedule::threshold(int iter) const {
  return sv_cut_init * std::pow(sv_cut_factor, iter - 1);
}

int schedule_rank(const TruncationSchedule& schedule, int iter,
                  const std::optional<Vector>& spectrum) {
  require(iter >= 1, "schedule_rank: iter must be >= 1");
  require(schedule.p_max >= 1, "schedule_rank: p_max must be >= 1");
  if (schedule.kind == ScheduleKind::linear) {
    const long p = static_cast<long>(schedule.p_init) +
                   static_cast<long>(schedule.p_step) * (iter - 1);
    return static_cast<int>(std::clamp<long>(p, 1, schedule.p_max));
  }
  if (!spectrum || spectrum->size() == 0) {
    throw std::invalid_argument("schedule_rank: sv-cut schedule needs a spectrum");
  }
  const Vector& s = *spectrum;
  const double cut = schedule.threshold(iter);
  const auto limit = std::min<Eigen::Index>(s.size(), schedule.p_max);
  if (s(0) > 0.0) {
    for (Eigen::Index i = 0; i < limit; ++i) {
      if (s(i) / s(0) <= cut) return static_cast<int>(i + 1);
    }
  }
  return static_cast<int>(limit);
}

// Lanczos ----------------------------------------------------------------------

LanczosResult tsvd_lanczos(const LinearOp& a, int p, double eps_sv,
                           std::optional<double> sv_cut, std::uint64_t seed) {
  const Eigen::Index n_r = a.rows();
  const Eigen::Index n_c = a.cols();
  const Eigen::Index kmax = std::min(n_r, n_c);
  require(p >= 1 && p <= kmax, "tsvd_lanczos: need 1 <= p <= min(rows, cols)");
  require(eps_sv > 0.0, "tsvd_lanczos: eps_sv must be positive");

  Matrix q_basis(n_c, kmax);
  Matrix p_basis(n_r, kmax);
  std::vector<double> alpha, beta;

  LanczosResult out;
  Vector q = gaussian_vector(n_c, seed, kLanczosStream);
  q /= q.norm();
  q_basis.col(0) = q;
  Vector y = a.apply(q);
  alpha.push_back(y.norm());
  double scale = alpha[0];
  if (!(alpha[0] > 0.0)) {
    // A q = 0 for a generic q: numerically the zero operator.
    out.svd = {Matrix(n_r, 0), Vector(0), Matrix(n_c, 0)};
    out.exhausted = true;
    return out;
  }
  p_basis.col(0) = y / alpha[0];

  // Upper bidiagonal with the given diagonal/superdiagonal; rows x cols.
  auto bidiagonal = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix t = Matrix::Zero(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (i < cols) t(i, i) = alpha[static_cast<std::size_t>(i)];
      if (i + 1 < cols) t(i, i + 1) = beta[static_cast<std::size_t>(i)];
    }
    return t;
  };

  Vector prev_lambda = Vector::Zero(p);
  for (Eigen::Index j = 1;; ++j) {
    out.iterations = static_cast<int>(j);
    const std::size_t ju = static_cast<std::size_t>(j);

    Vector w = a.apply_transpose(p_basis.col(j - 1)) - alpha[ju - 1] * q_basis.col(j - 1);
    reorthogonalize(w, q_basis, j);
    beta.push_back(w.norm());
    if (beta[ju - 1] <= 1e-14 * scale) {
      // Invariant subspace found: the j x j bidiagonal is exact.
      const auto core = dense::svd_full(bidiagonal(j, j));
      const Eigen::Index k = std::min<Eigen::Index>(p, j);
      out.svd = lift(core, p_basis.leftCols(j), q_basis.leftCols(j), k);
      out.rank = static_cast<int>(out.svd.rank());
      out.exhausted = true;
      return out;
    }
    scale = std::max(scale, beta[ju - 1]);
    q_basis.col(j) = w / beta[ju - 1];

    y = a.apply(q_basis.col(j)) - beta[ju - 1] * p_basis.col(j - 1);
    Vector yv = y;
    reorthogonalize(yv, p_basis, j);
    alpha.push_back(yv.norm());
    if (alpha[ju] <= 1e-14 * scale) {
      // A Q^{j+1} = P^j T with T of size j x (j+1).
      const auto core = dense::svd_full(bidiagonal(j, j + 1));
      const Eigen::Index k = std::min<Eigen::Index>(p, j);
      out.svd = lift(core, p_basis.leftCols(j), q_basis.leftCols(j + 1), k);
      out.rank = static_cast<int>(out.svd.rank());
      out.exhausted = true;
      return out;
    }
    scale = std::max(scale, alpha[ju]);
    p_basis.col(j) = yv / alpha[ju];

    const bool full = j + 1 == kmax;
    if (j >= p || sv_cut || full) {
      Matrix q_used = q_basis.leftCols(j + 1);
      dense::Svd core;
      if (full && n_c > n_r) {
        // P now spans range(A) but Q need not span the row space; one more
        // adjoint step closes A = P [B, beta e] Q^T.
        Vector w2 = a.apply_transpose(p_basis.col(j)) - alpha[ju] * q_basis.col(j);
        reorthogonalize(w2, q_basis, j + 1);
        const double b2 = w2.norm();
        const bool keep = b2 > 1e-14 * scale;
        beta.push_back(keep ? b2 : 0.0);
        q_used.conservativeResize(Eigen::NoChange, j + 2);
        q_used.col(j + 1) = keep ? Vector(w2 / b2) : Vector::Zero(n_c);
        core = dense::svd_full(bidiagonal(j + 1, j + 2));
      } else {
        core = dense::svd_full(bidiagonal(j + 1, j + 1));
      }
      const Vector& lam = core.lambda;
      Eigen::Index p_eff = p;
      if (sv_cut && lam(0) > 0.0) {
        for (Eigen::Index i = 0; i < std::min<Eigen::Index>(p, lam.size()); ++i) {
          if (lam(i) / lam(0) <= *sv_cut) {
            p_eff = i + 1;
            break;
          }
        }
      }
      bool converged = false;
      if (j >= p_eff) {
        converged = true;
        for (Eigen::Index i = 0; i < p_eff; ++i) {
          const double prev = i < prev_lambda.size() ? prev_lambda(i) : 0.0;
          const double cur = lam(i);
          const double rel = cur > 0.0 ? std::abs(cur - prev) / cur : (prev == 0.0 ? 0.0 : 1.0);
          if (rel > eps_sv) {
            converged = false;
            break;
          }
        }
      }
      prev_lambda = lam;
      if (converged || full) {
        out.svd = lift(core, p_basis.leftCols(j + 1), q_used, p_eff);
        out.rank = static_cast<int>(out.svd.rank());
        out.converged = converged || full;
        out.exhausted = full && !converged;
        return out;
      }
    }
  }
}

// Randomized sketches ------------------------------------------------------------

TruncatedSvd tsvd_2view(const LinearOp& a, int p, int l, std::uint64_t seed,
                        const std::optional<Matrix>& omega_prefix) {
  const Eigen::Index n_r = a.rows();
  const Eigen::Index n_c = a.cols();
  require(n_r >= n_c, "tsvd_2view: operator must have rows >= cols (transpose it first)");
  require(p >= 1 && l >= 0 && p + l <= n_c, "tsvd_2view: need p >= 1, l >= 0, p + l <= cols");
  const Eigen::Index width = p + l;

  const Matrix omega = sample_block(n_c, width, seed, kOmegaStream, omega_prefix);
  const Matrix y = a.apply(omega);
  const Matrix q = dense::qr_thin(y).q;
  const Matrix bt = a.apply_transpose(q);  // n_c x width
  // B^T = V Lambda Uhat^T
  const auto core = dense::svd_full(bt);
  TruncatedSvd out;
  out.u = q * core.v.leftCols(p);
  out.lambda = core.lambda.head(p);
  out.v = core.u.leftCols(p);
  return out;
}

TruncatedSvd tsvd_1view(const LinearOp& a, int p, int l1, int l2, std::uint64_t seed,
                        const OneViewPrefixes& prefixes, bool orthogonalize_samples,
                        int threads) {
  const Eigen::Index n_r = a.rows();
  const Eigen::Index n_c = a.cols();
  require(n_r >= n_c, "tsvd_1view: operator must have rows >= cols (transpose it first)");
  require(p >= 1 && l1 >= 0 && l2 >= l1, "tsvd_1view: need p >= 1 and l2 >= l1 >= 0");
  require(p + l1 <= n_c && p + l2 <= n_r, "tsvd_1view: sketch wider than the operator");
  const Eigen::Index k1 = p + l1;
  const Eigen::Index k2 = p + l2;

  Matrix omega = sample_block(n_c, k1, seed, kOmegaStream, prefixes.omega);
  Matrix psi_t = sample_block(n_r, k2, seed, kPsiStream, prefixes.psi_t);
  if (orthogonalize_samples) {
    omega = dense::orth(omega);
    psi_t = dense::orth(psi_t);
  }

  Matrix y, z_t;
  if (threads > 1) {
    auto adjoint = std::async(std::launch::async, [&] { return a.apply_transpose(psi_t); });
    y = a.apply(omega);
    z_t = adjoint.get();
  } else {
    y = a.apply(omega);
    z_t = a.apply_transpose(psi_t);
  }

  const Matrix q = dense::qr_thin(y).q;              // n_r x k1
  const auto inner = dense::qr_thin(psi_t.transpose() * q);  // (k2 x k1) = Qhat Rhat
  const Vector rdiag = dense::svd_full(inner.r).lambda;
  const double cond = rdiag(rdiag.size() - 1) > 0.0
                          ? rdiag(0) / rdiag(rdiag.size() - 1)
                          : std::numeric_limits<double>::infinity();
  if (!(cond <= 1e12)) {
    std::ostringstream os;
    os << "tsvd_1view: core triangle is ill-conditioned (condition " << cond
       << "); increase l2";
    throw NumericalError(os.str());
  }
  // X = Rhat^{-1} Qhat^T Z with Z = (Z^T)^T of size k2 x n_c.
  const Matrix x = dense::solve_triangular(inner.r, inner.q.transpose() * z_t.transpose(),
                                           dense::Triangle::upper);
  const auto core = dense::svd_full(x);  // k1 x n_c
  TruncatedSvd out;
  out.u = q * core.u.leftCols(p);
  out.lambda = core.lambda.head(p);
  out.v = core.v.leftCols(p);
  return out;
}

SubspaceResult subspace_iteration(const LinearOp& a, int p, double eps_sv, const Matrix& v0,
                                  int max_iterations) {
  require(p >= 1 && p <= std::min(a.rows(), a.cols()), "subspace_iteration: bad rank");
  require(v0.rows() == a.cols() && v0.cols() == p, "subspace_iteration: V0 shape");
  require(dense::orthonormality_defect(v0) <= 1e-8, "subspace_iteration: V0 not orthonormal");
  require(max_iterations >= 1, "subspace_iteration: max_iterations must be >= 1");

  SubspaceResult out;
  Matrix v = v0;
  Matrix u = a.apply(v);
  // Starting estimates from U^0 = A V^0; no extra operator access.
  Vector prev = dense::svd_full(u).lambda;
  Vector lam = prev;
  for (int j = 1; j <= max_iterations; ++j) {
    out.iterations = j;
    const Matrix c = a.apply_transpose(u);
    const auto qr = dense::qr_thin(c);
    const auto core = dense::svd_full(qr.r);
    v = qr.q * core.u;
    u = a.apply(v);
    lam = core.lambda.cwiseMax(0.0).cwiseSqrt();
    bool converged = true;
    for (Eigen::Index i = 0; i < p; ++i) {
      const double rel = lam(i) > 0.0 ? std::abs(lam(i) - prev(i)) / lam(i)
                                      : (prev(i) == 0.0 ? 0.0 : 1.0);
      if (rel > eps_sv) {
        converged = false;
        break;
      }
    }
    prev = lam;
    if (converged) {
      out.converged = true;
      break;
    }
  }
  // Left factor from the SVD of U^j = A V^j; V is rotated to keep the
  // triplets paired.
  const auto left = dense::svd_full(u);
  out.svd.u = left.u;
  out.svd.v = v * left.v;
  out.svd.lambda = lam;
  return out;
}

TruncatedSvd tsvd_2view_voronin(const LinearOp& a, int p, int l, std::uint64_t seed) {
  const Eigen::Index n_r = a.rows();
  const Eigen::Index n_c = a.cols();
  require(n_r >= n_c, "tsvd_2view_voronin: operator must have rows >= cols");
  require(p >= 1 && l >= 0 && p + l <= n_c, "tsvd_2view_voronin: need p + l <= cols");
  const Eigen::Index width = p + l;

  const Matrix omega = gaussian_matrix(n_c, width, seed, kOmegaStream);
  const Matrix q = dense::qr_thin(a.apply(omega)).q;
  const auto bqr = dense::qr_thin(a.apply_transpose(q));  // B^T = Qhat Rhat
  // Rhat = Vhat Lambda Uhat^T
  const auto core = dense::svd_full(bqr.r);
  TruncatedSvd out;
  out.u = q * core.v.leftCols(p);
  out.lambda = core.lambda.head(p);
  out.v = bqr.q * core.u.leftCols(p);
  return out;
}

Matrix build_reuse_samples(const TruncatedSvd& prev, Eigen::Index target_width,
                           SampleSpace space, std::uint64_t seed, std::uint64_t stream) {
  require(prev.rank() <= target_width, "build_reuse_samples: previous rank exceeds width");
  const Matrix& basis = space == SampleSpace::right ? prev.v : prev.u;
  return sample_block(basis.rows(), target_width, seed, stream, basis);
}

// Dispatch -----------------------------------------------------------------------

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::lanczos: return "lanczos";
    case Estimator::two_view: return "two_view";
    case Estimator::two_view_reuse: return "two_view_reuse";
    case Estimator::one_view: return "one_view";
    case Estimator::one_view_reuse: return "one_view_reuse";
    case Estimator::subspace_iter: return "subspace_iter";
    case Estimator::two_view_voronin: return "two_view_voronin";
  }
  return "unknown";
}

Estimator estimator_from_string(const std::string& name) {
  for (auto e : {Estimator::lanczos, Estimator::two_view, Estimator::two_view_reuse,
                 Estimator::one_view, Estimator::one_view_reuse, Estimator::subspace_iter,
                 Estimator::two_view_voronin}) {
    if (to_string(e) == name) return e;
  }
  throw std::invalid_argument("unknown estimator '" + name + "'");
}

bool uses_reuse(Estimator e) {
  return e == Estimator::two_view_reuse || e == Estimator::one_view_reuse;
}

SketchOrientation::SketchOrientation(const LinearOp& a)
    : a_(a), view_(a), transposed_(a.rows() < a.cols()) {}

EstimateResult estimate(const LinearOp& a, const EstimateRequest& req) {
  const Eigen::Index kmax = std::min(a.rows(), a.cols());
  require(kmax >= 1, "estimate: empty operator");
  const SketchConfig& cfg = req.sketch;
  const int p = static_cast<int>(std::clamp<Eigen::Index>(cfg.p, 1, kmax));

  EstimateResult out;
  out.rank_requested = p;
  switch (req.method) {
    case Estimator::lanczos: {
      auto r = tsvd_lanczos(a, p, cfg.eps_sv, req.sv_cut, cfg.seed);
      out.svd = std::move(r.svd);
      out.lanczos_iterations = r.iterations;
      out.converged = r.converged;
      out.exhausted = r.exhausted;
      return out;
    }
    case Estimator::subspace_iter: {
      const Matrix v0 = dense::orth(gaussian_matrix(a.cols(), p, cfg.seed, kOmegaStream));
      auto r = subspace_iteration(a, p, cfg.eps_sv, v0, cfg.max_subspace_iterations);
      out.svd = std::move(r.svd);
      out.subspace_iterations = r.iterations;
      out.converged = r.converged;
      out.sketch_width = p;
      return out;
    }
    default:
      break;
  }

  const SketchOrientation orient(a);
  const LinearOp& op = orient.op();
  std::optional<TruncatedSvd> prev;
  if (uses_reuse(req.method) && req.previous && req.previous->rank() > 0) {
    prev = orient.transposed() ? req.previous->transposed() : *req.previous;
  }

  switch (req.method) {
    case Estimator::two_view:
    case Estimator::two_view_reuse: {
      const int l = static_cast<int>(std::min<Eigen::Index>(cfg.l, op.cols() - p));
      std::optional<Matrix> prefix;
      if (prev) {
        prefix = build_reuse_samples(prev->truncated(p + l), p + l, SampleSpace::right,
                                     cfg.seed, kOmegaStream);
      }
      out.svd = orient.restore(tsvd_2view(op, p, l, cfg.seed, prefix));
      out.sketch_width = p + l;
      return out;
    }
    case Estimator::one_view:
    case Estimator::one_view_reuse: {
      const int l1 = static_cast<int>(std::min<Eigen::Index>(cfg.l1, op.cols() - p));
      const int l2 = static_cast<int>(
          std::min<Eigen::Index>(std::max(cfg.l2, l1), op.rows() - p));
      OneViewPrefixes prefixes;
      if (prev) {
        prefixes.omega = build_reuse_samples(prev->truncated(p + l1), p + l1,
                                             SampleSpace::right, cfg.seed, kOmegaStream);
        prefixes.psi_t = build_reuse_samples(prev->truncated(p + l2), p + l2,
                                             SampleSpace::left, cfg.seed, kPsiStream);
      }
      out.svd = orient.restore(tsvd_1view(op, p, l1, l2, cfg.seed, prefixes,
                                          cfg.orthogonalize_samples, cfg.threads));
      out.sketch_width = p + l1;
      return out;
    }
    case Estimator::two_view_voronin: {
      const int l = static_cast<int>(std::min<Eigen::Index>(cfg.l, op.cols() - p));
      out.svd = orient.restore(tsvd_2view_voronin(op, p, l, cfg.seed));
      out.sketch_width = p + l;
      return out;
    }
    default:
      break;
  }
  throw std::logic_error("estimate: unhandled estimator");
}

}  // namespace tsvdlm::tsvd
