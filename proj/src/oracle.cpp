#include "tsvdlm/oracle.hpp"

#include <Eigen/Cholesky>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace tsvdlm::oracle {

namespace {

constexpr char kMagic[8] = {'T', 'S', 'V', 'D', 'R', 'E', 'F', '1'};

static_assert(std::endian::native == std::endian::little,
              "reference cache format assumes a little-endian host");

class Fnv1a {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= c[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  template <class T>
  void value(const T& v) {
    bytes(&v, sizeof v);
  }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("reference cache: truncated file");
  return v;
}

void put_matrix(std::ostream& os, const Matrix& a) {
  put<std::int64_t>(os, a.rows());
  put<std::int64_t>(os, a.cols());
  os.write(reinterpret_cast<const char*>(a.data()),
           static_cast<std::streamsize>(sizeof(double) * a.size()));
}

Matrix get_matrix(std::istream& is) {
  const auto rows = get<std::int64_t>(is);
  const auto cols = get<std::int64_t>(is);
  if (rows < 0 || cols < 0 || rows > (1 << 24) || cols > (1 << 24)) {
    throw std::runtime_error("reference cache: corrupt matrix header");
  }
  Matrix a(rows, cols);
  is.read(reinterpret_cast<char*>(a.data()),
          static_cast<std::streamsize>(sizeof(double) * a.size()));
  if (!is) throw std::runtime_error("reference cache: truncated matrix");
  return a;
}

bool same_bits(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

std::string to_string(AssemblyMode mode) {
  return mode == AssemblyMode::finite_difference ? "finite_difference" : "adjoint_columns";
}

Matrix assemble_sensitivity(const forward::TimeSteppingModel& model, const Vector& m,
                            AssemblyMode mode, double eps_scale, int* retries) {
  const int n_m = model.n_params();
  const int n_d = model.n_obs();
  if (m.size() != n_m) throw std::invalid_argument("assemble_sensitivity: m has wrong length");
  if (retries) *retries = 0;

  if (mode == AssemblyMode::adjoint_columns) {
    const auto sim = model.simulate(m);
    // Row i of S is (S^T e_i)^T; all rows in one batch.
    return forward::adjoint_product(model, *sim.trajectory, Matrix::Identity(n_d, n_d))
        .transpose();
  }

  if (!(eps_scale > 0.0)) throw std::invalid_argument("assemble_sensitivity: eps must be > 0");
  Matrix s(n_d, n_m);
  for (int i = 0; i < n_m; ++i) {
    double eps = eps_scale * std::max(1.0, std::abs(m(i)));
    for (int attempt = 0;; ++attempt) {
      try {
        Vector mp = m, mm = m;
        mp(i) += eps;
        mm(i) -= eps;
        s.col(i) = (model.simulate(mp).simulated - model.simulate(mm).simulated) / (2.0 * eps);
        break;
      } catch (const forward::SimulationError&) {
        if (attempt == 1) throw;
        eps /= 10.0;
        if (retries) ++*retries;
      }
    }
  }
  return s;
}

DenseReference assemble_dense_sensitivity(const forward::TimeSteppingModel& model,
                                          const Vector& m, AssemblyMode mode,
                                          const Vector& noise_scale, const Whitener& whitener,
                                          double eps_scale) {
  DenseReference ref;
  ref.mode = mode;
  ref.eps_scale = mode == AssemblyMode::finite_difference ? eps_scale : 0.0;
  ref.s = assemble_sensitivity(model, m, mode, eps_scale, &ref.eps_retries);
  if (noise_scale.size() != ref.s.rows() || whitener.size() != ref.s.cols()) {
    throw std::invalid_argument("assemble_dense_sensitivity: size mismatch");
  }
  // S_D = diag(1/sigma) S L, with S L = (L^T S^T)^T.
  const Matrix sl = whitener.apply_transpose(ref.s.transpose()).transpose();
  ref.s_d = noise_scale.cwiseInverse().asDiagonal() * sl;
  ref.svd = dense::svd_full(ref.s_d);
  const auto& lam = ref.svd.lambda;
  ref.condition = lam(lam.size() - 1) > 0.0 ? lam(0) / lam(lam.size() - 1)
                                            : std::numeric_limits<double>::infinity();
  return ref;
}

Vector solve_full_lm(const DenseReference& ref, const inversion::InverseProblem& problem,
                     const Vector& m_tilde, double gamma, const Vector& r) {
  const Matrix& sd = ref.s_d;
  if (sd.rows() != problem.n_obs() || sd.cols() != problem.n_params()) {
    throw std::invalid_argument("solve_full_lm: reference does not match the problem");
  }
  const double shift = problem.mu + gamma;
  if (!(shift > 0.0)) throw std::invalid_argument("solve_full_lm: mu + gamma must be > 0");
  Matrix a = sd.transpose() * sd;
  a.diagonal().array() += shift;
  const Vector rhs =
      -sd.transpose() * r.cwiseQuotient(problem.noise_scale()) - problem.mu * m_tilde;
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalError("solve_full_lm: system not SPD");
  return llt.solve(rhs);
}

bool identical(const DenseReference& a, const DenseReference& b) {
  return a.mode == b.mode && std::bit_cast<std::uint64_t>(a.eps_scale) ==
                                 std::bit_cast<std::uint64_t>(b.eps_scale) &&
         a.eps_retries == b.eps_retries && same_bits(a.s, b.s) && same_bits(a.s_d, b.s_d) &&
         same_bits(a.svd.u, b.svd.u) && same_bits(a.svd.lambda, b.svd.lambda) &&
         same_bits(a.svd.v, b.svd.v) &&
         std::bit_cast<std::uint64_t>(a.condition) == std::bit_cast<std::uint64_t>(b.condition);
}

// Disk cache -------------------------------------------------------------------

std::string reference_key(const forward::ModelConfig& c, const Vector& m, AssemblyMode mode,
                          double eps_scale) {
  Fnv1a h;
  for (int v : {c.nx, c.nz, c.n_steps, c.hot_columns, c.n_producers, c.n_obs_wells,
                c.obs_depth_stride, c.newton_max_iter}) {
    h.value(v);
  }
  for (double v : {c.dt, c.storage, c.beta, c.m_ref, c.u_top, c.background_inflow,
                   c.hot_inflow, c.production_rate, c.newton_tol_steady, c.newton_tol_step,
                   c.lower_bound, c.upper_bound}) {
    h.value(v);
  }
  h.value(static_cast<std::int64_t>(m.size()));
  h.bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  h.value(static_cast<int>(mode));
  h.value(mode == AssemblyMode::finite_difference ? eps_scale : 0.0);
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h.digest();
  return os.str();
}

void write_reference(std::ostream& os, const DenseReference& ref) {
  os.write(kMagic, sizeof kMagic);
  put<std::int32_t>(os, static_cast<std::int32_t>(ref.mode));
  put<double>(os, ref.eps_scale);
  put<std::int32_t>(os, ref.eps_retries);
  put<double>(os, ref.condition);
  put_matrix(os, ref.s);
  put_matrix(os, ref.s_d);
  put_matrix(os, ref.svd.u);
  put_matrix(os, ref.svd.lambda);
  put_matrix(os, ref.svd.v);
  if (!os) throw std::runtime_error("reference cache: write failed");
}

DenseReference read_reference(std::istream& is) {
  char magic[sizeof kMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("reference cache: bad magic");
  }
  DenseReference ref;
  const auto mode = get<std::int32_t>(is);
  if (mode != 0 && mode != 1) throw std::runtime_error("reference cache: bad mode");
  ref.mode = static_cast<AssemblyMode>(mode);
  ref.eps_scale = get<double>(is);
  ref.eps_retries = get<std::int32_t>(is);
  ref.condition = get<double>(is);
  ref.s = get_matrix(is);
  ref.s_d = get_matrix(is);
  ref.svd.u = get_matrix(is);
  const Matrix lam = get_matrix(is);
  if (lam.cols() != 1) throw std::runtime_error("reference cache: bad spectrum shape");
  ref.svd.lambda = lam.col(0);
  ref.svd.v = get_matrix(is);
  return ref;
}

ReferenceCache::ReferenceCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ReferenceCache::path_for(const std::string& key) const {
  return dir_ / ("ref-" + key + ".bin");
}

std::optional<DenseReference> ReferenceCache::load(const std::string& key) const {
  std::ifstream in(path_for(key), std::ios::binary);
  if (!in) return std::nullopt;
  return read_reference(in);
}

void ReferenceCache::store(const std::string& key, const DenseReference& ref) const {
  const auto final_path = path_for(key);
  auto tmp = final_path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("reference cache: cannot open " + tmp.string());
    write_reference(out, ref);
  }
  std::filesystem::rename(tmp, final_path);
}

}  // namespace tsvdlm::oracle
