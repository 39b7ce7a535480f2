#include "tsvdlm/cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace tsvdlm::cli {

namespace {

using nlohmann::json;

constexpr const char* kToolVersion = "0.1.0";

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

fs::path resolve(const RunConfig& config, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : fs::path(config.output.dir) / path;
}

std::string grid_csv(const forward::TimeSteppingModel& model, const Vector& m) {
  std::ostringstream os;
  forward::write_parameter_grid_csv(os, model, m);
  return os.str();
}

json objective_json(const inversion::Objective& o) {
  return {{"Phi", o.phi}, {"Phi_d", o.phi_d}, {"Phi_m", o.phi_m}, {"Phi_N", o.phi_n}};
}

json counts_json(const OpCounts& c) {
  return {{"direct_calls", c.forward_calls},
          {"direct_cols", c.forward_cols},
          {"adjoint_calls", c.adjoint_calls},
          {"adjoint_cols", c.adjoint_cols}};
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TwinSetup make_setup(const RunConfig& config, forward::ObservationSet observations) {
  TwinSetup s;
  auto model = std::make_shared<forward::TimeSteppingModel>(config.model);
  const auto& sites = model->observation_sites();
  if (observations.sites.size() != sites.size()) {
    throw std::runtime_error("observations: file has " +
                             std::to_string(observations.sites.size()) +
                             " rows but the model defines " + std::to_string(sites.size()));
  }
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const auto& a = observations.sites[i];
    const auto& b = sites[i];
    if (a.kind != b.kind || a.cell != b.cell || a.time_index != b.time_index) {
      throw std::runtime_error("observations: row " + std::to_string(i) +
                               " does not match the model's observation layout");
    }
  }
  const auto reg = inversion::build_regularizer(model->n_cells(), model->connections(),
                                                config.problem.regularization_shift);
  auto& p = s.problem;
  p.d_obs = observations.values;
  p.gamma_d_diag = observations.sigma.array().square();
  p.m_pr = Vector::Constant(model->n_params(), config.problem.m_prior);
  p.whitener = std::make_shared<Whitener>(reg.l_inv);
  p.mu = config.problem.mu;
  p.lower = model->lower_bounds();
  p.upper = model->upper_bounds();
  p.validate();
  s.model = std::move(model);
  s.observations = std::move(observations);
  return s;
}

std::string problem_hash(const RunConfig& config, const forward::ObservationSet& obs) {
  RunConfig c;
  c.model = config.model;
  c.problem = config.problem;
  std::string key = render_config(c);
  // Only the [model] and [problem] sections matter; the rest is defaults.
  std::ostringstream os;
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < obs.values.size(); ++i) {
    os << obs.values(i) << ',' << obs.sigma(i) << ';';
  }
  return hex64(fnv1a(os.str(), fnv1a(key)));
}

std::string convergence_csv(const inversion::RunResult& run) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "iter,trial,Phi,Phi_d,Phi_N,Phi_m,p,gamma,accepted,simulation_failed,"
        "n_direct_cols,n_adjoint_cols,n_simulations\n";
  for (const auto& h : run.state.history) {
    os << h.iter << ',' << h.trial << ',' << h.objective.phi << ',' << h.objective.phi_d
       << ',' << h.objective.phi_n << ',' << h.objective.phi_m << ',' << h.p << ','
       << h.gamma << ',' << (h.accepted ? 1 : 0) << ',' << (h.simulation_failed ? 1 : 0)
       << ',' << h.counts.forward_cols << ',' << h.counts.adjoint_cols << ','
       << h.n_simulations << '\n';
  }
  return os.str();
}

std::string tsvd_csv(const inversion::RunResult& run) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "iter,p_requested,p,lanczos_iterations,excess_iterations,subspace_iterations,"
        "sketch_width,direct_cols,adjoint_cols,lambda_1,lambda_p\n";
  for (const auto& t : run.state.tsvds) {
    const int excess = t.lanczos_iterations > 0 ? t.lanczos_iterations - t.p : 0;
    os << t.iter << ',' << t.p_requested << ',' << t.p << ',' << t.lanczos_iterations << ','
       << excess << ',' << t.subspace_iterations << ',' << t.sketch_width << ','
       << t.counts.forward_cols << ',' << t.counts.adjoint_cols << ','
       << (t.lambda.size() ? t.lambda(0) : 0.0) << ','
       << (t.lambda.size() ? t.lambda(t.lambda.size() - 1) : 0.0) << '\n';
  }
  return os.str();
}

json make_manifest(const RunConfig& config, const std::string& hash, std::uint64_t seed,
                   int replicate, const inversion::RunResult& run, double mu) {
  // The embedded config reproduces this replicate alone.
  RunConfig single = config;
  single.driver.sketch.seed = seed;
  single.replicates = {};
  single.data.observations = fs::absolute(resolve(config, config.data.observations)).string();

  const auto n_d = static_cast<int>(run.state.r.size());
  json j;
  j["tool"] = "tsvdlm";
  j["version"] = kToolVersion;
  j["config"] = render_config(single);
  j["problem_hash"] = hash;
  j["estimator"] = tsvd::to_string(config.driver.method);
  j["seed"] = seed;
  j["replicate"] = replicate;
  j["mu"] = mu;
  j["termination"] = inversion::to_string(run.termination);
  j["accepted_iterations"] = run.state.iter - 1;
  j["final"] = objective_json(run.state.current);
  if (n_d > 0) {
    const auto b = inversion::mismatch_bounds(n_d);
    j["mismatch_bounds"] = {{"N_d", n_d}, {"lo", b.lo}, {"hi", b.hi},
                            {"lo_N", b.lo_n}, {"hi_N", b.hi_n}};
    j["final"]["Phi_N_within_bounds"] =
        run.state.current.phi_n >= b.lo_n && run.state.current.phi_n <= b.hi_n;
  }
  j["counts"] = counts_json(run.counts);
  j["n_simulations"] = run.n_simulations;
  j["wall_seconds"] = run.wall_seconds;
  json hist = json::array();
  for (const auto& h : run.state.history) {
    hist.push_back({{"iter", h.iter},
                    {"trial", h.trial},
                    {"objective", objective_json(h.objective)},
                    {"p", h.p},
                    {"gamma", h.gamma},
                    {"accepted", h.accepted},
                    {"simulation_failed", h.simulation_failed},
                    {"step_norm", h.step_norm},
                    {"counts", counts_json(h.counts)},
                    {"n_simulations", h.n_simulations},
                    {"seconds", {{"simulate", h.t_simulate},
                                 {"sketch", h.t_sketch},
                                 {"update", h.t_update}}}});
  }
  j["history"] = hist;
  json ts = json::array();
  for (const auto& t : run.state.tsvds) {
    ts.push_back({{"iter", t.iter},
                  {"p_requested", t.p_requested},
                  {"p", t.p},
                  {"lanczos_iterations", t.lanczos_iterations},
                  {"subspace_iterations", t.subspace_iterations},
                  {"sketch_width", t.sketch_width},
                  {"counts", counts_json(t.counts)},
                  {"lambda", std::vector<double>(t.lambda.data(),
                                                 t.lambda.data() + t.lambda.size())}});
  }
  j["tsvds"] = ts;
  return j;
}

GenerateTwinResult generate_twin(const RunConfig& config, std::ostream& log) {
  config.validate();
  const forward::TimeSteppingModel model(config.model);
  const Vector truth = forward::make_truth_field(model, config.twin.truth_seed);
  const auto obs = forward::make_observations(model, truth, config.twin.noise_sigma,
                                              config.twin.noise_seed);
  GenerateTwinResult out;
  out.observations = resolve(config, config.data.observations);
  out.truth = fs::path(config.output.dir) / "truth_grid.csv";
  std::ostringstream os;
  forward::write_observations_csv(os, obs);
  write_file_atomic(out.observations, os.str());
  write_file_atomic(out.truth, grid_csv(model, truth));
  if (config.twin.noise_sigma > 0.0) {
    const Vector r = model.simulate(truth).simulated - obs.values;
    out.phi_d_truth = (r / config.twin.noise_sigma).squaredNorm();
  }
  log << "wrote " << out.observations.string() << " (" << obs.values.size()
      << " observations) and " << out.truth.string() << "\n";
  log << "Phi_d(m*) = " << out.phi_d_truth << " with N_d = " << obs.values.size() << "\n";
  return out;
}

int exit_status(inversion::Termination t) {
  switch (t) {
    case inversion::Termination::converged:
    case inversion::Termination::iter_max: return 0;
    case inversion::Termination::stalled: return 4;
    case inversion::Termination::initial_failure: return 5;
  }
  return 1;
}

std::vector<ReplicateOutcome> invert(const RunConfig& config, const InvertOptions& options,
                                     std::ostream& log) {
  config.validate();
  if (options.threads < 1) throw std::invalid_argument("--threads must be >= 1");
  const fs::path obs_path = resolve(config, config.data.observations);
  std::ifstream obs_in(obs_path);
  if (!obs_in) {
    throw std::runtime_error("observations not found at " + obs_path.string() +
                             "; run generate-twin first");
  }
  const auto setup = make_setup(config, forward::read_observations_csv(obs_in));
  const std::string hash = problem_hash(config, setup.observations);
  const auto seeds = config.replicate_seeds();
  const int n = static_cast<int>(seeds.size());

  std::vector<ReplicateOutcome> outcomes(static_cast<std::size_t>(n));
  const fs::path out_dir(config.output.dir);
  // Parallelism goes to replicates when there are several, otherwise to the
  // concurrent 1-view sketches. Neither changes any result.
  const int workers = std::min(options.threads, n);
  const int sketch_threads = n > 1 ? 1 : options.threads;

  std::atomic<int> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  auto work = [&] {
    for (int k = next++; k < n; k = next++) {
      try {
        inversion::DriverConfig dc = config.driver;
        dc.sketch.seed = seeds[static_cast<std::size_t>(k)];
        dc.sketch.threads = sketch_threads;
        inversion::ModelEvaluator evaluator(setup.model);
        auto run = inversion::run_tsvd_lm(setup.problem, evaluator, dc);
        auto& o = outcomes[static_cast<std::size_t>(k)];
        o.seed = dc.sketch.seed;
        o.dir = n > 1 ? out_dir / ("replicate-" + std::to_string(k)) : out_dir;
        const auto manifest = make_manifest(config, hash, o.seed, k, run, config.problem.mu);
        write_file_atomic(o.dir / "manifest.json", manifest.dump(2) + "\n");
        write_file_atomic(o.dir / "convergence.csv", convergence_csv(run));
        write_file_atomic(o.dir / "tsvd.csv", tsvd_csv(run));
        write_file_atomic(o.dir / "final_grid.csv", grid_csv(*setup.model, run.state.m));
        {
          std::lock_guard lock(log_mutex);
          log << "replicate " << k << " seed " << o.seed << ": "
              << inversion::to_string(run.termination) << " after "
              << run.state.iter - 1 << " accepted iterations, Phi = " << run.state.current.phi
              << ", Phi_N = " << run.state.current.phi_n << "\n";
        }
        o.run = std::move(run);
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  if (n > 1) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "stat,Phi,Phi_d,Phi_m,Phi_N\n";
    auto column = [&](auto get) {
      std::vector<double> v;
      for (const auto& o : outcomes) v.push_back(get(o.run.state.current));
      return v;
    };
    const std::vector<std::vector<double>> cols = {
        column([](const inversion::Objective& x) { return x.phi; }),
        column([](const inversion::Objective& x) { return x.phi_d; }),
        column([](const inversion::Objective& x) { return x.phi_m; }),
        column([](const inversion::Objective& x) { return x.phi_n; })};
    for (const char* stat : {"ave", "min", "max"}) {
      os << stat;
      for (const auto& c : cols) {
        double v = 0.0;
        if (std::string(stat) == "ave") {
          for (double x : c) v += x;
          v /= static_cast<double>(c.size());
        } else if (std::string(stat) == "min") {
          v = *std::min_element(c.begin(), c.end());
        } else {
          v = *std::max_element(c.begin(), c.end());
        }
        os << ',' << v;
      }
      os << '\n';
    }
    write_file_atomic(out_dir / "summary.csv", os.str());
    log << "wrote " << (out_dir / "summary.csv").string() << "\n";
  }
  return outcomes;
}

CompareReport compare(const std::vector<fs::path>& manifests) {
  if (manifests.size() < 2) throw std::invalid_argument("compare: need at least two manifests");
  std::vector<json> ms;
  for (const auto& p : manifests) {
    try {
      ms.push_back(json::parse(read_file(p)));
    } catch (const json::exception& e) {
      throw std::runtime_error("compare: " + p.string() + ": " + e.what());
    }
  }
  const std::string hash = ms.front().at("problem_hash");
  for (std::size_t i = 1; i < ms.size(); ++i) {
    if (ms[i].at("problem_hash") != hash) {
      throw std::runtime_error("compare: " + manifests[i].string() +
                               " belongs to a different problem (hash " +
                               ms[i].at("problem_hash").get<std::string>() + " vs " + hash + ")");
    }
  }

  struct Row {
    std::string name, estimator, termination;
    std::uint64_t seed;
    int iterations;
    double phi, phi_d, phi_m, phi_n;
    bool within;
    long sims, direct, adjoint;
    double wall;
  };
  std::vector<Row> rows;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const auto& m = ms[i];
    const auto& f = m.at("final");
    rows.push_back({manifests[i].string(), m.at("estimator"), m.at("termination"),
                    m.at("seed"), m.at("accepted_iterations"), f.at("Phi"), f.at("Phi_d"),
                    f.at("Phi_m"), f.at("Phi_N"), f.value("Phi_N_within_bounds", false),
                    m.at("n_simulations"), m.at("counts").at("direct_cols"),
                    m.at("counts").at("adjoint_cols"), m.at("wall_seconds")});
  }

  const Row& base = rows.front();
  std::ostringstream csv;
  csv << std::setprecision(17);
  csv << "manifest,estimator,seed,termination,iterations,Phi,Phi_d,Phi_m,Phi_N,"
         "Phi_N_within_bounds,n_simulations,n_direct_cols,n_adjoint_cols,wall_seconds,"
         "delta_Phi,delta_Phi_d,delta_Phi_m,delta_simulations,delta_direct_cols,"
         "delta_adjoint_cols\n";
  for (const auto& r : rows) {
    csv << r.name << ',' << r.estimator << ',' << r.seed << ',' << r.termination << ','
        << r.iterations << ',' << r.phi << ',' << r.phi_d << ',' << r.phi_m << ',' << r.phi_n
        << ',' << (r.within ? 1 : 0) << ',' << r.sims << ',' << r.direct << ',' << r.adjoint
        << ',' << r.wall << ',' << r.phi - base.phi << ',' << r.phi_d - base.phi_d << ','
        << r.phi_m - base.phi_m << ',' << r.sims - base.sims << ','
        << r.direct - base.direct << ',' << r.adjoint - base.adjoint << '\n';
  }

  std::ostringstream tab;
  tab << std::left << std::setw(18) << "estimator" << std::right << std::setw(8) << "seed"
      << std::setw(6) << "iter" << std::setw(12) << "Phi" << std::setw(12) << "Phi_d"
      << std::setw(12) << "Phi_m" << std::setw(8) << "Phi_N" << std::setw(8) << "inN?"
      << std::setw(7) << "sims" << std::setw(9) << "direct" << std::setw(9) << "adjoint"
      << std::setw(10) << "wall[s]" << std::setw(12) << "dPhi" << "\n";
  tab << std::fixed;
  for (const auto& r : rows) {
    tab << std::left << std::setw(18) << r.estimator << std::right << std::setw(8) << r.seed
        << std::setw(6) << r.iterations << std::setprecision(3) << std::setw(12) << r.phi
        << std::setw(12) << r.phi_d << std::setw(12) << r.phi_m << std::setw(8) << r.phi_n
        << std::setw(8) << (r.within ? "yes" : "no") << std::setw(7) << r.sims
        << std::setw(9) << r.direct << std::setw(9) << r.adjoint << std::setprecision(2)
        << std::setw(10) << r.wall << std::setprecision(3) << std::setw(12)
        << r.phi - base.phi << "\n";
  }
  return {csv.str(), tab.str()};
}

}  // namespace tsvdlm::cli
