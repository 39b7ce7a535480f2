#include "support.hpp"

#include "tsvdlm/cli/commands.hpp"
#include "tsvdlm/cli/config.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

namespace tsvdlm::cli {
namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(fs::temp_directory_path() / ("tsvdlm-cli-" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

RunConfig small_run(const fs::path& dir) {
  RunConfig c;
  c.model = testing::small_config();
  c.driver.iter_max = 4;
  c.output.dir = dir.string();
  return c;
}

// Config -----------------------------------------------------------------------

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c;
  const std::string text = render_config(c);
  EXPECT_EQ(render_config(parse_config(text)), text);
  EXPECT_EQ(render_config(parse_config(render_config(c, true))), text);
}

TEST(Config, NonDefaultValuesRoundTrip) {
  RunConfig c;
  c.model.nx = 7;
  c.model.beta = 0.123456789012345;
  c.problem.mu = 1.0 / 3.0;
  c.driver.method = tsvd::Estimator::one_view_reuse;
  c.driver.schedule.kind = tsvd::ScheduleKind::sv_cut;
  c.driver.eps_m = 1e-7;
  c.driver.sketch.seed = 18446744073709551615ULL;
  c.replicates.n_runs = 3;
  c.replicates.seeds = {5, 6, 7};
  const auto back = parse_config(render_config(c));
  EXPECT_EQ(back.model.nx, 7);
  EXPECT_EQ(back.model.beta, c.model.beta);
  EXPECT_EQ(back.problem.mu, c.problem.mu);
  EXPECT_EQ(back.driver.method, c.driver.method);
  EXPECT_EQ(back.driver.schedule.kind, c.driver.schedule.kind);
  EXPECT_EQ(back.driver.sketch.seed, c.driver.sketch.seed);
  EXPECT_EQ(back.replicates.seeds, c.replicates.seeds);
  EXPECT_EQ(render_config(back), render_config(c));
}

TEST(Config, PartialFileKeepsDefaults) {
  const auto c = parse_config("[problem]\n; comment\nmu = 2\n\n[driver]\niter_max = 7\n");
  EXPECT_EQ(c.problem.mu, 2.0);
  EXPECT_EQ(c.driver.iter_max, 7);
  EXPECT_EQ(c.model.nx, RunConfig{}.model.nx);
}

void expect_config_error(const std::string& text, const std::string& field) {
  try {
    parse_config(text).validate();
    FAIL() << "expected ConfigError for " << text;
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind(field, 0), 0u) << e.what();
  }
}

TEST(Config, ErrorsNameTheField) {
  expect_config_error("[model]\nnxx = 3\n", "model.nxx");
  expect_config_error("[nosuch]\na = 1\n", "nosuch");
  expect_config_error("[model]\nnx = three\n", "model.nx");
  expect_config_error("[problem]\nmu = -1\n", "problem.mu");
  expect_config_error("[method]\nestimator = power\n", "method.estimator");
  expect_config_error("[twin]\nnoise_sigma = -0.1\n", "twin.noise_sigma");
}

TEST(Config, ReplicateSeeds) {
  RunConfig c;
  c.driver.sketch.seed = 10;
  c.replicates.n_runs = 3;
  EXPECT_EQ(c.replicate_seeds(), (std::vector<std::uint64_t>{10, 11, 12}));
  c.replicates.seeds = {4, 9, 1};
  EXPECT_EQ(c.replicate_seeds(), (std::vector<std::uint64_t>{4, 9, 1}));
  c.replicates.seeds = {4};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, LoadMissingFile) {
  EXPECT_ANY_THROW(load_config("/nonexistent/tsvdlm.ini"));
}

// Commands ---------------------------------------------------------------------------

TEST(Commands, AtomicWriteReplacesContent) {
  TempDir tmp("atomic");
  const auto p = tmp.path() / "sub" / "f.txt";
  write_file_atomic(p, "one");
  write_file_atomic(p, "two");
  EXPECT_EQ(read_file(p), "two");
  std::size_t n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(p.parent_path())) ++n;
  EXPECT_EQ(n, 1u);
}

TEST(Commands, GenerateAndInvertAreDeterministic) {
  TempDir tmp("det");
  const auto c = small_run(tmp.path());
  std::ostringstream log;
  const auto twin = generate_twin(c, log);
  EXPECT_TRUE(fs::exists(twin.observations));
  EXPECT_TRUE(fs::exists(twin.truth));
  EXPECT_GT(twin.phi_d_truth, 0.0);

  auto c2 = c;
  c2.output.dir = (tmp.path() / "b").string();
  c2.data.observations = fs::absolute(twin.observations).string();
  const auto a = invert(c, {}, log);
  const auto b = invert(c2, {}, log);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(read_file(a[0].dir / "convergence.csv"), read_file(b[0].dir / "convergence.csv"));
  EXPECT_EQ(read_file(a[0].dir / "final_grid.csv"), read_file(b[0].dir / "final_grid.csv"));
  EXPECT_EQ(exit_status(a[0].run.termination), 0);

  const auto csv = read_file(a[0].dir / "convergence.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "iter,trial,Phi,Phi_d,Phi_N,Phi_m,p,gamma,accepted,simulation_failed,"
            "n_direct_cols,n_adjoint_cols,n_simulations");
}

TEST(Commands, ManifestRerunReproducesRun) {
  TempDir tmp("rerun");
  auto c = small_run(tmp.path());
  c.driver.method = tsvd::Estimator::two_view;
  std::ostringstream log;
  generate_twin(c, log);
  const auto a = invert(c, {}, log);
  const auto manifest = nlohmann::json::parse(read_file(a[0].dir / "manifest.json"));
  EXPECT_EQ(manifest.at("estimator"), "two_view");
  EXPECT_EQ(manifest.at("history").size(), a[0].run.state.history.size());
  auto again = parse_config(manifest.at("config").get<std::string>());
  again.output.dir = (tmp.path() / "again").string();
  const auto b = invert(again, {}, log);
  EXPECT_EQ(read_file(a[0].dir / "convergence.csv"), read_file(b[0].dir / "convergence.csv"));
  const auto m2 = nlohmann::json::parse(read_file(b[0].dir / "manifest.json"));
  EXPECT_EQ(manifest.at("problem_hash"), m2.at("problem_hash"));
}

TEST(Commands, ThreadCountDoesNotChangeResults) {
  TempDir tmp("threads");
  auto c = small_run(tmp.path());
  c.driver.method = tsvd::Estimator::one_view;
  c.replicates.n_runs = 2;
  std::ostringstream log;
  generate_twin(c, log);
  const auto a = invert(c, {1}, log);
  const std::string first = read_file(a[1].dir / "convergence.csv");
  const auto b = invert(c, {2}, log);
  EXPECT_EQ(read_file(b[1].dir / "convergence.csv"), first);
  EXPECT_TRUE(fs::exists(tmp.path() / "summary.csv"));
  EXPECT_NE(a[0].dir, a[1].dir);
}

TEST(Commands, CompareRefusesDifferentProblems) {
  TempDir tmp("compare");
  auto c = small_run(tmp.path() / "a");
  std::ostringstream log;
  generate_twin(c, log);
  const auto a = invert(c, {}, log);
  auto other = c;
  other.output.dir = (tmp.path() / "b").string();
  other.problem.mu = 1.0;
  other.data.observations = fs::absolute(tmp.path() / "a" / "observations.csv").string();
  const auto b = invert(other, {}, log);
  EXPECT_THROW(compare({a[0].dir / "manifest.json", b[0].dir / "manifest.json"}),
               std::runtime_error);
  const auto same = compare({a[0].dir / "manifest.json", a[0].dir / "manifest.json"});
  EXPECT_NE(same.csv.find('\n'), std::string::npos);
  EXPECT_FALSE(same.table.empty());
}

TEST(Commands, MissingObservationsIsAnError) {
  TempDir tmp("missing");
  std::ostringstream log;
  EXPECT_THROW(invert(small_run(tmp.path()), {}, log), std::runtime_error);
}

TEST(Commands, NoiselessTwin) {
  TempDir tmp("noiseless");
  auto c = small_run(tmp.path());
  c.twin.noise_sigma = 0.0;
  std::ostringstream log;
  const auto twin = generate_twin(c, log);
  EXPECT_EQ(twin.phi_d_truth, 0.0);
  std::ifstream in(twin.observations);
  const auto obs = forward::read_observations_csv(in);
  const forward::TimeSteppingModel model(c.model);
  const Vector clean = model.simulate(forward::make_truth_field(model, 1)).simulated;
  EXPECT_TRUE(obs.values == clean);
  // Zero variances cannot define the data misfit.
  EXPECT_ANY_THROW(invert(c, {}, log));
}

TEST(Commands, ExitStatus) {
  using inversion::Termination;
  EXPECT_EQ(exit_status(Termination::converged), 0);
  EXPECT_EQ(exit_status(Termination::iter_max), 0);
  EXPECT_EQ(exit_status(Termination::stalled), 4);
  EXPECT_EQ(exit_status(Termination::initial_failure), 5);
}

TEST(Commands, ProblemHashTracksObservationsAndSettings) {
  const RunConfig c;
  forward::ObservationSet obs;
  obs.values = Vector::Ones(3);
  obs.sigma = Vector::Ones(3);
  obs.sites.resize(3);
  const auto h = problem_hash(c, obs);
  auto obs2 = obs;
  obs2.values(1) = 1.5;
  EXPECT_NE(h, problem_hash(c, obs2));
  auto c2 = c;
  c2.problem.mu = 4.0;
  EXPECT_NE(h, problem_hash(c2, obs));
  auto c3 = c;
  c3.driver.method = tsvd::Estimator::one_view;
  c3.driver.sketch.seed = 77;
  EXPECT_EQ(h, problem_hash(c3, obs));
}

}  // namespace
}  // namespace tsvdlm::cli
