#include "tsvdlm/cli/commands.hpp"
#include "tsvdlm/cli/config.hpp"

#ifdef TSVDLM_WITH_ORACLE
#include "tsvdlm/cli/oracle_check.hpp"
#endif

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>
#include <optional>

namespace {

using namespace tsvdlm;
using namespace tsvdlm::cli;

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string estimator;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "INI config file (defaults when omitted)");
  cmd->add_option("--out", f.out, "output directory (overrides [output] dir)");
  cmd->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
}

RunConfig load(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (!f.out.empty()) c.output.dir = f.out;
  if (!f.estimator.empty()) {
    try {
      c.driver.method = tsvd::estimator_from_string(f.estimator);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("--estimator: ") + e.what());
    }
  }
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TSVD Levenberg-Marquardt inversion toolkit"};
  app.require_subcommand(1);

  CommonFlags twin_flags, inv_flags, oracle_flags;
  std::string manifest_path;
  std::vector<std::string> compare_inputs;
  std::string compare_out;
  bool print_defaults = false;

  auto* twin = app.add_subcommand("generate-twin", "write synthetic observations and truth grid");
  add_common(twin, twin_flags);
  twin->add_option("--seed", twin_flags.seed, "truth-field seed (overrides [twin] truth_seed)");

  auto* inv = app.add_subcommand("invert", "run TSVD-LM inversions");
  add_common(inv, inv_flags);
  inv->add_option("--seed", inv_flags.seed, "sketch seed (overrides [method] seed)");
  inv->add_option("--estimator", inv_flags.estimator, "TSVD estimator (overrides config)");
  inv->add_option("--manifest", manifest_path, "re-run the config embedded in a manifest")
      ->excludes(inv->get_option("--config"));

  auto* cmp = app.add_subcommand("compare", "tabulate manifests of the same problem");
  cmp->add_option("manifests", compare_inputs, "manifest.json files")->required()->expected(2, -1);
  cmp->add_option("--out", compare_out, "directory for comparison.csv");

  auto* orc = app.add_subcommand("oracle-check", "dense brute-force checks on a small model");
  add_common(orc, oracle_flags);

  auto* cfg = app.add_subcommand("config", "configuration helpers");
  cfg->add_flag("--print-defaults", print_defaults, "print the default config with comments");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*twin) {
      RunConfig c = load(twin_flags);
      if (twin_flags.seed) c.twin.truth_seed = *twin_flags.seed;
      generate_twin(c, std::cout);
      return 0;
    }
    if (*inv) {
      RunConfig c;
      if (!manifest_path.empty()) {
        const auto j = nlohmann::json::parse(read_file(manifest_path));
        c = parse_config(j.at("config").get<std::string>());
        if (!inv_flags.out.empty()) c.output.dir = inv_flags.out;
        if (!inv_flags.estimator.empty()) c.driver.method = tsvd::estimator_from_string(inv_flags.estimator);
      } else {
        c = load(inv_flags);
      }
      if (inv_flags.seed) c.driver.sketch.seed = *inv_flags.seed;
      const auto outcomes = invert(c, {inv_flags.threads}, std::cout);
      int status = 0;
      for (const auto& o : outcomes) status = std::max(status, exit_status(o.run.termination));
      return status;
    }
    if (*cmp) {
      std::vector<fs::path> paths(compare_inputs.begin(), compare_inputs.end());
      const auto report = compare(paths);
      std::cout << report.table;
      if (!compare_out.empty()) {
        write_file_atomic(fs::path(compare_out) / "comparison.csv", report.csv);
        std::cout << "wrote " << (fs::path(compare_out) / "comparison.csv").string() << "\n";
      }
      return 0;
    }
    if (*orc) {
#ifdef TSVDLM_WITH_ORACLE
      RunConfig c = oracle_flags.config.empty() ? small_oracle_config() : load(oracle_flags);
      return oracle_check(c, std::cout);
#else
      std::cerr << "oracle-check is not part of this build; use tsvdlm-dev\n";
      return 2;
#endif
    }
    if (*cfg) {
      if (!print_defaults) {
        std::cerr << "config: nothing to do (try --print-defaults)\n";
        return 2;
      }
      std::cout << render_config(RunConfig{}, true);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
