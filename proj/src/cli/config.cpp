#include "tsvdlm/cli/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace tsvdlm::cli {

namespace {

namespace pt = boost::property_tree;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
T parse_number(const std::string& field, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = first + text.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    throw ConfigError(field + ": cannot parse '" + text + "' as a number");
  }
  return v;
}

bool parse_bool(const std::string& field, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(field + ": expected true or false, got '" + text + "'");
}

struct Field {
  std::string section;
  std::string key;
  std::string doc;
  std::function<std::string(const RunConfig&)> render;
  std::function<void(RunConfig&, const std::string& field, const std::string&)> parse;
};

template <class T>
Field number(std::string section, std::string key, std::string doc,
             std::function<T&(RunConfig&)> ref) {
  Field f{std::move(section), std::move(key), std::move(doc), {}, {}};
  f.render = [ref](const RunConfig& c) {
    T& v = ref(const_cast<RunConfig&>(c));
    if constexpr (std::is_floating_point_v<T>) {
      return format_double(v);
    } else {
      return std::to_string(v);
    }
  };
  f.parse = [ref](RunConfig& c, const std::string& field, const std::string& text) {
    ref(c) = parse_number<T>(field, text);
  };
  return f;
}

Field boolean(std::string section, std::string key, std::string doc,
              std::function<bool&(RunConfig&)> ref) {
  Field f{std::move(section), std::move(key), std::move(doc), {}, {}};
  f.render = [ref](const RunConfig& c) {
    return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false");
  };
  f.parse = [ref](RunConfig& c, const std::string& field, const std::string& text) {
    ref(c) = parse_bool(field, text);
  };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> t;
    auto& m = t;
    // model
    m.push_back(number<int>("model", "nx", "grid columns",
                            [](RunConfig& c) -> int& { return c.model.nx; }));
    m.push_back(number<int>("model", "nz", "grid rows (row 0 at the top)",
                            [](RunConfig& c) -> int& { return c.model.nz; }));
    m.push_back(number<int>("model", "n_steps", "production time steps",
                            [](RunConfig& c) -> int& { return c.model.n_steps; }));
    m.push_back(number<double>("model", "dt", "time step length",
                               [](RunConfig& c) -> double& { return c.model.dt; }));
    m.push_back(number<double>("model", "storage", "storage coefficient per cell",
                               [](RunConfig& c) -> double& { return c.model.storage; }));
    m.push_back(number<double>("model", "beta", "nonlinearity: kappa(u) = 1 + beta u",
                               [](RunConfig& c) -> double& { return c.model.beta; }));
    m.push_back(number<double>("model", "m_ref", "reference log-conductivity",
                               [](RunConfig& c) -> double& { return c.model.m_ref; }));
    m.push_back(number<double>("model", "u_top", "Dirichlet value above the top row",
                               [](RunConfig& c) -> double& { return c.model.u_top; }));
    m.push_back(number<double>("model", "background_inflow", "inflow per bottom cell",
                               [](RunConfig& c) -> double& { return c.model.background_inflow; }));
    m.push_back(number<double>("model", "hot_inflow", "inflow per bottom cell in the hot zone",
                               [](RunConfig& c) -> double& { return c.model.hot_inflow; }));
    m.push_back(number<int>("model", "hot_columns", "width of the hot zone from the left edge",
                            [](RunConfig& c) -> int& { return c.model.hot_columns; }));
    m.push_back(number<int>("model", "n_producers", "producer cells",
                            [](RunConfig& c) -> int& { return c.model.n_producers; }));
    m.push_back(number<double>("model", "production_rate", "sink per producer cell",
                               [](RunConfig& c) -> double& { return c.model.production_rate; }));
    m.push_back(number<int>("model", "n_obs_wells", "observation wells (steady probes)",
                            [](RunConfig& c) -> int& { return c.model.n_obs_wells; }));
    m.push_back(number<int>("model", "obs_depth_stride", "probe spacing down each well",
                            [](RunConfig& c) -> int& { return c.model.obs_depth_stride; }));
    m.push_back(number<double>("model", "newton_tol_steady", "steady Newton tolerance (max norm)",
                               [](RunConfig& c) -> double& { return c.model.newton_tol_steady; }));
    m.push_back(number<double>("model", "newton_tol_step", "transient Newton tolerance",
                               [](RunConfig& c) -> double& { return c.model.newton_tol_step; }));
    m.push_back(number<int>("model", "newton_max_iter", "Newton iterations per solve",
                            [](RunConfig& c) -> int& { return c.model.newton_max_iter; }));
    // twin
    m.push_back(number<double>("twin", "noise_sigma", "observation noise standard deviation",
                               [](RunConfig& c) -> double& { return c.twin.noise_sigma; }));
    m.push_back(number<std::uint64_t>(
        "twin", "truth_seed", "seed of the synthetic true field",
        [](RunConfig& c) -> std::uint64_t& { return c.twin.truth_seed; }));
    m.push_back(number<std::uint64_t>(
        "twin", "noise_seed", "seed of the observation noise",
        [](RunConfig& c) -> std::uint64_t& { return c.twin.noise_seed; }));
    // problem
    m.push_back(number<double>("problem", "mu", "regularization weight",
                               [](RunConfig& c) -> double& { return c.problem.mu; }));
    m.push_back(number<double>("problem", "m_prior", "prior value of every parameter",
                               [](RunConfig& c) -> double& { return c.problem.m_prior; }));
    m.push_back(number<double>("problem", "lower_bound", "parameter lower bound",
                               [](RunConfig& c) -> double& { return c.model.lower_bound; }));
    m.push_back(number<double>("problem", "upper_bound", "parameter upper bound",
                               [](RunConfig& c) -> double& { return c.model.upper_bound; }));
    m.push_back(number<double>(
        "problem", "regularization_shift", "weight of the identity block in W",
        [](RunConfig& c) -> double& { return c.problem.regularization_shift; }));
    // method
    {
      Field f{"method", "estimator",
              "lanczos | two_view | two_view_reuse | one_view | one_view_reuse | "
              "subspace_iter | two_view_voronin",
              {}, {}};
      f.render = [](const RunConfig& c) { return tsvd::to_string(c.driver.method); };
      f.parse = [](RunConfig& c, const std::string& field, const std::string& text) {
        try {
          c.driver.method = tsvd::estimator_from_string(text);
        } catch (const std::invalid_argument& e) {
          throw ConfigError(field + ": " + e.what());
        }
      };
      m.push_back(f);
    }
    m.push_back(number<int>("method", "l", "2-view oversampling",
                            [](RunConfig& c) -> int& { return c.driver.sketch.l; }));
    m.push_back(number<int>("method", "l1", "1-view range oversampling",
                            [](RunConfig& c) -> int& { return c.driver.sketch.l1; }));
    m.push_back(number<int>("method", "l2", "1-view co-range oversampling",
                            [](RunConfig& c) -> int& { return c.driver.sketch.l2; }));
    m.push_back(number<double>("method", "eps_sv", "Lanczos/subspace convergence tolerance",
                               [](RunConfig& c) -> double& { return c.driver.sketch.eps_sv; }));
    m.push_back(number<std::uint64_t>(
        "method", "seed", "sketch seed (replicate k uses seed + k)",
        [](RunConfig& c) -> std::uint64_t& { return c.driver.sketch.seed; }));
    m.push_back(boolean("method", "orthogonalize_samples", "orthogonalize 1-view samples",
                        [](RunConfig& c) -> bool& { return c.driver.sketch.orthogonalize_samples; }));
    m.push_back(boolean(
        "method", "allow_equal_oversampling", "permit l1 = l2",
        [](RunConfig& c) -> bool& { return c.driver.sketch.allow_equal_oversampling; }));
    m.push_back(number<int>(
        "method", "max_subspace_iterations", "subspace iteration cap",
        [](RunConfig& c) -> int& { return c.driver.sketch.max_subspace_iterations; }));
    // schedule
    {
      Field f{"schedule", "kind", "linear | sv_cut", {}, {}};
      f.render = [](const RunConfig& c) {
        return std::string(c.driver.schedule.kind == tsvd::ScheduleKind::linear ? "linear"
                                                                                 : "sv_cut");
      };
      f.parse = [](RunConfig& c, const std::string& field, const std::string& text) {
        if (text == "linear") {
          c.driver.schedule.kind = tsvd::ScheduleKind::linear;
        } else if (text == "sv_cut") {
          c.driver.schedule.kind = tsvd::ScheduleKind::sv_cut;
        } else {
          throw ConfigError(field + ": expected linear or sv_cut, got '" + text + "'");
        }
      };
      m.push_back(f);
    }
    m.push_back(number<int>("schedule", "p_init", "rank at the first LM iteration",
                            [](RunConfig& c) -> int& { return c.driver.schedule.p_init; }));
    m.push_back(number<int>("schedule", "p_step", "rank increment per accepted iteration",
                            [](RunConfig& c) -> int& { return c.driver.schedule.p_step; }));
    m.push_back(number<double>(
        "schedule", "sv_cut_init", "sv-cut ratio at the first iteration",
        [](RunConfig& c) -> double& { return c.driver.schedule.sv_cut_init; }));
    m.push_back(number<double>(
        "schedule", "sv_cut_factor", "sv-cut multiplier per iteration",
        [](RunConfig& c) -> double& { return c.driver.schedule.sv_cut_factor; }));
    m.push_back(number<int>("schedule", "p_max", "rank cap",
                            [](RunConfig& c) -> int& { return c.driver.schedule.p_max; }));
    // driver
    m.push_back(number<int>("driver", "iter_max", "accepted LM iterations",
                            [](RunConfig& c) -> int& { return c.driver.iter_max; }));
    m.push_back(number<double>("driver", "eps_m", "step-size convergence tolerance",
                               [](RunConfig& c) -> double& { return c.driver.eps_m; }));
    m.push_back(number<double>("driver", "gamma0", "initial LM damping",
                               [](RunConfig& c) -> double& { return c.driver.damping.gamma0; }));
    m.push_back(number<double>("driver", "gamma_floor", "lower limit on damping (0 = none)",
                               [](RunConfig& c) -> double& { return c.driver.damping.floor; }));
    m.push_back(number<int>(
        "driver", "max_consecutive_rejections", "stop after this many rejected candidates",
        [](RunConfig& c) -> int& { return c.driver.max_consecutive_rejections; }));
    // data, output, replicates
    {
      Field f{"data", "observations", "observation CSV (relative to the output dir)", {}, {}};
      f.render = [](const RunConfig& c) { return c.data.observations; };
      f.parse = [](RunConfig& c, const std::string&, const std::string& text) {
        c.data.observations = text;
      };
      m.push_back(f);
    }
    {
      Field f{"output", "dir", "output directory", {}, {}};
      f.render = [](const RunConfig& c) { return c.output.dir; };
      f.parse = [](RunConfig& c, const std::string&, const std::string& text) {
        c.output.dir = text;
      };
      m.push_back(f);
    }
    m.push_back(number<int>("replicates", "n_runs", "independent inversions",
                            [](RunConfig& c) -> int& { return c.replicates.n_runs; }));
    {
      Field f{"replicates", "seeds", "comma-separated seeds; empty = seed + k", {}, {}};
      f.render = [](const RunConfig& c) {
        std::string s;
        for (std::size_t i = 0; i < c.replicates.seeds.size(); ++i) {
          if (i) s += ",";
          s += std::to_string(c.replicates.seeds[i]);
        }
        return s;
      };
      f.parse = [](RunConfig& c, const std::string& field, const std::string& text) {
        c.replicates.seeds.clear();
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
          const auto b = item.find_first_not_of(" \t");
          const auto e = item.find_last_not_of(" \t");
          if (b == std::string::npos) continue;
          c.replicates.seeds.push_back(
              parse_number<std::uint64_t>(field, item.substr(b, e - b + 1)));
        }
      };
      m.push_back(f);
    }
    return t;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  const auto& mc = model;
  need(mc.nx >= 2, "model.nx: must be >= 2");
  need(mc.nz >= 2, "model.nz: must be >= 2");
  need(mc.n_steps >= 1, "model.n_steps: must be >= 1");
  need(mc.dt > 0.0, "model.dt: must be positive");
  need(mc.storage > 0.0, "model.storage: must be positive");
  need(mc.beta >= 0.0, "model.beta: must be >= 0");
  need(mc.hot_columns >= 0 && mc.hot_columns <= mc.nx,
       "model.hot_columns: must be within [0, nx]");
  need(mc.n_producers >= 1 && mc.n_producers < mc.nx,
       "model.n_producers: must be within [1, nx - 1]");
  need(mc.n_obs_wells >= 1 && mc.n_obs_wells <= mc.nx,
       "model.n_obs_wells: must be within [1, nx]");
  need(mc.obs_depth_stride >= 1, "model.obs_depth_stride: must be >= 1");
  need(mc.newton_tol_steady > 0.0, "model.newton_tol_steady: must be positive");
  need(mc.newton_tol_step > 0.0, "model.newton_tol_step: must be positive");
  need(mc.newton_max_iter >= 1, "model.newton_max_iter: must be >= 1");
  need(twin.noise_sigma >= 0.0, "twin.noise_sigma: must be >= 0");
  need(problem.mu > 0.0, "problem.mu: must be positive");
  need(mc.lower_bound < mc.upper_bound, "problem.lower_bound: must be below upper_bound");
  need(problem.m_prior >= mc.lower_bound && problem.m_prior <= mc.upper_bound,
       "problem.m_prior: must lie within the bounds");
  need(problem.regularization_shift > 0.0, "problem.regularization_shift: must be positive");
  try {
    tsvd::validate(driver.sketch);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("method: ") + e.what());
  }
  const auto& s = driver.schedule;
  need(s.p_init >= 1, "schedule.p_init: must be >= 1");
  need(s.p_step >= 0, "schedule.p_step: must be >= 0");
  need(s.p_max >= 1, "schedule.p_max: must be >= 1");
  need(s.sv_cut_init > 0.0 && s.sv_cut_init <= 1.0, "schedule.sv_cut_init: must be in (0, 1]");
  need(s.sv_cut_factor > 0.0 && s.sv_cut_factor <= 1.0,
       "schedule.sv_cut_factor: must be in (0, 1]");
  need(driver.iter_max >= 0, "driver.iter_max: must be >= 0");
  need(driver.eps_m > 0.0, "driver.eps_m: must be positive");
  need(driver.damping.gamma0 > 0.0, "driver.gamma0: must be positive");
  need(driver.damping.floor >= 0.0, "driver.gamma_floor: must be >= 0");
  need(driver.max_consecutive_rejections >= 1,
       "driver.max_consecutive_rejections: must be >= 1");
  need(!data.observations.empty(), "data.observations: must not be empty");
  need(!output.dir.empty(), "output.dir: must not be empty");
  need(replicates.n_runs >= 1, "replicates.n_runs: must be >= 1");
  need(replicates.seeds.empty() ||
           static_cast<int>(replicates.seeds.size()) == replicates.n_runs,
       "replicates.seeds: must list exactly n_runs seeds when given");
}

std::vector<std::uint64_t> RunConfig::replicate_seeds() const {
  if (!replicates.seeds.empty()) return replicates.seeds;
  std::vector<std::uint64_t> out;
  for (int k = 0; k < replicates.n_runs; ++k) {
    out.push_back(driver.sketch.seed + static_cast<std::uint64_t>(k));
  }
  return out;
}

RunConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::map<std::string, std::map<std::string, const Field*>> index;
  for (const auto& f : fields()) index[f.section][f.key] = &f;

  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    const auto sec = index.find(section);
    if (sec == index.end()) throw ConfigError(section + ": unknown section");
    if (!body.data().empty()) throw ConfigError(section + ": expected a [section]");
    for (const auto& [key, node] : body) {
      const std::string field = section + "." + key;
      const auto it = sec->second.find(key);
      if (it == sec->second.end()) throw ConfigError(field + ": unknown key");
      it->second->parse(cfg, field, trim(node.data()));
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string render_config(const RunConfig& config, bool with_comments) {
  std::ostringstream os;
  std::string current;
  for (const auto& f : fields()) {
    if (f.section != current) {
      if (!current.empty()) os << "\n";
      os << "[" << f.section << "]\n";
      current = f.section;
    }
    if (with_comments) os << "; " << f.doc << "\n";
    os << f.key << " = " << f.render(config) << "\n";
  }
  return os.str();
}

}  // namespace tsvdlm::cli
