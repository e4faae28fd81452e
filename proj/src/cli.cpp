#include "lrmp/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace lrmp {

namespace {

using json = nlohmann::json;

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(what + ": cannot parse '" + item + "' as a number");
    }
  }
  if (out.empty()) throw ConfigError(what + ": empty list");
  return out;
}

NemdDifference parse_difference(const std::string& s) {
  if (s == "forward") return NemdDifference::Forward;
  if (s == "central") return NemdDifference::Central;
  if (s == "richardson") return NemdDifference::Richardson;
  throw ConfigError("nemd_difference must be forward, central or richardson, got '" + s + "'");
}

std::optional<double> parse_center(const std::string& s) {
  if (s == "auto") return std::nullopt;
  return parse_list(s, "center").front();
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : obj.items())
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "'" + (where.empty() ? "" : " in " + where));
}

template <typename T>
T get_as(const json& obj, const std::string& key) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ConfigError("config parse error at line " + std::to_string(line) + ": " + e.what());
  }
  check_keys(j,
             {"model", "overrides", "scheme", "estimators", "dt_grid", "t_final", "t_burn", "t_warmup", "samples",
              "seed", "checkpoints", "eta", "nemd_difference", "coupled", "g_coefficient", "center", "response",
              "reference", "output", "workers", "record_timing"},
             "");

  ExperimentConfig c;
  if (j.contains("model")) c.model = get_as<std::string>(j, "model");
  if (j.contains("overrides")) {
    const json& o = j.at("overrides");
    check_keys(o, {"beta", "gamma", "omega", "masses"}, "overrides");
    if (o.contains("beta")) c.overrides.beta = get_as<double>(o, "beta");
    if (o.contains("gamma")) c.overrides.gamma = get_as<double>(o, "gamma");
    if (o.contains("omega")) c.overrides.omega = get_as<double>(o, "omega");
    if (o.contains("masses")) c.overrides.masses = get_as<std::vector<double>>(o, "masses");
  }
  if (j.contains("scheme")) c.scheme = get_as<std::string>(j, "scheme");
  if (j.contains("estimators"))
    for (const auto& s : get_as<std::vector<std::string>>(j, "estimators")) c.estimators.push_back(EstimatorSpec::parse(s));
  if (j.contains("dt_grid")) c.dt_grid = get_as<std::vector<double>>(j, "dt_grid");
  if (j.contains("t_final")) c.t_final = get_as<double>(j, "t_final");
  if (j.contains("t_burn")) c.t_burn = get_as<double>(j, "t_burn");
  if (j.contains("t_warmup")) c.t_warmup = get_as<double>(j, "t_warmup");
  if (j.contains("samples")) c.n_realizations = get_as<std::int64_t>(j, "samples");
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j, "seed");
  if (j.contains("checkpoints")) c.checkpoints = get_as<std::vector<double>>(j, "checkpoints");
  if (j.contains("eta")) c.eta = get_as<double>(j, "eta");
  if (j.contains("nemd_difference")) c.nemd_difference = parse_difference(get_as<std::string>(j, "nemd_difference"));
  if (j.contains("coupled")) c.coupled = get_as<bool>(j, "coupled");
  if (j.contains("g_coefficient")) c.g_coefficient = get_as<double>(j, "g_coefficient");
  if (j.contains("center")) {
    if (j.at("center").is_string()) c.center = parse_center(get_as<std::string>(j, "center"));
    else c.center = get_as<double>(j, "center");
  }
  if (j.contains("response")) c.response = get_as<std::string>(j, "response");
  if (j.contains("reference")) {
    const json& r = j.at("reference");
    if (r.is_string()) {
      if (get_as<std::string>(j, "reference") != "gaussian-integral")
        throw ConfigError("key 'reference': the only string form is \"gaussian-integral\"");
      c.reference = gaussian_reference(c.model, c.overrides, c.response);
      if (!c.reference) throw ConfigError("key 'reference': no closed form for model '" + c.model + "'");
    } else {
      check_keys(r, {"source", "values"}, "reference");
      ReferenceSpec ref;
      ref.source = get_as<std::string>(r, "source");
      ref.values = get_as<std::map<std::string, double>>(r, "values");
      c.reference = ref;
    }
  }
  c.output_path = j.contains("output") ? get_as<std::string>(j, "output") : "results.csv";
  if (j.contains("workers")) c.workers = get_as<int>(j, "workers");
  if (j.contains("record_timing")) c.record_timing = get_as<bool>(j, "record_timing");
  return c;
}

namespace {

/// Flags shared by `run` and `example`; each overrides the corresponding config value when given.
struct RunFlags {
  std::string scheme, dt_grid, checkpoints, nemd_difference, center, out, masses, response;
  std::vector<std::string> estimators;
  double dt = 0, time = 0, burn = 0, warmup = 0, eta = 0, g = 0, beta = 0, gamma = 0, omega = 0;
  std::int64_t samples = 0;
  std::uint64_t seed = 0;
  int workers = 0;
  bool uncoupled = false, timing = false;
  std::map<std::string, CLI::Option*> opts;

  void attach(CLI::App* app) {
    opts["scheme"] = app->add_option("--scheme", scheme, "default splitting scheme (bac, ..., bacab, abcba, cbabc, cabac)");
    opts["estimator"] = app->add_option("--estimator", estimators, "estimator, repeatable: mp1, mp2, gk1, gk2, nemd, optionally name:scheme");
    opts["dt"] = app->add_option("--dt", dt, "single time step (replaces the grid)");
    opts["dt-grid"] = app->add_option("--dt-grid", dt_grid, "comma-separated time steps");
    opts["samples"] = app->add_option("--samples", samples, "number of independent realizations");
    opts["time"] = app->add_option("--time", time, "physical accumulation time T_final");
    opts["burn-in"] = app->add_option("--burn-in", burn, "physical burn-in time");
    opts["warmup"] = app->add_option("--warmup", warmup, "physical weight warm-up time (MP)");
    opts["seed"] = app->add_option("--seed", seed, "master seed");
    opts["checkpoints"] = app->add_option("--checkpoints", checkpoints, "comma-separated checkpoint times");
    opts["eta"] = app->add_option("--eta", eta, "NEMD forcing strength");
    opts["nemd-difference"] = app->add_option("--nemd-difference", nemd_difference, "forward, central or richardson");
    opts["uncoupled"] = app->add_flag("--uncoupled", uncoupled, "independent noise for the NEMD chains");
    opts["g-coefficient"] = app->add_option("--g-coefficient", g, "c in g = 2 c phi (example2: g = c |p|^2)");
    opts["center"] = app->add_option("--center", center, "GK centre: a number or 'auto'");
    opts["response"] = app->add_option("--response", response, "eta or beta (example2)");
    opts["out"] = app->add_option("--out", out, "output CSV path");
    opts["workers"] = app->add_option("--workers", workers, "worker threads (0 = hardware concurrency)");
    opts["beta"] = app->add_option("--beta", beta, "inverse temperature override");
    opts["gamma"] = app->add_option("--gamma", gamma, "friction override");
    opts["omega"] = app->add_option("--omega", omega, "harmonic stiffness override (examples 1, 2)");
    opts["masses"] = app->add_option("--masses", masses, "comma-separated masses override");
    opts["timing"] = app->add_flag("--timing", timing, "fill the wall_seconds column");
  }

  bool given(const std::string& k) const { return opts.at(k)->count() > 0; }

  void apply(ExperimentConfig& c) const {
    bool model_changed = false;
    if (given("beta")) c.overrides.beta = beta, model_changed = true;
    if (given("gamma")) c.overrides.gamma = gamma, model_changed = true;
    if (given("omega")) c.overrides.omega = omega, model_changed = true;
    if (given("masses")) c.overrides.masses = parse_list(masses, "--masses"), model_changed = true;
    if (given("response")) c.response = response, model_changed = true;
    if (given("scheme")) c.scheme = SchemeKind::parse(scheme).name();
    if (given("estimator")) {
      c.estimators.clear();
      for (const auto& e : estimators) c.estimators.push_back(EstimatorSpec::parse(e));
    }
    if (given("dt") && given("dt-grid")) throw ConfigError("--dt and --dt-grid are mutually exclusive");
    if (given("dt")) c.dt_grid = {dt};
    if (given("dt-grid")) c.dt_grid = parse_list(dt_grid, "--dt-grid");
    if (given("samples")) c.n_realizations = samples;
    if (given("time")) c.t_final = time;
    if (given("burn-in")) c.t_burn = burn;
    if (given("warmup")) c.t_warmup = warmup;
    if (given("seed")) c.seed = seed;
    if (given("checkpoints")) c.checkpoints = checkpoints == "none" ? std::vector<double>{} : parse_list(checkpoints, "--checkpoints");
    if (given("eta")) c.eta = eta;
    if (given("nemd-difference")) c.nemd_difference = parse_difference(nemd_difference);
    if (given("uncoupled")) c.coupled = !uncoupled;
    if (given("g-coefficient")) c.g_coefficient = g;
    if (given("center")) c.center = parse_center(center);
    if (given("out")) c.output_path = out;
    if (given("workers")) c.workers = workers;
    if (given("timing")) c.record_timing = timing;
    // Checkpoints beyond a shortened horizon are dropped rather than rejected.
    if (given("time")) {
      std::vector<double> kept;
      for (double t : c.checkpoints)
        if (t <= c.t_final) kept.push_back(t);
      c.checkpoints = kept;
    }
    if (model_changed && c.reference && c.reference->source == "gaussian-integral")
      c.reference = gaussian_reference(c.model, c.overrides, c.response);
  }
};

std::string cell(double v, const char* f = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void print_summary(const std::vector<ResultRow>& rows, const std::string& path, std::ostream& out) {
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-6s %-7s %-10s %-8s %14s %12s %12s\n", "example", "obs", "scheme",
                "estimator", "dt", "estimate", "stderr", "bias");
  out << line;
  for (const auto& r : rows) {
    if (!r.is_summary()) continue;
    std::snprintf(line, sizeof line, "%-10s %-6s %-7s %-10s %-8s %14s %12s %12s\n", r.example.c_str(),
                  r.observable.c_str(), r.scheme.c_str(), r.estimator.c_str(), cell(r.dt).c_str(),
                  cell(r.estimate, "%.6f").c_str(), cell(r.stderr_, "%.6f").c_str(),
                  r.bias ? cell(*r.bias, "%.6f").c_str() : "");
    out << line;
  }
  out << "wrote " << path << '\n';
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int cmd_slope(const std::string& path, const std::string& by, std::ostream& out, std::ostream& err) {
  const auto rows = parse_csv(read_file(path));
  std::vector<std::string> keys;
  {
    std::stringstream ss(by);
    std::string k;
    static const std::set<std::string> allowed = {"example", "observable", "scheme", "estimator"};
    while (std::getline(ss, k, ','))
      if (!k.empty()) {
        if (!allowed.count(k)) throw ConfigError("--by accepts example, observable, scheme, estimator; got '" + k + "'");
        keys.push_back(k);
      }
  }
  auto field = [](const ResultRow& r, const std::string& k) {
    if (k == "example") return r.example;
    if (k == "observable") return r.observable;
    if (k == "scheme") return r.scheme;
    return r.estimator;
  };
  std::map<std::vector<std::string>, std::vector<std::pair<double, double>>> groups;
  std::vector<std::vector<std::string>> order;
  for (const auto& r : rows) {
    if (!r.is_summary() || !r.bias) continue;
    std::vector<std::string> g;
    for (const auto& k : keys) g.push_back(field(r, k));
    if (!groups.count(g)) order.push_back(g);
    groups[g].emplace_back(r.dt, std::abs(*r.bias));
  }
  if (order.empty()) throw std::runtime_error("no summary rows with a bias column in '" + path + "'");

  std::string header;
  for (const auto& k : keys) header += k + " ";
  out << header << "slope intercept r2 points\n";
  for (const auto& g : order) {
    std::string label;
    for (const auto& v : g) label += v + " ";
    try {
      const SlopeFit f = fit_slope(groups[g]);
      for (const auto& w : f.warnings) err << "warning: " << label << w << '\n';
      out << label << cell(f.slope, "%.4f") << ' ' << cell(f.intercept, "%.4f") << ' ' << cell(f.r2, "%.4f") << ' '
          << f.n_used << '\n';
    } catch (const std::invalid_argument& e) {
      out << label << "nan nan nan 0\n";
      err << "warning: " << label << e.what() << '\n';
    }
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Linear response of Langevin dynamics: martingale-product, Green-Kubo and NEMD estimators"};
  app.require_subcommand(1);

  RunFlags run_flags, example_flags;
  std::string config_path;
  auto* run = app.add_subcommand("run", "run an experiment described by a JSON file");
  run->add_option("config", config_path, "JSON experiment file")->required();
  run_flags.attach(run);

  int example_n = 0;
  auto* example = app.add_subcommand("example", "run the preset for example 1, 2 or 3");
  example->add_option("n", example_n, "example number")->required();
  example_flags.attach(example);

  std::string model_name;
  int points = 100;
  double step = 1e-4, tol = 1e-5;
  auto* validate = app.add_subcommand("validate", "check force derivatives against finite differences");
  validate->add_option("model", model_name, "example1, example2 or example3")->required();
  validate->add_option("--points", points, "random phase points");
  validate->add_option("--step", step, "finite-difference step");
  validate->add_option("--tol", tol, "tolerance on the relative error");

  std::string csv_path, by = "estimator,scheme,observable";
  auto* slope = app.add_subcommand("slope", "fit log-log bias slopes from a results CSV");
  slope->add_option("csv", csv_path, "results CSV")->required();
  slope->add_option("--by", by, "comma-separated grouping columns");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*run || *example) {
      ExperimentConfig cfg;
      if (*run) {
        cfg = parse_config_json(read_file(config_path));
        run_flags.apply(cfg);
      } else {
        if (example_n < 1 || example_n > 3) {
          err << "error: example must be 1, 2 or 3\n" << example->help();
          return kExitUsage;
        }
        cfg = example_preset(example_n);
        example_flags.apply(cfg);
      }
      cfg.validate();
      const auto rows = run_and_write(cfg);
      print_summary(rows, cfg.output_path, out);
      return kExitOk;
    }
    if (*validate) {
      const auto model = builtin_model<double>(model_name);
      const ValidationReport rep = validate_force_derivatives(model, points, step, tol);
      out << model_name << '\n' << rep.summary();
      return rep.pass ? kExitOk : kExitRuntime;
    }
    return cmd_slope(csv_path, by, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace lrmp
