#include "lrmp/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#ifndef LRMP_VERSION
#define LRMP_VERSION "unknown"
#endif

namespace lrmp {

EstimatorSpec EstimatorSpec::parse(const std::string& s) {
  EstimatorSpec e;
  const auto colon = s.find(':');
  e.name = s.substr(0, colon);
  if (colon != std::string::npos) e.scheme = s.substr(colon + 1);
  static const std::set<std::string> known = {"mp1", "mp2", "gk1", "gk2", "nemd"};
  if (!known.count(e.name)) throw ConfigError("unknown estimator '" + e.name + "' (expected mp1, mp2, gk1, gk2, nemd)");
  if (!e.scheme.empty()) e.scheme = SchemeKind::parse(e.scheme).name();
  return e;
}

namespace {

bool is_mp(const std::string& n) { return n == "mp1" || n == "mp2"; }

std::string resolved_scheme(const ExperimentConfig& cfg, const EstimatorSpec& e) {
  return SchemeKind::parse(e.scheme.empty() ? cfg.scheme : e.scheme).name();
}

std::int64_t round_steps(double t, double h) { return static_cast<std::int64_t>(std::llround(t / h)); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

std::int64_t steps_for(double t, double h) { return std::max<std::int64_t>(1, round_steps(t, h)); }

void ExperimentConfig::validate() const {
  const LangevinModel<double> m = builtin_model<double>(model, overrides);
  (void)SchemeKind::parse(scheme);
  if (estimators.empty()) throw ConfigError("no estimators requested");
  for (const auto& e : estimators) {
    const auto checked = EstimatorSpec::parse(e.to_string());
    const SchemeKind s = SchemeKind::parse(resolved_scheme(*this, checked));
    if (checked.name == "mp1") check_weight_compatible(m, s, WeightKind::MP1);
    if (checked.name == "mp2") check_weight_compatible(m, s, WeightKind::MP2);
  }
  if (dt_grid.empty()) throw ConfigError("dt grid is empty");
  for (double h : dt_grid)
    if (!(h > 0) || !std::isfinite(h)) throw ConfigError("dt values must be finite and > 0");
  if (!(t_final > 0)) throw ConfigError("T_final must be > 0");
  if (!(t_burn >= 0) || !(t_warmup >= 0)) throw ConfigError("burn-in and warm-up times must be >= 0");
  if (n_realizations < 2) throw ConfigError("need at least 2 realizations");
  for (double t : checkpoints)
    if (!(t > 0) || t > t_final) throw ConfigError("checkpoint times must lie in (0, T_final]");
  if (eta == 0 || !std::isfinite(eta)) throw ConfigError("eta must be finite and nonzero");
  if (response != "eta" && response != "beta") throw ConfigError("response must be 'eta' or 'beta'");
  if (response == "beta" && model != "example2")
    throw ConfigError("response 'beta' is defined for example2 (F = p) only");
  if (g_coefficient && !(*g_coefficient > 0)) throw ConfigError("g coefficient must be > 0");
  if (reference) {
    static const std::set<std::string> sources = {"paper", "nemd-oracle", "gaussian-integral"};
    if (!sources.count(reference->source))
      throw ConfigError("reference source must be paper, nemd-oracle or gaussian-integral");
  }
  if (workers < 0) throw ConfigError("workers must be >= 0");
}

double response_scale(const ExperimentConfig& cfg) {
  if (cfg.response != "beta") return 1.0;
  // F = p shifts the friction to gamma - eta with unchanged noise, i.e. beta_eff = beta (1 - eta / gamma).
  const auto m = builtin_model<double>(cfg.model, cfg.overrides);
  return -m.gamma() / m.beta();
}

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const LangevinModel<double> model = builtin_model<double>(cfg.model, cfg.overrides);
  const double scale = response_scale(cfg);
  const double g_scale = cfg.g_coefficient ? 4 * *cfg.g_coefficient * model.gamma() / model.beta() : 1.0;
  using clock = std::chrono::steady_clock;

  std::vector<ResultRow> rows;
  for (double h : cfg.dt_grid) {
    const std::int64_t n = steps_for(cfg.t_final, h);
    const std::int64_t burn = round_steps(cfg.t_burn, h);
    std::vector<std::int64_t> cp_steps;
    for (double t : cfg.checkpoints) cp_steps.push_back(std::min(n, steps_for(t, h)));

    // MP weights on a shared scheme are evaluated along the same trajectories.
    std::map<std::string, std::pair<MpResult, double>> mp_runs;
    auto mp_run = [&](const std::string& scheme) -> const std::pair<MpResult, double>& {
      auto it = mp_runs.find(scheme);
      if (it != mp_runs.end()) return it->second;
      MpOptions opt;
      for (const auto& e : cfg.estimators) {
        if (!is_mp(e.name) || resolved_scheme(cfg, e) != scheme) continue;
        const WeightKind w = e.name == "mp1" ? WeightKind::MP1 : WeightKind::MP2;
        if (std::find(opt.weights.begin(), opt.weights.end(), w) == opt.weights.end()) opt.weights.push_back(w);
      }
      opt.h = h;
      opt.n_steps = n;
      opt.n_burn = burn;
      opt.n_warmup = round_steps(cfg.t_warmup, h);
      opt.checkpoint_steps = cp_steps;
      opt.n_realizations = cfg.n_realizations;
      opt.seed = cfg.seed;
      opt.g_scale = g_scale;
      opt.workers = cfg.workers;
      const auto t0 = clock::now();
      MpResult r = estimate_mp(model, SchemeKind::parse(scheme), opt);
      const double secs = std::chrono::duration<double>(clock::now() - t0).count();
      return mp_runs.emplace(scheme, std::make_pair(std::move(r), secs)).first->second;
    };

    for (const auto& e : cfg.estimators) {
      const std::string scheme = resolved_scheme(cfg, e);
      std::vector<EstimatorOutput> outs;
      double secs = 0;
      if (is_mp(e.name)) {
        const auto& [res, t] = mp_run(scheme);
        const WeightKind w = e.name == "mp1" ? WeightKind::MP1 : WeightKind::MP2;
        const auto idx = std::find(res.weights.begin(), res.weights.end(), w) - res.weights.begin();
        outs = res.outputs[static_cast<std::size_t>(idx)];
        secs = t;
      } else {
        const auto t0 = clock::now();
        if (e.name == "nemd") {
          NemdOptions opt;
          opt.eta = cfg.eta;
          opt.h = h;
          opt.n_steps = n;
          opt.n_burn = burn;
          opt.checkpoint_steps = cp_steps;
          opt.n_realizations = cfg.n_realizations;
          opt.seed = cfg.seed;
          opt.coupled = cfg.coupled;
          opt.difference = cfg.nemd_difference;
          opt.workers = cfg.workers;
          outs = estimate_nemd(model, SchemeKind::parse(scheme), opt);
        } else {
          GkOptions opt;
          opt.rule = e.name == "gk1" ? GkRule::Riemann : GkRule::Trapezoid;
          opt.h = h;
          opt.n_steps = n;
          opt.n_burn = burn;
          opt.checkpoint_steps = cp_steps;
          opt.n_realizations = cfg.n_realizations;
          opt.seed = cfg.seed;
          opt.center = cfg.center;
          opt.workers = cfg.workers;
          outs = estimate_gk(model, SchemeKind::parse(scheme), opt);
        }
        secs = std::chrono::duration<double>(clock::now() - t0).count();
      }

      for (const auto& out : outs) {
        ResultRow row;
        row.example = cfg.model;
        row.observable = out.observable;
        row.scheme = scheme;
        row.estimator = e.name;
        row.dt = h;
        row.n_steps = n;
        row.n_realizations = out.n_realizations;
        row.seed = cfg.seed;
        row.estimate = scale * out.estimate;
        row.stderr_ = std::abs(scale) * out.stderr_;
        if (cfg.reference) {
          row.reference_source = cfg.reference->source;
          const auto it = cfg.reference->values.find(out.observable);
          if (it != cfg.reference->values.end()) {
            row.reference_value = it->second;
            row.bias = row.estimate - it->second;
          }
        }
        if (cfg.record_timing) row.wall_seconds = secs;
        rows.push_back(row);
        for (std::size_t k = 0; k < cfg.checkpoints.size(); ++k) {
          ResultRow cp = row;
          cp.checkpoint_time = cfg.checkpoints[k];
          const double step_time = static_cast<double>(cp_steps[k]) * h;
          for (const auto& [t, var] : out.variance_vs_time)
            if (std::abs(t - step_time) <= 1e-9 * std::max(1.0, step_time)) cp.checkpoint_variance = scale * scale * var;
          rows.push_back(cp);
        }
      }
    }
  }
  return rows;
}

std::string format_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  const auto& cols = result_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& r : rows) {
    os << r.example << ',' << r.observable << ',' << r.scheme << ',' << r.estimator << ',' << fmt(r.dt) << ','
       << r.n_steps << ',' << r.n_realizations << ',' << r.seed << ',' << fmt(r.estimate) << ',' << fmt(r.stderr_)
       << ',' << fmt(r.bias) << ',' << fmt(r.reference_value) << ',' << r.reference_source << ','
       << fmt(r.checkpoint_time) << ',' << fmt(r.checkpoint_variance) << ',' << fmt(r.wall_seconds) << '\n';
  }
  return os.str();
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double to_double(const std::string& s, const std::string& col) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("column '" + col + "': cannot parse number '" + s + "'");
  }
}

std::optional<double> to_opt(const std::string& s, const std::string& col) {
  if (s.empty()) return std::nullopt;
  return to_double(s, col);
}

}  // namespace

std::vector<ResultRow> parse_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty CSV");
  const auto header = split_line(line);
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < header.size(); ++i) idx[header[i]] = i;
  for (const char* need : {"estimator", "scheme", "dt", "estimate", "bias"})
    if (!idx.count(need)) throw std::runtime_error(std::string("CSV lacks column '") + need + "'");

  std::vector<ResultRow> rows;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_line(line);
    if (f.size() != header.size())
      throw std::runtime_error("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                               " fields, got " + std::to_string(f.size()));
    auto get = [&](const char* c) -> std::string { return idx.count(c) ? f[idx[c]] : std::string(); };
    ResultRow r;
    r.example = get("example");
    r.observable = get("observable");
    r.scheme = get("scheme");
    r.estimator = get("estimator");
    r.dt = to_double(get("dt"), "dt");
    if (!get("n_steps").empty()) r.n_steps = static_cast<std::int64_t>(to_double(get("n_steps"), "n_steps"));
    if (!get("n_realizations").empty())
      r.n_realizations = static_cast<std::int64_t>(to_double(get("n_realizations"), "n_realizations"));
    if (!get("seed").empty()) r.seed = std::stoull(get("seed"));
    r.estimate = to_double(get("estimate"), "estimate");
    if (!get("stderr").empty()) r.stderr_ = to_double(get("stderr"), "stderr");
    r.bias = to_opt(get("bias"), "bias");
    r.reference_value = to_opt(get("reference_value"), "reference_value");
    r.reference_source = get("reference_source");
    r.checkpoint_time = to_opt(get("checkpoint_time"), "checkpoint_time");
    r.checkpoint_variance = to_opt(get("checkpoint_variance"), "checkpoint_variance");
    r.wall_seconds = to_opt(get("wall_seconds"), "wall_seconds");
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    os << content;
    if (!os) throw std::runtime_error("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, target);
}

std::string format_metadata(const ExperimentConfig& cfg) {
  std::ostringstream os;
  auto list = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
    return s;
  };
  std::string est;
  for (std::size_t i = 0; i < cfg.estimators.size(); ++i) est += (i ? "," : "") + cfg.estimators[i].to_string();
  const char* diff = cfg.nemd_difference == NemdDifference::Forward   ? "forward"
                     : cfg.nemd_difference == NemdDifference::Central ? "central"
                                                                       : "richardson";
  os << "version=" << LRMP_VERSION << '\n'
     << "model=" << cfg.model << '\n'
     << "beta=" << fmt(cfg.overrides.beta) << '\n'
     << "gamma=" << fmt(cfg.overrides.gamma) << '\n'
     << "omega=" << fmt(cfg.overrides.omega) << '\n'
     << "masses=" << (cfg.overrides.masses ? list(*cfg.overrides.masses) : std::string()) << '\n'
     << "scheme=" << cfg.scheme << '\n'
     << "estimators=" << est << '\n'
     << "dt_grid=" << list(cfg.dt_grid) << '\n'
     << "t_final=" << fmt(cfg.t_final) << '\n'
     << "t_burn=" << fmt(cfg.t_burn) << '\n'
     << "t_warmup=" << fmt(cfg.t_warmup) << '\n'
     << "n_realizations=" << cfg.n_realizations << '\n'
     << "seed=" << cfg.seed << '\n'
     << "checkpoints=" << list(cfg.checkpoints) << '\n'
     << "eta=" << fmt(cfg.eta) << '\n'
     << "nemd_difference=" << diff << '\n'
     << "coupled=" << (cfg.coupled ? "true" : "false") << '\n'
     << "g_coefficient=" << fmt(cfg.g_coefficient) << '\n'
     << "center=" << (cfg.center ? fmt(*cfg.center) : std::string("auto")) << '\n'
     << "response=" << cfg.response << '\n'
     << "reference_source=" << (cfg.reference ? cfg.reference->source : std::string()) << '\n';
  return os.str();
}

std::vector<ResultRow> run_and_write(const ExperimentConfig& cfg) {
  if (cfg.output_path.empty()) throw ConfigError("output path is empty");
  auto rows = run_experiment(cfg);
  write_file_atomic(cfg.output_path, format_csv(rows));
  write_file_atomic(cfg.output_path + ".meta", format_metadata(cfg));
  return rows;
}

SlopeFit fit_line(const std::vector<std::pair<double, double>>& pts) {
  if (pts.size() < 2) throw std::invalid_argument("line fit needs at least two points");
  const double n = static_cast<double>(pts.size());
  double sx = 0, sy = 0;
  for (const auto& [x, y] : pts) {
    sx += x;
    sy += y;
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (sxx == 0) throw std::invalid_argument("line fit needs at least two distinct abscissae");
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy == 0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  f.n_used = static_cast<int>(pts.size());
  return f;
}

SlopeFit fit_slope(const std::vector<std::pair<double, double>>& points) {
  std::vector<std::pair<double, double>> logs;
  std::vector<std::string> warnings;
  for (const auto& [dt, b] : points) {
    if (!(dt > 0) || !(b > 0)) {
      warnings.push_back("dropped point (dt=" + fmt(dt) + ", |bias|=" + fmt(b) + "): nonpositive");
      continue;
    }
    logs.emplace_back(std::log(dt), std::log(b));
  }
  if (logs.size() < 2) throw std::invalid_argument("slope fit needs at least two positive points");
  SlopeFit f = fit_line(logs);
  f.warnings = std::move(warnings);
  return f;
}

std::vector<VarianceGrowth> variance_growth_diagnostics(const std::vector<ResultRow>& rows) {
  using Key = std::tuple<std::string, std::string, std::string, double>;
  std::map<Key, std::vector<std::pair<double, double>>> groups;
  std::vector<Key> order;
  for (const auto& r : rows) {
    if (r.is_summary() || !r.checkpoint_variance) continue;
    Key k{r.estimator, r.scheme, r.observable, r.dt};
    if (!groups.count(k)) order.push_back(k);
    groups[k].emplace_back(*r.checkpoint_time, *r.checkpoint_variance);
  }
  std::vector<VarianceGrowth> out;
  for (const auto& k : order) {
    auto pts = groups[k];
    if (pts.size() < 3) continue;
    std::sort(pts.begin(), pts.end());
    const SlopeFit lin = fit_line(pts);
    const double t_max = pts.back().first;
    const auto low = std::min_element(pts.begin(), pts.end(), [&](const auto& a, const auto& b) {
      return std::abs(a.first - t_max / 8) < std::abs(b.first - t_max / 8);
    });
    VarianceGrowth g;
    std::tie(g.estimator, g.scheme, g.observable, g.dt) = k;
    g.slope = lin.slope;
    g.r2 = lin.r2;
    g.t_max = t_max;
    g.t_low = low->first;
    g.ratio = pts.back().second / low->second;
    out.push_back(g);
  }
  if (out.empty()) throw std::invalid_argument("variance growth needs at least three checkpoint rows per group");
  return out;
}

std::optional<ReferenceSpec> gaussian_reference(const std::string& model, const ModelOverrides& o,
                                                const std::string& response) {
  const double beta = o.beta.value_or(1.0), gamma = o.gamma.value_or(1.0), omega = o.omega.value_or(1.0);
  const std::vector<double> m = o.masses.value_or(std::vector<double>{1.0, 1.0});
  if (model == "example1" && response == "eta") return ReferenceSpec{"gaussian-integral", {{"q2", 2 / (beta * omega * omega)}}};
  if (model == "example2") {
    // E|q|^2 = 2 / (beta omega), E p_i^4 = 3 m_i^2 / beta^2.
    double f1 = -2 / (beta * beta * omega);
    double f2 = -6 * (m[0] * m[0] + m[1] * m[1]) / (beta * beta * beta);
    if (response == "eta") {
      f1 *= -beta / gamma;
      f2 *= -beta / gamma;
    }
    return ReferenceSpec{"gaussian-integral", {{"f1", f1}, {"f2", f2}}};
  }
  return std::nullopt;
}

ExperimentConfig example_preset(int n) {
  ExperimentConfig c;
  c.dt_grid = {0.05, 0.1, 0.2, 0.4};
  c.n_realizations = 10000;
  c.seed = 1;
  c.t_burn = 20;
  switch (n) {
    case 1:
      c.model = "example1";
      c.scheme = "bacab";
      c.estimators = {EstimatorSpec::parse("mp1:bac"), EstimatorSpec::parse("mp1"), EstimatorSpec::parse("mp2")};
      c.t_final = 100;
      c.t_warmup = 20;
      c.checkpoints = {25, 50, 75, 100};
      c.reference = gaussian_reference(c.model, c.overrides, c.response);
      c.output_path = "example1.csv";
      break;
    case 2:
      c.model = "example2";
      c.scheme = "bacab";
      c.estimators = {EstimatorSpec::parse("mp1:bca"), EstimatorSpec::parse("mp2")};
      c.t_final = 200;
      c.t_warmup = 20;
      c.checkpoints = {50, 100, 150, 200};
      c.response = "beta";
      c.reference = gaussian_reference(c.model, c.overrides, c.response);
      c.output_path = "example2.csv";
      break;
    case 3:
      c.model = "example3";
      c.scheme = "bacab";
      c.estimators = {EstimatorSpec::parse("gk1"), EstimatorSpec::parse("gk2")};
      c.t_final = 25;
      c.checkpoints = {5, 10, 15, 20, 25};
      c.output_path = "example3.csv";
      break;
    default:
      throw ConfigError("example must be 1, 2 or 3");
  }
  return c;
}

}  // namespace lrmp
