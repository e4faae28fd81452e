#pragma once

#include "lrmp/integrators.hpp"
#include "lrmp/parallel.hpp"
#include "lrmp/statistics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lrmp {

enum class WeightKind { MP1, MP2 };

inline std::string to_string(WeightKind w) { return w == WeightKind::MP1 ? "mp1" : "mp2"; }

/// Throws ConfigError when `weight` has no increment formula for (scheme, force).
template <typename Scalar>
void check_weight_compatible(const LangevinModel<Scalar>& model, const SchemeKind& scheme, WeightKind weight) {
  if (weight == WeightKind::MP1) return;
  if (!scheme.second_order())
    throw ConfigError("mp2 weight requires a second-order scheme (bacab, abcba, cbabc, cabac), got '" + scheme.name() + "'");
  if (scheme.two_noises() && model.force().p_dependent)
    throw ConfigError("mp2 weight for " + scheme.name() + " is only available for position-only forces");
  if (scheme.bacab_like() && model.force().p_dependent && !model.force().has_phi())
    throw ConfigError("mp2 weight with a momentum-dependent force needs phi with F = grad_p phi");
}

namespace detail {

// The increment formulas below take the pre-step state and the step's draws directly; the public
// StepRecord overloads forward to them.

template <typename Scalar>
Scalar mp1_increment(const LangevinModel<Scalar>& model, const PhaseState<Scalar>& y, const StepNoise<Scalar>& g,
                     Scalar h, Scalar g_scale) {
  using std::sqrt;
  const Vector<Scalar> f = model.force().value(y.q, y.p);
  if (g.g2.size() > 0)
    return g_scale * Scalar(0.5) * sqrt(h * model.beta() / model.gamma()) * f.dot(g.g1 + g.g2);
  return g_scale * sqrt(h * model.beta() / (2 * model.gamma())) * f.dot(g.g1);
}

template <typename Scalar>
Scalar mp2_increment_bacab(const LangevinModel<Scalar>& model, const PhaseState<Scalar>& y,
                           const StepNoise<Scalar>& noise, Scalar h, Scalar g_scale) {
  using std::sqrt;
  const auto& F = model.force();
  const Vector<Scalar>& G = noise.g1;
  const Scalar c = sqrt(model.beta() / (2 * model.gamma()));
  const Scalar sh = sqrt(h), h32 = h * sh;
  const Vector<Scalar> v = model.inv_mass().cwiseProduct(y.p);

  Scalar dz = sh * c * F.value(y.q, y.p).dot(G) + h32 / 2 * c * v.dot(F.jac_q(y.q, y.p) * G);
  if (F.p_dependent) {
    const Matrix<Scalar> jp = F.jac_p(y.q, y.p);
    const Vector<Scalar> drag = model.potential().grad(y.q) + model.gamma() * v;
    dz += h / 2 * (G.dot(jp * G) - F.div_p(y.q, y.p));
    dz -= h32 / 2 * c * drag.dot(jp * G);
    dz += h32 / 2 / c * (F.hess_pp(y.q, y.p).contract3(G) / 3 - F.grad_p_div_p(y.q, y.p).dot(G) / 2);
  }
  return g_scale * dz;
}

template <typename Scalar>
Scalar mp2_increment_cbabc(const LangevinModel<Scalar>& model, const PhaseState<Scalar>& y,
                           const StepNoise<Scalar>& noise, Scalar h) {
  using std::sqrt;
  const auto& F = model.force();
  const Scalar c = sqrt(model.beta() / model.gamma());
  const Scalar sh = sqrt(h), h32 = h * sh;
  const Vector<Scalar> sum = noise.g1 + noise.g2, diff = noise.g1 - noise.g2;
  const Vector<Scalar> f = F.value(y.q, y.p);
  const Matrix<Scalar> jq = F.jac_q(y.q, y.p);
  const Vector<Scalar> v = model.inv_mass().cwiseProduct(y.p);
  const Vector<Scalar> minv_diff = model.inv_mass().cwiseProduct(diff);
  return Scalar(0.5) * sh * c * f.dot(sum) +
         h32 / 4 * c * (v.dot(jq * sum) + (jq * y.p).dot(minv_diff) - model.gamma() / 2 * f.dot(minv_diff));
}

template <typename Scalar>
Scalar weight_increment(const LangevinModel<Scalar>& model, const SchemeKind& scheme, WeightKind w,
                        const PhaseState<Scalar>& y, const StepNoise<Scalar>& noise, Scalar h, Scalar g_scale) {
  if (w == WeightKind::MP1) return mp1_increment(model, y, noise, h, g_scale);
  if (scheme.two_noises()) return mp2_increment_cbabc(model, y, noise, h);
  return mp2_increment_bacab(model, y, noise, h, g_scale);
}

}  // namespace detail

/// Order-sqrt(h) martingale increment. Two-noise schemes use the (G1 + G2) / 2 form.
/// `g_scale` multiplies the auxiliary function g (1 for g = beta phi / (2 gamma)).
template <typename Scalar>
Scalar mp1_increment(const LangevinModel<Scalar>& model, const StepRecord<Scalar>& rec, Scalar h,
                     Scalar g_scale = Scalar(1)) {
  return detail::mp1_increment(model, rec.state_before, rec.noise, h, g_scale);
}

/// Increment of the second-order weight for BACAB / ABCBA, truncated at order h^{3/2}. For a
/// momentum-dependent force with F = grad_p phi, includes the O(h) and remaining h^{3/2} terms.
template <typename Scalar>
Scalar mp2_increment_bacab(const LangevinModel<Scalar>& model, const SchemeKind& scheme, const StepRecord<Scalar>& rec,
                           Scalar h, Scalar g_scale = Scalar(1)) {
  if (!scheme.bacab_like()) throw ConfigError("bacab increment used with scheme '" + scheme.name() + "'");
  check_weight_compatible(model, scheme, WeightKind::MP2);
  if (rec.has_pair()) throw ConfigError("bacab increment expects a single Gaussian per step");
  return detail::mp2_increment_bacab(model, rec.state_before, rec.noise, h, g_scale);
}

/// Increment of the second-order weight for CBABC / CABAC; position-only forces.
template <typename Scalar>
Scalar mp2_increment_cbabc(const LangevinModel<Scalar>& model, const SchemeKind& scheme, const StepRecord<Scalar>& rec,
                           Scalar h) {
  if (!scheme.two_noises()) throw ConfigError("cbabc increment used with scheme '" + scheme.name() + "'");
  check_weight_compatible(model, scheme, WeightKind::MP2);
  if (!rec.has_pair()) throw ConfigError("cbabc increment expects two Gaussians per step");
  return detail::mp2_increment_cbabc(model, rec.state_before, rec.noise, h);
}

/// phi = beta p^T M^{-1} F - div_p F, the correlation partner of the Green-Kubo formula.
template <typename Scalar>
std::function<Scalar(const Vector<Scalar>&, const Vector<Scalar>&)> phi_gk(const LangevinModel<Scalar>& model) {
  const Scalar beta = model.beta();
  const Vector<Scalar> inv_m = model.inv_mass();
  const ForceField<Scalar> F = model.force();
  return [beta, inv_m, F](const Vector<Scalar>& q, const Vector<Scalar>& p) {
    return beta * inv_m.cwiseProduct(p).dot(F.value(q, p)) - F.div_p(q, p);
  };
}

struct Checkpoint {
  std::int64_t step = 0;
  std::vector<double> f_bar;  // per observable, mean over the first `step` states
  std::vector<double> z;      // per weight
};

struct TrajectoryStats {
  std::vector<double> f_bar;      // per observable
  std::vector<double> z_final;    // per weight
  std::vector<double> sum_dz2;    // per weight, sum of squared increments
  double phi_y0 = 0;              // phi at the first accumulated state
  std::vector<double> f_y0;       // per observable, at the first accumulated state
  std::vector<Checkpoint> checkpoints;
};

/// Step counts and weights for one realization. Phases: `n_burn` steps discarded, `n_warmup`
/// steps accumulating the weights only, then `n_steps` steps accumulating observables and weights.
struct RealizationPlan {
  std::vector<WeightKind> weights;
  std::int64_t n_steps = 1;
  std::int64_t n_burn = 0;
  std::int64_t n_warmup = 0;
  std::vector<std::int64_t> checkpoint_steps;  // ascending, within [1, n_steps]
  double g_scale = 1;
};

/// Sorted, deduplicated checkpoint steps in [1, n_steps] with n_steps appended.
inline std::vector<std::int64_t> normalize_checkpoints(std::vector<std::int64_t> steps, std::int64_t n_steps) {
  for (auto s : steps)
    if (s < 1 || s > n_steps) throw ConfigError("checkpoint step " + std::to_string(s) + " outside [1, N]");
  steps.push_back(n_steps);
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  return steps;
}

/// One trajectory: f-bar over the N pre-step states, every requested weight, and GK inputs.
template <typename Scalar, typename Rng>
TrajectoryStats run_realization(const SplittingIntegrator<Scalar>& integ, const RealizationPlan& plan, Rng& rng) {
  const auto& model = integ.model();
  const auto& scheme = integ.scheme();
  const auto& obs = model.observables();
  const Scalar h = integ.h();
  const Scalar g_scale = static_cast<Scalar>(plan.g_scale);
  const std::size_t n_obs = obs.size(), n_w = plan.weights.size();
  if (plan.n_steps < 1) throw ConfigError("N must be >= 1");
  if (plan.n_burn < 0 || plan.n_warmup < 0) throw ConfigError("burn-in and warm-up must be >= 0");

  TrajectoryStats out;
  out.f_bar.assign(n_obs, 0.0);
  out.z_final.assign(n_w, 0.0);
  out.sum_dz2.assign(n_w, 0.0);
  out.f_y0.assign(n_obs, 0.0);

  PhaseState<Scalar> y = model.initial_state();
  for (std::int64_t n = 0; n < plan.n_burn; ++n) integ.advance(y, Scalar(0), integ.draw_noise(rng));

  auto weighted_step = [&] {
    const StepNoise<Scalar> noise = integ.draw_noise(rng);
    for (std::size_t w = 0; w < n_w; ++w) {
      const double dz = static_cast<double>(detail::weight_increment(model, scheme, plan.weights[w], y, noise, h, g_scale));
      out.z_final[w] += dz;
      out.sum_dz2[w] += dz * dz;
    }
    integ.advance(y, Scalar(0), noise);
  };
  if (n_w > 0)
    for (std::int64_t n = 0; n < plan.n_warmup; ++n) weighted_step();

  out.phi_y0 = static_cast<double>(phi_gk(model)(y.q, y.p));
  std::vector<double> f_sum(n_obs, 0.0);
  std::size_t next_cp = 0;
  for (std::int64_t n = 0; n < plan.n_steps; ++n) {
    for (std::size_t o = 0; o < n_obs; ++o) {
      const double v = static_cast<double>(obs[o](y));
      if (n == 0) out.f_y0[o] = v;
      f_sum[o] += v;
    }
    weighted_step();
    if (next_cp < plan.checkpoint_steps.size() && plan.checkpoint_steps[next_cp] == n + 1) {
      Checkpoint cp{n + 1, f_sum, out.z_final};
      for (auto& v : cp.f_bar) v /= static_cast<double>(n + 1);
      out.checkpoints.push_back(std::move(cp));
      ++next_cp;
    }
  }
  for (std::size_t o = 0; o < n_obs; ++o) out.f_bar[o] = f_sum[o] / static_cast<double>(plan.n_steps);
  return out;
}

/// Single-weight form: burn-in, then N accumulated steps.
template <typename Scalar, typename Rng>
TrajectoryStats run_mp_realization(const LangevinModel<Scalar>& model, const SchemeKind& scheme, WeightKind weight,
                                   Scalar h, std::int64_t n_steps, std::int64_t n_burn,
                                   std::vector<std::int64_t> checkpoint_steps, Rng& rng) {
  check_weight_compatible(model, scheme, weight);
  const SplittingIntegrator<Scalar> integ(model, scheme, h);
  RealizationPlan plan{{weight}, n_steps, n_burn, 0, normalize_checkpoints(std::move(checkpoint_steps), n_steps)};
  return run_realization(integ, plan, rng);
}

struct EstimatorOutput {
  std::string observable;
  double estimate = 0;
  double stderr_ = 0;
  std::int64_t n_realizations = 0;
  std::vector<std::pair<double, double>> variance_vs_time;  // (T_k, across-realization variance)
};

/// Martingale diagnostics for one weight: E[z^N] and the two sides of the variance additivity identity.
struct WeightDiagnostics {
  double z_mean = 0;
  double z_stderr = 0;
  double z_variance = 0;
  double increment_variance_sum = 0;  // mean over realizations of sum_n (dz_n)^2
};

struct MpOptions {
  std::vector<WeightKind> weights{WeightKind::MP1};
  double h = 0.05;
  std::int64_t n_steps = 1;
  std::int64_t n_burn = 0;
  std::int64_t n_warmup = 0;
  std::vector<std::int64_t> checkpoint_steps;
  std::int64_t n_realizations = 2;
  std::uint64_t seed = 0;
  double g_scale = 1;
  int workers = 0;
};

struct MpResult {
  std::vector<WeightKind> weights;
  std::vector<std::vector<EstimatorOutput>> outputs;  // [weight][observable]
  std::vector<WeightDiagnostics> diagnostics;         // [weight]
};

/// Sample covariance across realizations of (f-bar, z^N) for every weight and observable, with all
/// weights driven by the same trajectories. Realization i uses stream (seed, i).
template <typename Scalar>
MpResult estimate_mp(const LangevinModel<Scalar>& model, const SchemeKind& scheme, const MpOptions& opt) {
  if (opt.n_realizations < 2) throw ConfigError("need at least 2 realizations");
  if (opt.weights.empty()) throw ConfigError("no weights requested");
  for (auto w : opt.weights) check_weight_compatible(model, scheme, w);
  const SplittingIntegrator<Scalar> integ(model, scheme, static_cast<Scalar>(opt.h));
  const RealizationPlan plan{opt.weights, opt.n_steps, opt.n_burn, opt.n_warmup,
                             normalize_checkpoints(opt.checkpoint_steps, opt.n_steps), opt.g_scale};
  const std::size_t n_w = opt.weights.size(), n_obs = model.observables().size(), n_cp = plan.checkpoint_steps.size();

  struct Acc {
    std::vector<CovAccumulator> cov;  // [cp][w][obs]; the last checkpoint is the final one
    std::vector<MeanVarAccumulator> z, dz2;
  };
  auto fresh = [&] {
    return Acc{std::vector<CovAccumulator>(n_cp * n_w * n_obs), std::vector<MeanVarAccumulator>(n_w),
               std::vector<MeanVarAccumulator>(n_w)};
  };
  auto work = [&](std::int64_t begin, std::int64_t end) {
    Acc acc = fresh();
    for (std::int64_t i = begin; i < end; ++i) {
      RandomStream rng({opt.seed, static_cast<std::uint64_t>(i)});
      const TrajectoryStats s = run_realization(integ, plan, rng);
      for (std::size_t c = 0; c < n_cp; ++c)
        for (std::size_t w = 0; w < n_w; ++w)
          for (std::size_t o = 0; o < n_obs; ++o)
            acc.cov[(c * n_w + w) * n_obs + o].update(s.checkpoints[c].f_bar[o], s.checkpoints[c].z[w]);
      for (std::size_t w = 0; w < n_w; ++w) {
        acc.z[w].update(s.z_final[w]);
        acc.dz2[w].update(s.sum_dz2[w]);
      }
    }
    return acc;
  };
  auto merge = [&](Acc& total, const Acc& part) {
    if (total.cov.empty()) total = fresh();
    for (std::size_t k = 0; k < total.cov.size(); ++k) total.cov[k].merge(part.cov[k]);
    for (std::size_t w = 0; w < n_w; ++w) {
      total.z[w].merge(part.z[w]);
      total.dz2[w].merge(part.dz2[w]);
    }
  };
  const Acc acc = chunked_reduce<Acc>(opt.n_realizations, opt.workers, work, merge);

  MpResult res;
  res.weights = opt.weights;
  res.outputs.assign(n_w, std::vector<EstimatorOutput>(n_obs));
  for (std::size_t w = 0; w < n_w; ++w) {
    for (std::size_t o = 0; o < n_obs; ++o) {
      EstimatorOutput& out = res.outputs[w][o];
      out.observable = model.observables()[o].name;
      out.n_realizations = opt.n_realizations;
      for (std::size_t c = 0; c < n_cp; ++c) {
        const CovAccumulator& a = acc.cov[(c * n_w + w) * n_obs + o];
        const CovSummary sum = a.finalize();
        const double var = sum.stderr_ * sum.stderr_ * static_cast<double>(a.count());
        out.variance_vs_time.emplace_back(static_cast<double>(plan.checkpoint_steps[c]) * opt.h, var);
        if (c + 1 == n_cp) {
          out.estimate = sum.covariance;
          out.stderr_ = sum.stderr_;
        }
      }
    }
    const MeanVarSummary z = acc.z[w].finalize();
    res.diagnostics.push_back({z.mean, z.stderr_, z.variance, acc.dz2[w].mean()});
  }
  return res;
}

/// Single-weight convenience form; one output per observable.
template <typename Scalar>
std::vector<EstimatorOutput> estimate_mp(const LangevinModel<Scalar>& model, const SchemeKind& scheme,
                                         WeightKind weight, double h, std::int64_t n_steps, std::int64_t n_burn,
                                         std::int64_t n_realizations, std::uint64_t seed) {
  MpOptions opt;
  opt.weights = {weight};
  opt.h = h;
  opt.n_steps = n_steps;
  opt.n_burn = n_burn;
  opt.n_realizations = n_realizations;
  opt.seed = seed;
  return estimate_mp(model, scheme, opt).outputs.front();
}

enum class GkRule { Riemann, Trapezoid };

/// Per-realization GK value: h sum_{n<N} w_n (f(y^n) - c) phi(y^0), where w_0 = 1/2 for the
/// trapezoid rule and 1 otherwise.
inline double gk_realization_value(double f_bar, double f_y0, double phi_y0, std::int64_t n_steps, double h,
                                   GkRule rule, double center) {
  double v = h * static_cast<double>(n_steps) * (f_bar - center) * phi_y0;
  if (rule == GkRule::Trapezoid) v -= 0.5 * h * (f_y0 - center) * phi_y0;
  return v;
}

/// Sum of the quadrature weights over N steps: h N (Riemann) or h (N - 1/2) (trapezoid).
inline double gk_weight_sum(std::int64_t n_steps, double h, GkRule rule) {
  return h * (static_cast<double>(n_steps) - (rule == GkRule::Trapezoid ? 0.5 : 0.0));
}

struct GkOptions {
  GkRule rule = GkRule::Trapezoid;
  double h = 0.05;
  std::int64_t n_steps = 1;
  std::int64_t n_burn = 0;
  std::vector<std::int64_t> checkpoint_steps;
  std::int64_t n_realizations = 2;
  std::uint64_t seed = 0;
  std::optional<double> center;  // empty: grand mean of f over all realizations and states
  int workers = 0;
};

/// Green-Kubo estimator, one output per observable. The automatic centre enters linearly, so it is
/// applied after the single pass: X_i = U_i - c V_i with U, V accumulated jointly.
template <typename Scalar>
std::vector<EstimatorOutput> estimate_gk(const LangevinModel<Scalar>& model, const SchemeKind& scheme,
                                         const GkOptions& opt) {
  if (opt.n_realizations < 2) throw ConfigError("need at least 2 realizations");
  const SplittingIntegrator<Scalar> integ(model, scheme, static_cast<Scalar>(opt.h));
  const RealizationPlan plan{{}, opt.n_steps, opt.n_burn, 0, normalize_checkpoints(opt.checkpoint_steps, opt.n_steps)};
  const std::size_t n_obs = model.observables().size(), n_cp = plan.checkpoint_steps.size();
  const double b = opt.rule == GkRule::Trapezoid ? 0.5 * opt.h : 0.0;

  struct Acc {
    std::vector<CovAccumulator> uv;    // [cp][obs]
    std::vector<MeanVarAccumulator> f;  // [obs], final f-bar
  };
  auto fresh = [&] { return Acc{std::vector<CovAccumulator>(n_cp * n_obs), std::vector<MeanVarAccumulator>(n_obs)}; };
  auto work = [&](std::int64_t begin, std::int64_t end) {
    Acc acc = fresh();
    for (std::int64_t i = begin; i < end; ++i) {
      RandomStream rng({opt.seed, static_cast<std::uint64_t>(i)});
      const TrajectoryStats s = run_realization(integ, plan, rng);
      for (std::size_t c = 0; c < n_cp; ++c) {
        const double a = opt.h * static_cast<double>(plan.checkpoint_steps[c]);
        for (std::size_t o = 0; o < n_obs; ++o) {
          const double u = (a * s.checkpoints[c].f_bar[o] - b * s.f_y0[o]) * s.phi_y0;
          acc.uv[c * n_obs + o].update(u, (a - b) * s.phi_y0);
        }
      }
      for (std::size_t o = 0; o < n_obs; ++o) acc.f[o].update(s.f_bar[o]);
    }
    return acc;
  };
  auto merge = [&](Acc& total, const Acc& part) {
    if (total.uv.empty()) total = fresh();
    for (std::size_t k = 0; k < total.uv.size(); ++k) total.uv[k].merge(part.uv[k]);
    for (std::size_t o = 0; o < n_obs; ++o) total.f[o].merge(part.f[o]);
  };
  const Acc acc = chunked_reduce<Acc>(opt.n_realizations, opt.workers, work, merge);

  std::vector<EstimatorOutput> outs(n_obs);
  for (std::size_t o = 0; o < n_obs; ++o) {
    const double c = opt.center ? *opt.center : acc.f[o].mean();
    EstimatorOutput& out = outs[o];
    out.observable = model.observables()[o].name;
    out.n_realizations = opt.n_realizations;
    for (std::size_t k = 0; k < n_cp; ++k) {
      const CovAccumulator& a = acc.uv[k * n_obs + o];
      const double n = static_cast<double>(a.count());
      const double mean = a.mean_x() - c * a.mean_y();
      double var = (a.m2_x() + c * c * a.m2_y() - 2 * c * a.c2()) / (n - 1);
      if (var < 0) var = 0;
      out.variance_vs_time.emplace_back(static_cast<double>(plan.checkpoint_steps[k]) * opt.h, var);
      if (k + 1 == n_cp) {
        out.estimate = mean;
        out.stderr_ = std::sqrt(var / n);
      }
    }
  }
  return outs;
}

/// Finite-difference stencil in eta. Forward: (f(eta) - f(0)) / eta. Central: (f(eta) - f(-eta)) / (2 eta).
/// Richardson: (4 C(eta/2) - C(eta)) / 3 with C the central difference, truncation O(eta^4).
enum class NemdDifference { Forward, Central, Richardson };

struct NemdOptions {
  double eta = 0.05;
  double h = 0.05;
  std::int64_t n_steps = 1;
  std::int64_t n_burn = 0;
  std::vector<std::int64_t> checkpoint_steps;
  std::int64_t n_realizations = 2;
  std::uint64_t seed = 0;
  bool coupled = true;
  NemdDifference difference = NemdDifference::Forward;
  int workers = 0;
};

/// (forcing strength, coefficient) pairs of the difference stencil.
inline std::vector<std::pair<double, double>> nemd_stencil(NemdDifference d, double eta) {
  switch (d) {
    case NemdDifference::Forward: return {{eta, 1 / eta}, {0.0, -1 / eta}};
    case NemdDifference::Central: return {{eta, 0.5 / eta}, {-eta, -0.5 / eta}};
    case NemdDifference::Richardson:
      return {{eta / 2, 4 / (3 * eta)}, {-eta / 2, -4 / (3 * eta)}, {eta, -1 / (6 * eta)}, {-eta, 1 / (6 * eta)}};
  }
  return {};
}

/// Finite-difference response from chains driven with different forcing strengths. Every chain starts
/// at the deterministic initial state, burns in and accumulates under its own forcing. Coupled chains
/// consume identical Gaussian draws; uncoupled chain k uses stream (splitmix64(seed + k), i) for k >= 1.
template <typename Scalar>
std::vector<EstimatorOutput> estimate_nemd(const LangevinModel<Scalar>& model, const SchemeKind& scheme,
                                           const NemdOptions& opt) {
  if (opt.eta == 0) throw ConfigError("nemd requires eta != 0");
  if (opt.n_realizations < 2) throw ConfigError("need at least 2 realizations");
  if (opt.n_steps < 1 || opt.n_burn < 0) throw ConfigError("N must be >= 1 and burn-in >= 0");
  const SplittingIntegrator<Scalar> integ(model, scheme, static_cast<Scalar>(opt.h));
  const auto cps = normalize_checkpoints(opt.checkpoint_steps, opt.n_steps);
  const auto& obs = model.observables();
  const std::size_t n_obs = obs.size(), n_cp = cps.size();
  const auto stencil = nemd_stencil(opt.difference, opt.eta);
  const std::size_t n_chain = stencil.size();

  using Acc = std::vector<MeanVarAccumulator>;  // [cp][obs]
  auto work = [&](std::int64_t begin, std::int64_t end) {
    Acc acc(n_cp * n_obs);
    for (std::int64_t i = begin; i < end; ++i) {
      std::vector<RandomStream> rngs;
      for (std::size_t k = 0; k < (opt.coupled ? 1 : n_chain); ++k)
        rngs.emplace_back(StreamSpec{k == 0 ? opt.seed : splitmix64(opt.seed + k), static_cast<std::uint64_t>(i)});
      std::vector<PhaseState<Scalar>> ys(n_chain, model.initial_state());
      auto step_all = [&] {
        const StepNoise<Scalar> shared = integ.draw_noise(rngs[0]);
        for (std::size_t k = 0; k < n_chain; ++k)
          integ.advance(ys[k], static_cast<Scalar>(stencil[k].first),
                        (opt.coupled || k == 0) ? shared : integ.draw_noise(rngs[k]));
      };
      for (std::int64_t n = 0; n < opt.n_burn; ++n) step_all();
      std::vector<double> diff(n_obs, 0.0);
      std::size_t next_cp = 0;
      for (std::int64_t n = 0; n < opt.n_steps; ++n) {
        for (std::size_t o = 0; o < n_obs; ++o)
          for (std::size_t k = 0; k < n_chain; ++k) diff[o] += stencil[k].second * static_cast<double>(obs[o](ys[k]));
        step_all();
        if (next_cp < n_cp && cps[next_cp] == n + 1) {
          for (std::size_t o = 0; o < n_obs; ++o) acc[next_cp * n_obs + o].update(diff[o] / static_cast<double>(n + 1));
          ++next_cp;
        }
      }
    }
    return acc;
  };
  auto merge = [&](Acc& total, const Acc& part) {
    if (total.empty()) total.resize(n_cp * n_obs);
    for (std::size_t k = 0; k < total.size(); ++k) total[k].merge(part[k]);
  };
  const Acc acc = chunked_reduce<Acc>(opt.n_realizations, opt.workers, work, merge);

  std::vector<EstimatorOutput> outs(n_obs);
  for (std::size_t o = 0; o < n_obs; ++o) {
    EstimatorOutput& out = outs[o];
    out.observable = obs[o].name;
    out.n_realizations = opt.n_realizations;
    for (std::size_t k = 0; k < n_cp; ++k) {
      const MeanVarSummary s = acc[k * n_obs + o].finalize();
      out.variance_vs_time.emplace_back(static_cast<double>(cps[k]) * opt.h, s.variance);
      if (k + 1 == n_cp) {
        out.estimate = s.mean;
        out.stderr_ = s.stderr_;
      }
    }
  }
  return outs;
}

}  // namespace lrmp
