#pragma once

#include "lrmp/types.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace lrmp {

template <typename Scalar>
struct PhaseState {
  Vector<Scalar> q;
  Vector<Scalar> p;

  int dim() const { return static_cast<int>(q.size()); }
  bool all_finite() const { return q.allFinite() && p.allFinite(); }
};

enum class DomainKind { Euclidean, Torus };

template <typename Scalar>
struct Domain {
  DomainKind kind = DomainKind::Euclidean;
  Vector<Scalar> periods;  // Torus only

  static Domain euclidean() { return {}; }
  static Domain torus(Vector<Scalar> periods) {
    if ((periods.array() <= Scalar(0)).any()) throw ConfigError("torus periods must be strictly positive");
    return {DomainKind::Torus, std::move(periods)};
  }
  bool periodic() const { return kind == DomainKind::Torus; }
};

/// Representative of q in the fundamental domain: identity on R^D, componentwise
/// reduction into [0, L_i) on a torus.
template <typename Scalar>
Vector<Scalar> wrap_position(const Vector<Scalar>& q, const Domain<Scalar>& domain) {
  if (!domain.periodic()) return q;
  Vector<Scalar> out(q.size());
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    const Scalar L = domain.periods(i);
    Scalar r = std::fmod(q(i), L);
    if (r < Scalar(0)) r += L;
    // fmod of a tiny negative number can round up to exactly L.
    if (r >= L) r = Scalar(0);
    out(i) = r;
  }
  return out;
}

template <typename Scalar>
struct Potential {
  std::function<Vector<Scalar>(const Vector<Scalar>&)> grad;
  std::function<Scalar(const Vector<Scalar>&)> value;  // optional, diagnostics only
};

/// Perturbation force F(q,p) together with every derivative the second-order weights need.
/// Column convention for Jacobians: jac_q(i,j) = dF_j/dq_i, jac_p(i,j) = dF_j/dp_i.
template <typename Scalar>
struct ForceField {
  using Vec = Vector<Scalar>;
  using Mat = Matrix<Scalar>;

  std::function<Vec(const Vec&, const Vec&)> value;
  std::function<Mat(const Vec&, const Vec&)> jac_q;
  std::function<Mat(const Vec&, const Vec&)> jac_p;
  std::function<Scalar(const Vec&, const Vec&)> div_p;
  std::function<Vec(const Vec&, const Vec&)> grad_p_div_p;
  std::function<Tensor3<Scalar>(const Vec&, const Vec&)> hess_pp;
  bool p_dependent = false;
  /// Optional potential in p with F = grad_p phi; required by the momentum-dependent MP2 weight.
  std::function<Scalar(const Vec&, const Vec&)> phi;

  /// Position-only field: all p-derivatives are identically zero.
  static ForceField position_only(int dim, std::function<Vec(const Vec&)> f,
                                  std::function<Mat(const Vec&)> jq) {
    ForceField ff;
    ff.value = [f](const Vec& q, const Vec&) { return f(q); };
    ff.jac_q = [jq](const Vec& q, const Vec&) { return jq(q); };
    ff.jac_p = [dim](const Vec&, const Vec&) { return Mat::Zero(dim, dim).eval(); };
    ff.div_p = [](const Vec&, const Vec&) { return Scalar(0); };
    ff.grad_p_div_p = [dim](const Vec&, const Vec&) { return Vec::Zero(dim).eval(); };
    ff.hess_pp = [dim](const Vec&, const Vec&) { return Tensor3<Scalar>::zero(dim); };
    ff.p_dependent = false;
    return ff;
  }

  /// F == 0.
  static ForceField zero(int dim) {
    return position_only(
        dim, [dim](const Vec&) { return Vec::Zero(dim).eval(); },
        [dim](const Vec&) { return Mat::Zero(dim, dim).eval(); });
  }

  bool has_phi() const { return static_cast<bool>(phi); }
};

template <typename Scalar>
struct Observable {
  std::string name;
  std::function<Scalar(const Vector<Scalar>&, const Vector<Scalar>&)> f;

  Scalar operator()(const PhaseState<Scalar>& y) const { return f(y.q, y.p); }
};

/// Langevin system with diagonal mass matrix. Immutable once constructed.
template <typename Scalar>
class LangevinModel {
 public:
  using Vec = Vector<Scalar>;

  LangevinModel(int dim, Scalar beta, Scalar gamma, Vec mass, Domain<Scalar> domain,
                Potential<Scalar> potential, ForceField<Scalar> force,
                std::vector<Observable<Scalar>> observables, std::string name = "custom")
      : dim_(dim),
        beta_(beta),
        gamma_(gamma),
        mass_(std::move(mass)),
        domain_(std::move(domain)),
        potential_(std::move(potential)),
        force_(std::move(force)),
        observables_(std::move(observables)),
        name_(std::move(name)) {
    if (dim_ < 1 || dim_ > kMaxDim) throw ConfigError("model dimension must lie in [1, " + std::to_string(kMaxDim) + "]");
    if (!(beta_ > 0)) throw ConfigError("beta must be > 0");
    if (!(gamma_ > 0)) throw ConfigError("gamma must be > 0");
    if (mass_.size() != dim_) throw ConfigError("mass vector length must equal D");
    if (!((mass_.array() > Scalar(0)).all())) throw ConfigError("masses must be > 0");
    if (domain_.periodic() && domain_.periods.size() != dim_) throw ConfigError("torus periods length must equal D");
    if (!potential_.grad) throw ConfigError("potential gradient is required");
    if (!force_.value || !force_.jac_q || !force_.jac_p || !force_.div_p || !force_.grad_p_div_p || !force_.hess_pp)
      throw ConfigError("force field must provide value and all derivative fields");
    inv_mass_ = mass_.cwiseInverse();
    const Vec zero = Vec::Zero(dim_);
    if (potential_.grad(zero).size() != dim_ || force_.value(zero, zero).size() != dim_)
      throw ConfigError("potential and force dimensions must equal D");
  }

  int dim() const { return dim_; }
  Scalar beta() const { return beta_; }
  Scalar gamma() const { return gamma_; }
  const Vec& mass() const { return mass_; }
  const Vec& inv_mass() const { return inv_mass_; }
  const Domain<Scalar>& domain() const { return domain_; }
  const Potential<Scalar>& potential() const { return potential_; }
  const ForceField<Scalar>& force() const { return force_; }
  const std::vector<Observable<Scalar>>& observables() const { return observables_; }
  const std::string& name() const { return name_; }

  LangevinModel with_force(ForceField<Scalar> force) const {
    return {dim_, beta_, gamma_, mass_, domain_, potential_, std::move(force), observables_, name_};
  }
  LangevinModel with_observables(std::vector<Observable<Scalar>> obs) const {
    return {dim_, beta_, gamma_, mass_, domain_, potential_, force_, std::move(obs), name_};
  }

  /// Deterministic start: q at the origin (wrapped into the domain), p = 0.
  PhaseState<Scalar> initial_state() const {
    return {wrap_position<Scalar>(Vec::Zero(dim_), domain_), Vec::Zero(dim_)};
  }

 private:
  int dim_;
  Scalar beta_;
  Scalar gamma_;
  Vec mass_;
  Vec inv_mass_;
  Domain<Scalar> domain_;
  Potential<Scalar> potential_;
  ForceField<Scalar> force_;
  std::vector<Observable<Scalar>> observables_;
  std::string name_;
};

struct FieldCheck {
  std::string field;
  double max_error = 0;
  int worst_point = -1;
  std::string detail;  // offending entry at the worst point
};

struct ValidationReport {
  bool pass = true;
  double tol = 0;
  std::vector<FieldCheck> fields;

  std::string summary() const {
    std::ostringstream os;
    for (const auto& f : fields) {
      os << (f.max_error <= tol ? "ok   " : "FAIL ") << f.field << " max_error=" << f.max_error;
      if (f.max_error > tol) os << " at point " << f.worst_point << " " << f.detail;
      os << '\n';
    }
    os << (pass ? "PASS" : "FAIL") << " (tol=" << tol << ")\n";
    return os.str();
  }
};

namespace detail {

template <typename Scalar>
double mixed_error(Scalar analytic, Scalar numeric) {
  using std::abs;
  return static_cast<double>(abs(analytic - numeric) / std::max(Scalar(1), abs(numeric)));
}

}  // namespace detail

/// Compare every analytic derivative field of the force against central finite differences
/// of `value` at `n_points` random phase points. Errors are |a - fd| / max(1, |fd|).
template <typename Scalar>
ValidationReport validate_force_derivatives(const LangevinModel<Scalar>& model, int n_points, Scalar step, Scalar tol,
                                            std::uint64_t seed = 12345) {
  using Vec = Vector<Scalar>;
  using Mat = Matrix<Scalar>;
  if (n_points < 1) throw ConfigError("n_points must be >= 1");
  if (!(step > 0) || !(tol > 0)) throw ConfigError("step and tol must be > 0");

  const int d = model.dim();
  const auto& F = model.force();
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  ValidationReport report;
  report.tol = static_cast<double>(tol);
  std::vector<FieldCheck> checks;
  for (const char* name : {"jac_q", "jac_p", "div_p", "grad_p_div_p", "hess_pp"}) checks.emplace_back().field = name;
  if (F.has_phi()) checks.emplace_back().field = "phi";

  auto record = [&](FieldCheck& c, double err, int pt, const std::string& what) {
    if (c.worst_point < 0 || err > c.max_error) {
      c.max_error = err;
      c.worst_point = pt;
      c.detail = what;
    }
  };
  auto entry = [](const char* name, int i, int j, Scalar a, Scalar n) {
    std::ostringstream os;
    os << name << "(" << i << "," << j << ") analytic=" << a << " fd=" << n;
    return os.str();
  };

  for (int pt = 0; pt < n_points; ++pt) {
    Vec q(d), p(d);
    for (int i = 0; i < d; ++i) {
      q(i) = static_cast<Scalar>(model.domain().periodic() ? 0.5 * (unif(gen) + 2.0) * model.domain().periods(i) / 2.0
                                                            : unif(gen));
      p(i) = static_cast<Scalar>(normal(gen));
    }

    // First derivatives: fd(i, j) = dF_j / dx_i.
    Mat fd_q(d, d), fd_p(d, d);
    for (int i = 0; i < d; ++i) {
      Vec dq = Vec::Zero(d);
      dq(i) = step;
      fd_q.row(i) = ((F.value(q + dq, p) - F.value(q - dq, p)) / (2 * step)).transpose();
      fd_p.row(i) = ((F.value(q, p + dq) - F.value(q, p - dq)) / (2 * step)).transpose();
    }
    // Second p-derivatives of value: H(i,j,k) = d^2 F_k / dp_i dp_j.
    Tensor3<Scalar> fd_h = Tensor3<Scalar>::zero(d);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        Vec ei = Vec::Zero(d), ej = Vec::Zero(d);
        ei(i) = step;
        ej(j) = step;
        const Vec v = (F.value(q, p + ei + ej) - F.value(q, p + ei - ej) - F.value(q, p - ei + ej) +
                       F.value(q, p - ei - ej)) /
                      (4 * step * step);
        for (int k = 0; k < d; ++k) fd_h(i, j, k) = v(k);
      }
    }
    Scalar fd_div = fd_p.trace();
    Vec fd_grad_div(d);
    for (int j = 0; j < d; ++j) {
      Scalar s(0);
      for (int i = 0; i < d; ++i) s += fd_h(j, i, i);
      fd_grad_div(j) = s;
    }

    const Mat jq = F.jac_q(q, p), jp = F.jac_p(q, p);
    const Scalar dv = F.div_p(q, p);
    const Vec gdv = F.grad_p_div_p(q, p);
    const Tensor3<Scalar> h = F.hess_pp(q, p);

    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) {
        record(checks[0], detail::mixed_error(jq(i, j), fd_q(i, j)), pt, entry("jac_q", i, j, jq(i, j), fd_q(i, j)));
        record(checks[1], detail::mixed_error(jp(i, j), fd_p(i, j)), pt, entry("jac_p", i, j, jp(i, j), fd_p(i, j)));
        for (int k = 0; k < d; ++k) {
          record(checks[4], detail::mixed_error(h(i, j, k), fd_h(i, j, k)), pt,
                 entry("hess_pp", i, j * d + k, h(i, j, k), fd_h(i, j, k)));
        }
      }
      record(checks[3], detail::mixed_error(gdv(i), fd_grad_div(i)), pt,
             entry("grad_p_div_p", i, 0, gdv(i), fd_grad_div(i)));
    }
    record(checks[2], detail::mixed_error(dv, fd_div), pt, entry("div_p", 0, 0, dv, fd_div));

    if (F.has_phi()) {
      const Vec f = F.value(q, p);
      for (int i = 0; i < d; ++i) {
        Vec e = Vec::Zero(d);
        e(i) = step;
        const Scalar fd = (F.phi(q, p + e) - F.phi(q, p - e)) / (2 * step);
        record(checks[5], detail::mixed_error(f(i), fd), pt, entry("grad_p phi vs F", i, 0, f(i), fd));
      }
    }
    if (!F.p_dependent) {
      const double leak = static_cast<double>(std::max({jp.cwiseAbs().maxCoeff(), std::abs(dv),
                                                        gdv.cwiseAbs().maxCoeff(), h.max_abs()}));
      if (leak != 0.0) record(checks[1], std::numeric_limits<double>::infinity(), pt, "p-derivative nonzero on a position-only field");
    }
  }

  for (const auto& c : checks) report.pass = report.pass && (c.max_error <= report.tol);
  report.fields = std::move(checks);
  return report;
}

}  // namespace lrmp
