#pragma once

#include "lrmp/model.hpp"

#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace lrmp {

/// Numeric overrides accepted by the built-in systems (all D = 2).
struct ModelOverrides {
  std::optional<double> beta;
  std::optional<double> gamma;
  std::optional<double> omega;  // harmonic stiffness, examples 1 and 2
  std::optional<std::vector<double>> masses;
};

namespace detail {

template <typename Scalar>
Vector<Scalar> builtin_masses(const ModelOverrides& o) {
  Vector<Scalar> m = Vector<Scalar>::Ones(2);
  if (o.masses) {
    if (o.masses->size() != 2) throw ConfigError("built-in models are two-dimensional: expected 2 masses");
    for (int i = 0; i < 2; ++i) m(i) = static_cast<Scalar>((*o.masses)[i]);
  }
  return m;
}

template <typename Scalar>
Potential<Scalar> harmonic_potential(Scalar omega) {
  return {[omega](const Vector<Scalar>& q) { return (omega * q).eval(); },
          [omega](const Vector<Scalar>& q) { return Scalar(0.5) * omega * q.squaredNorm(); }};
}

}  // namespace detail

/// Harmonic V = omega |q|^2 / 2 on R^2, position-dependent forcing F(q) = q, observable |q|^2.
template <typename Scalar = double>
LangevinModel<Scalar> example1_model(const ModelOverrides& o = {}) {
  using Vec = Vector<Scalar>;
  using Mat = Matrix<Scalar>;
  const Scalar omega = static_cast<Scalar>(o.omega.value_or(1.0));
  auto force = ForceField<Scalar>::position_only(
      2, [](const Vec& q) { return q; }, [](const Vec&) { return Mat::Identity(2, 2).eval(); });
  std::vector<Observable<Scalar>> obs = {
      {"q2", [](const Vec& q, const Vec&) { return q.squaredNorm(); }}};
  return {2,
          static_cast<Scalar>(o.beta.value_or(1.0)),
          static_cast<Scalar>(o.gamma.value_or(1.0)),
          detail::builtin_masses<Scalar>(o),
          Domain<Scalar>::euclidean(),
          detail::harmonic_potential<Scalar>(omega),
          std::move(force),
          std::move(obs),
          "example1"};
}

/// Same harmonic system, momentum-dependent forcing F(p) = p = grad_p (|p|^2/2);
/// observables f1 = q1^2 + q2^2 and f2 = p1^4 + p2^4.
template <typename Scalar = double>
LangevinModel<Scalar> example2_model(const ModelOverrides& o = {}) {
  using Vec = Vector<Scalar>;
  using Mat = Matrix<Scalar>;
  const Scalar omega = static_cast<Scalar>(o.omega.value_or(1.0));
  ForceField<Scalar> force;
  force.value = [](const Vec&, const Vec& p) { return p; };
  force.jac_q = [](const Vec&, const Vec&) { return Mat::Zero(2, 2).eval(); };
  force.jac_p = [](const Vec&, const Vec&) { return Mat::Identity(2, 2).eval(); };
  force.div_p = [](const Vec&, const Vec&) { return Scalar(2); };
  force.grad_p_div_p = [](const Vec&, const Vec&) { return Vec::Zero(2).eval(); };
  force.hess_pp = [](const Vec&, const Vec&) { return Tensor3<Scalar>::zero(2); };
  force.p_dependent = true;
  force.phi = [](const Vec&, const Vec& p) { return Scalar(0.5) * p.squaredNorm(); };
  std::vector<Observable<Scalar>> obs = {
      {"f1", [](const Vec& q, const Vec&) { return q.squaredNorm(); }},
      {"f2", [](const Vec&, const Vec& p) { return p.array().pow(4).sum(); }}};
  return {2,
          static_cast<Scalar>(o.beta.value_or(1.0)),
          static_cast<Scalar>(o.gamma.value_or(1.0)),
          detail::builtin_masses<Scalar>(o),
          Domain<Scalar>::euclidean(),
          detail::harmonic_potential<Scalar>(omega),
          std::move(force),
          std::move(obs),
          "example2"};
}

/// Mobility on the torus (2 pi T)^2 with V = 2 cos(2 q1) + cos(q2), constant forcing
/// F = (1, 0), observable F^T M^{-1} p.
template <typename Scalar = double>
LangevinModel<Scalar> example3_model(const ModelOverrides& o = {}) {
  using Vec = Vector<Scalar>;
  using Mat = Matrix<Scalar>;
  if (o.omega) throw ConfigError("omega override applies to examples 1 and 2 only");
  const Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  const Vec mass = detail::builtin_masses<Scalar>(o);
  const Vec dir = (Vec(2) << Scalar(1), Scalar(0)).finished();
  Potential<Scalar> pot{
      [](const Vec& q) {
        using std::sin;
        return (Vec(2) << -Scalar(4) * sin(Scalar(2) * q(0)), -sin(q(1))).finished();
      },
      [](const Vec& q) {
        using std::cos;
        return Scalar(2) * cos(Scalar(2) * q(0)) + cos(q(1));
      }};
  auto force = ForceField<Scalar>::position_only(
      2, [dir](const Vec&) { return dir; }, [](const Vec&) { return Mat::Zero(2, 2).eval(); });
  const Vec inv_m = mass.cwiseInverse();
  std::vector<Observable<Scalar>> obs = {
      {"velocity", [dir, inv_m](const Vec&, const Vec& p) { return dir.dot(inv_m.cwiseProduct(p)); }}};
  return {2,
          static_cast<Scalar>(o.beta.value_or(1.0)),
          static_cast<Scalar>(o.gamma.value_or(1.0)),
          mass,
          Domain<Scalar>::torus(Vec::Constant(2, two_pi)),
          std::move(pot),
          std::move(force),
          std::move(obs),
          "example3"};
}

/// Built-in model by CLI name: "example1", "example2", "example3".
template <typename Scalar = double>
LangevinModel<Scalar> builtin_model(const std::string& name, const ModelOverrides& o = {}) {
  if (name == "example1") return example1_model<Scalar>(o);
  if (name == "example2") return example2_model<Scalar>(o);
  if (name == "example3") return example3_model<Scalar>(o);
  throw ConfigError("unknown model '" + name + "' (expected example1, example2 or example3)");
}

}  // namespace lrmp
