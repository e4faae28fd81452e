#pragma once

#include "lrmp/model.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <string>

namespace lrmp {

enum class Flow : char { A = 'A', B = 'B', C = 'C' };

/// Splitting scheme: one of the six first-order permutations of (A, B, C) or a Strang composition.
struct SchemeKind {
  enum class Family { FirstOrder, BACAB, ABCBA, CBABC, CABAC };

  Family family = Family::BACAB;
  std::array<Flow, 3> order{Flow::B, Flow::A, Flow::C};  // FirstOrder only

  static SchemeKind first_order(Flow a, Flow b, Flow c) {
    if (a == b || b == c || a == c) throw ConfigError("first-order scheme must use each of A, B, C exactly once");
    return {Family::FirstOrder, {a, b, c}};
  }
  static SchemeKind bacab() { return {Family::BACAB, {}}; }
  static SchemeKind abcba() { return {Family::ABCBA, {}}; }
  static SchemeKind cbabc() { return {Family::CBABC, {}}; }
  static SchemeKind cabac() { return {Family::CABAC, {}}; }

  /// Case-insensitive: "bac", "abc", ... (first order), "bacab", "abcba", "cbabc", "cabac".
  static SchemeKind parse(const std::string& s) {
    std::string u;
    for (char c : s) u += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (u == "BACAB") return bacab();
    if (u == "ABCBA") return abcba();
    if (u == "CBABC") return cbabc();
    if (u == "CABAC") return cabac();
    if (u.size() == 3) {
      auto flow = [&](char c) {
        if (c != 'A' && c != 'B' && c != 'C') throw ConfigError("unknown scheme '" + s + "'");
        return static_cast<Flow>(c);
      };
      return first_order(flow(u[0]), flow(u[1]), flow(u[2]));
    }
    throw ConfigError("unknown scheme '" + s + "'");
  }

  std::string name() const {
    switch (family) {
      case Family::BACAB: return "bacab";
      case Family::ABCBA: return "abcba";
      case Family::CBABC: return "cbabc";
      case Family::CABAC: return "cabac";
      case Family::FirstOrder: break;
    }
    std::string n;
    for (Flow f : order) n += static_cast<char>(std::tolower(static_cast<char>(f)));
    return n;
  }

  bool second_order() const { return family != Family::FirstOrder; }
  /// Two independent Gaussian vectors per step (the two half-step C flows).
  bool two_noises() const { return family == Family::CBABC || family == Family::CABAC; }
  bool bacab_like() const { return family == Family::BACAB || family == Family::ABCBA; }

  friend bool operator==(const SchemeKind& a, const SchemeKind& b) {
    return a.family == b.family && (a.family != Family::FirstOrder || a.order == b.order);
  }
};

/// Gaussian draws consumed by one step: G1 always, G2 only for two-noise schemes (size 0 otherwise).
template <typename Scalar>
struct StepNoise {
  Vector<Scalar> g1;
  Vector<Scalar> g2;

  /// Fixed draw order: g1(0..D-1), then g2(0..D-1).
  template <typename Rng>
  static StepNoise draw(int dim, bool two, Rng& rng) {
    StepNoise n;
    n.g1.resize(dim);
    for (int i = 0; i < dim; ++i) n.g1(i) = static_cast<Scalar>(rng.normal());
    if (two) {
      n.g2.resize(dim);
      for (int i = 0; i < dim; ++i) n.g2(i) = static_cast<Scalar>(rng.normal());
    }
    return n;
  }
};

template <typename Scalar>
struct StepRecord {
  StepNoise<Scalar> noise;
  PhaseState<Scalar> state_before;
  PhaseState<Scalar> state_after;

  const Vector<Scalar>& gaussians() const { return noise.g1; }
  bool has_pair() const { return noise.g2.size() > 0; }
};

/// q <- wrap(q + h M^{-1} p).
template <typename Scalar>
PhaseState<Scalar> flow_A(const PhaseState<Scalar>& y, Scalar h, const LangevinModel<Scalar>& model) {
  return {wrap_position<Scalar>(y.q + h * model.inv_mass().cwiseProduct(y.p), model.domain()), y.p};
}

/// p <- p + h (-grad V(q) + eta F(q, p)).
template <typename Scalar>
PhaseState<Scalar> flow_B(const PhaseState<Scalar>& y, Scalar h, Scalar eta, const LangevinModel<Scalar>& model) {
  Vector<Scalar> force = -model.potential().grad(y.q);
  if (eta != Scalar(0)) force += eta * model.force().value(y.q, y.p);
  return {y.q, y.p + h * force};
}

/// Exact Ornstein-Uhlenbeck step on p: p_i <- a_i p_i + sqrt((1 - a_i^2) m_i / beta) G_i, a_i = exp(-gamma h / m_i).
template <typename Scalar>
PhaseState<Scalar> flow_C(const PhaseState<Scalar>& y, Scalar h, const Vector<Scalar>& g,
                          const LangevinModel<Scalar>& model) {
  using std::exp;
  using std::sqrt;
  const Vector<Scalar> a = (-model.gamma() * h * model.inv_mass().array()).exp().matrix();
  const Vector<Scalar> s = ((Scalar(1) - a.array().square()) * model.mass().array() / model.beta()).sqrt().matrix();
  return {y.q, a.cwiseProduct(y.p) + s.cwiseProduct(g)};
}

/// Splitting integrator at a fixed step size with the OU coefficients cached.
template <typename Scalar>
class SplittingIntegrator {
 public:
  using Vec = Vector<Scalar>;

  SplittingIntegrator(const LangevinModel<Scalar>& model, SchemeKind scheme, Scalar h)
      : model_(&model), scheme_(scheme), h_(h) {
    if (!(h > 0)) throw ConfigError("step size h must be > 0");
    const Scalar hc = scheme.two_noises() ? h / 2 : h;
    alpha_ = (-model.gamma() * hc * model.inv_mass().array()).exp().matrix();
    sigma_ = ((Scalar(1) - alpha_.array().square()) * model.mass().array() / model.beta()).sqrt().matrix();
  }

  const LangevinModel<Scalar>& model() const { return *model_; }
  const SchemeKind& scheme() const { return scheme_; }
  Scalar h() const { return h_; }

  template <typename Rng>
  StepNoise<Scalar> draw_noise(Rng& rng) const {
    return StepNoise<Scalar>::draw(model_->dim(), scheme_.two_noises(), rng);
  }

  /// Advance y in place by one step driven by the given noise.
  void advance(PhaseState<Scalar>& y, Scalar eta, const StepNoise<Scalar>& noise) const {
    const Scalar h = h_, h2 = h_ / 2;
    switch (scheme_.family) {
      case SchemeKind::Family::FirstOrder:
        for (Flow f : scheme_.order) {
          if (f == Flow::A) drift(y, h);
          else if (f == Flow::B) kick(y, h, eta);
          else ou(y, noise.g1);
        }
        break;
      case SchemeKind::Family::BACAB:
        kick(y, h2, eta);
        drift(y, h2);
        ou(y, noise.g1);
        drift(y, h2);
        kick(y, h2, eta);
        break;
      case SchemeKind::Family::ABCBA:
        drift(y, h2);
        kick(y, h2, eta);
        ou(y, noise.g1);
        kick(y, h2, eta);
        drift(y, h2);
        break;
      case SchemeKind::Family::CBABC:
        ou(y, noise.g1);
        kick(y, h2, eta);
        drift(y, h);
        kick(y, h2, eta);
        ou(y, noise.g2);
        break;
      case SchemeKind::Family::CABAC:
        ou(y, noise.g1);
        drift(y, h2);
        kick(y, h, eta);
        drift(y, h2);
        ou(y, noise.g2);
        break;
    }
  }

  /// Draw this step's Gaussians from rng, advance, and return the full record.
  template <typename Rng>
  StepRecord<Scalar> step(const PhaseState<Scalar>& y, Scalar eta, Rng& rng) const {
    StepRecord<Scalar> rec{draw_noise(rng), y, y};
    advance(rec.state_after, eta, rec.noise);
    return rec;
  }

 private:
  void drift(PhaseState<Scalar>& y, Scalar t) const {
    y.q += t * model_->inv_mass().cwiseProduct(y.p);
    if (model_->domain().periodic()) y.q = wrap_position<Scalar>(y.q, model_->domain());
  }
  void kick(PhaseState<Scalar>& y, Scalar t, Scalar eta) const {
    if (eta != Scalar(0)) y.p += t * (eta * model_->force().value(y.q, y.p) - model_->potential().grad(y.q));
    else y.p -= t * model_->potential().grad(y.q);
  }
  void ou(PhaseState<Scalar>& y, const Vec& g) const { y.p = alpha_.cwiseProduct(y.p) + sigma_.cwiseProduct(g); }

  const LangevinModel<Scalar>* model_;
  SchemeKind scheme_;
  Scalar h_;
  Vec alpha_;
  Vec sigma_;
};

/// One step of `scheme` from y; rejects h <= 0.
template <typename Scalar, typename Rng>
StepRecord<Scalar> step(const LangevinModel<Scalar>& model, SchemeKind scheme, const PhaseState<Scalar>& y, Scalar h,
                        Scalar eta, Rng& rng) {
  return SplittingIntegrator<Scalar>(model, scheme, h).step(y, eta, rng);
}

}  // namespace lrmp
