#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <stdexcept>
#include <string>

namespace lrmp {

/// Largest phase-space dimension D supported by the stack-allocated vector types.
inline constexpr int kMaxDim = 6;

/// Length-D column vector with inline storage (no heap traffic inside the step loop).
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;

/// D x D matrix with inline storage.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

/// Symmetric-in-(i,j) rank-3 array T(i,j,k) = d^2 F_k / dp_i dp_j, one D x D slab per k.
template <typename Scalar>
struct Tensor3 {
  int dim = 0;
  std::array<Matrix<Scalar>, kMaxDim> slab;

  static Tensor3 zero(int d) {
    Tensor3 t;
    t.dim = d;
    for (int k = 0; k < d; ++k) t.slab[k] = Matrix<Scalar>::Zero(d, d);
    return t;
  }

  Scalar& operator()(int i, int j, int k) { return slab[k](i, j); }
  Scalar operator()(int i, int j, int k) const { return slab[k](i, j); }

  /// T : g (x) g (x) g
  template <typename Derived>
  Scalar contract3(const Eigen::MatrixBase<Derived>& g) const {
    Scalar acc(0);
    for (int k = 0; k < dim; ++k) acc += g(k) * g.dot(slab[k] * g);
    return acc;
  }

  Scalar max_abs() const {
    Scalar m(0);
    for (int k = 0; k < dim; ++k) m = std::max(m, slab[k].cwiseAbs().maxCoeff());
    return m;
  }
};

/// Invalid model / scheme / estimator configuration. Surfaces before any simulation runs.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace lrmp
