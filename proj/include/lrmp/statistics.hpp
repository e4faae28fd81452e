#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace lrmp {

/// Raised when a variance is requested from fewer than two samples.
class UndefinedVarianceError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct MeanVarSummary {
  double mean;
  double variance;
  double stderr_;
};

/// One-pass mean / sum-of-squared-deviations (Welford), with exact pairwise merge (Chan et al.).
class MeanVarAccumulator {
 public:
  void update(double x) {
    ++count_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (x - mean_);
  }

  void merge(const MeanVarAccumulator& o) {
    if (o.count_ == 0) return;
    if (count_ == 0) {
      *this = o;
      return;
    }
    const double na = static_cast<double>(count_), nb = static_cast<double>(o.count_);
    const double n = na + nb;
    const double delta = o.mean_ - mean_;
    mean_ += delta * nb / n;
    m2_ += o.m2_ + delta * delta * na * nb / n;
    count_ += o.count_;
  }

  std::int64_t count() const { return count_; }
  double mean() const { return mean_; }
  double m2() const { return m2_; }

  double variance() const {
    if (count_ < 2) throw UndefinedVarianceError("variance needs at least two samples");
    return m2_ / static_cast<double>(count_ - 1);
  }

  MeanVarSummary finalize() const {
    const double v = variance();
    return {mean_, v, std::sqrt(v / static_cast<double>(count_))};
  }

 private:
  std::int64_t count_ = 0;
  double mean_ = 0;
  double m2_ = 0;
};

struct CovSummary {
  double covariance;
  double stderr_;  // of the centered products (x - xbar)(y - ybar)
};

/// Streaming co-moments up to order (2,2). The fourth-order sums let the standard error of the
/// centered products be recovered after merging without a second pass.
class CovAccumulator {
 public:
  void update(double x, double y) {
    CovAccumulator one;
    one.count_ = 1;
    one.mean_x_ = x;
    one.mean_y_ = y;
    merge(one);
  }

  void merge(const CovAccumulator& o) {
    if (o.count_ == 0) return;
    if (count_ == 0) {
      *this = o;
      return;
    }
    const double na = static_cast<double>(count_), nb = static_cast<double>(o.count_);
    const double n = na + nb;
    const double dx = o.mean_x_ - mean_x_, dy = o.mean_y_ - mean_y_;
    // Shift of each partition's centre to the merged centre.
    const double ax = -dx * nb / n, ay = -dy * nb / n;  // this partition
    const double bx = dx * na / n, by = dy * na / n;     // other partition

    Moments merged;
    for (int i = 0; i <= 2; ++i)
      for (int j = 0; j <= 2; ++j) merged.s[i][j] = shifted(s_, na, ax, ay, i, j) + shifted(o.s_, nb, bx, by, i, j);
    s_ = merged;
    mean_x_ += dx * nb / n;
    mean_y_ += dy * nb / n;
    count_ += o.count_;
  }

  std::int64_t count() const { return count_; }
  double mean_x() const { return mean_x_; }
  double mean_y() const { return mean_y_; }
  double c2() const { return s_.s[1][1]; }
  double m2_x() const { return s_.s[2][0]; }
  double m2_y() const { return s_.s[0][2]; }

  /// Unbiased sample covariance, divisor count - 1.
  double covariance() const {
    if (count_ < 2) throw UndefinedVarianceError("covariance needs at least two samples");
    return s_.s[1][1] / static_cast<double>(count_ - 1);
  }

  CovSummary finalize() const {
    const double cov = covariance();
    const double n = static_cast<double>(count_);
    // Sample variance of u_i = (x_i - xbar)(y_i - ybar): mean of u is c2/n.
    const double mean_u = s_.s[1][1] / n;
    double var_u = (s_.s[2][2] - n * mean_u * mean_u) / (n - 1);
    if (var_u < 0) var_u = 0;
    return {cov, std::sqrt(var_u / n)};
  }

 private:
  struct Moments {
    // s[i][j] = sum (x - mean_x)^i (y - mean_y)^j; s[0][0] is unused (count), s[1][0] = s[0][1] = 0.
    double s[3][3] = {};
  };

  static double binom(int n, int k) { return (k == 0 || k == n) ? 1.0 : static_cast<double>(n); }

  // Sum of (x - c - a)^i (y - d - b)^j given central sums about (c, d); a, b are the offsets
  // from the partition mean to the merged mean with sign such that x - merged = (x - c) + a.
  static double shifted(const Moments& m, double n, double a, double b, int i, int j) {
    double total = 0;
    for (int k = 0; k <= i; ++k) {
      for (int l = 0; l <= j; ++l) {
        double inner;
        if (k == 0 && l == 0) inner = n;
        else if (k + l == 1) inner = 0;
        else inner = m.s[k][l];
        total += binom(i, k) * binom(j, l) * std::pow(a, i - k) * std::pow(b, j - l) * inner;
      }
    }
    return total;
  }

  std::int64_t count_ = 0;
  double mean_x_ = 0;
  double mean_y_ = 0;
  Moments s_;
};

/// SplitMix64 finalizer: a bijective 64-bit avalanche mix.
constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct StreamSpec {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_index = 0;
};

/// Seed of the Mersenne Twister behind stream (seed, index):
/// splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019)).
constexpr std::uint64_t stream_seed(const StreamSpec& spec) {
  return splitmix64(splitmix64(spec.master_seed) ^ splitmix64(spec.stream_index + 0x632BE59BD9B4E019ULL));
}

/// Private per-realization random stream. Gaussians come from std::normal_distribution,
/// which in libstdc++ is the Marsaglia polar method (pairs, second value cached).
class RandomStream {
 public:
  explicit RandomStream(const StreamSpec& spec) : engine_(stream_seed(spec)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline RandomStream derive_stream(const StreamSpec& spec) { return RandomStream(spec); }

}  // namespace lrmp
