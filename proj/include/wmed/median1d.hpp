#pragma once

// Exact one-dimensional Wasserstein medians.
//
// A Measure1D is stored through its cumulative distribution function, which is
// piecewise linear and right-continuous: knots x_k carry the left limit F(x_k-)
// and the value F(x_k), and F is linear between consecutive knots. Finite
// atomic measures, histograms with uniform bins, and every median selection of
// such measures are represented without approximation.

#include "wmed/common.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

namespace wmed {

struct MedianInterval {
  double lower = 0.0;  ///< m^-
  double upper = 0.0;  ///< m^+

  double at(double theta) const noexcept { return (1.0 - theta) * lower + theta * upper; }
};

/// Tolerance on partial weight sums when comparing against 1/2.
inline constexpr double kHalfTolerance = 1e-12;

/// m^- = inf{y : sum_{x_i <= y} lambda_i >= 1/2},
/// m^+ = sup{y : sum_{x_i < y} lambda_i <= 1/2}. Both are sample points.
template <class Derived>
MedianInterval weighted_median_interval(const Eigen::DenseBase<Derived>& x,
                                        const Eigen::Ref<const Eigen::VectorXd>& lambda) {
  const Index n = x.size();
  if (n == 0 || lambda.size() != n)
    throw std::invalid_argument("weighted median: size mismatch or empty sample");
  // Small fixed-size sort; N is the number of samples.
  Index order[64];
  std::vector<Index> heap_order;
  Index* idx = order;
  if (n > 64) {
    heap_order.resize(static_cast<std::size_t>(n));
    idx = heap_order.data();
  }
  std::iota(idx, idx + n, Index{0});
  std::sort(idx, idx + n, [&](Index a, Index b) { return x(a) < x(b); });

  MedianInterval m{x(idx[n - 1]), x(idx[n - 1])};
  bool have_lower = false;
  double cumulative = 0.0;
  for (Index k = 0; k < n;) {
    const double v = x(idx[k]);
    while (k < n && x(idx[k]) == v) cumulative += lambda(idx[k++]);
    if (!have_lower && cumulative >= 0.5 - kHalfTolerance) {
      m.lower = v;
      have_lower = true;
    }
    if (cumulative > 0.5 + kHalfTolerance) {
      m.upper = v;
      break;
    }
  }
  return m;
}

template <class Derived>
MedianInterval weighted_median_interval(const Eigen::DenseBase<Derived>& x, const Weights& lambda) {
  return weighted_median_interval(x, Eigen::Ref<const Eigen::VectorXd>(lambda.values()));
}

/// (1 - theta) m^- + theta m^+.
template <class Derived>
double weighted_median(const Eigen::DenseBase<Derived>& x, const Weights& lambda, double theta) {
  return weighted_median_interval(x, lambda).at(theta);
}

/// A contiguous part of a measure: an atom when left == right, otherwise mass
/// spread uniformly over [left, right].
struct Piece {
  double left = 0.0;
  double right = 0.0;
  double mass = 0.0;
};

class Measure1D {
 public:
  /// Finite atomic measure. Positions need not be sorted; duplicates are merged,
  /// masses below 1e-15 are dropped and the rest renormalized. Masses must be
  /// nonnegative and sum to 1 within 1e-9.
  static Measure1D atomic(std::span<const double> positions, std::span<const double> masses);
  static Measure1D dirac(double x);
  /// Piecewise-constant density on bins [edges[k], edges[k+1]]; edges strictly increasing.
  static Measure1D histogram(std::span<const double> edges, std::span<const double> masses);
  /// Sum of pieces (which may overlap). Total mass must be 1 within 1e-9.
  static Measure1D from_pieces(std::span<const Piece> pieces);
  /// Direct CDF description: strictly increasing knots, left limits and values.
  static Measure1D from_cdf(Eigen::VectorXd knots, Eigen::VectorXd left, Eigen::VectorXd right);

  Index knot_count() const noexcept { return x_.size(); }
  const Eigen::VectorXd& knots() const noexcept { return x_; }
  const Eigen::VectorXd& cdf_left() const noexcept { return lo_; }
  const Eigen::VectorXd& cdf_right() const noexcept { return hi_; }

  double cdf(double x) const;         ///< F(x)
  double cdf_before(double x) const;  ///< F(x-)
  /// Q(t) = inf{x : F(x) >= t}; t <= 0 maps to the smallest support point.
  double quantile(double t) const;
  /// Q+(t) = inf{x : F(x) > t}; t >= 1 maps to the largest support point.
  double quantile_right(double t) const;

  double support_min() const noexcept { return x_(0); }
  double support_max() const noexcept { return x_(x_.size() - 1); }

  bool is_atomic() const;
  /// Atoms with their masses (the absolutely continuous part is skipped).
  Eigen::VectorXd atoms() const;
  Eigen::VectorXd masses() const;
  std::vector<Piece> pieces() const;

  double mean() const;
  Measure1D translated(double shift) const;

  /// Mass of [a, b] for bins: F(b) - F(a).
  double mass_between(double a, double b) const { return cdf(b) - cdf(a); }

  /// L^p norm of the density, +inf when an atom is present. p = +inf gives the max density.
  double density_lp_norm(double p) const;

 private:
  Measure1D() = default;
  void canonicalize();

  Eigen::VectorXd x_, lo_, hi_;
};

using DiscreteMeasure1D = Measure1D;

/// W1 = integral of |F_mu - F_nu|, exact on the merged knots.
double w1_1d(const Measure1D& mu, const Measure1D& nu);

/// sum_i lambda_i W1(nu_i, mu).
double dispersion(const Weights& lambda, std::span<const Measure1D> samples, const Measure1D& mu);

/// Measure with CDF (1 - theta) m^-(F_1, ..., F_N) + theta m^+(F_1, ..., F_N).
Measure1D vertical_selection(const Weights& lambda, std::span<const Measure1D> samples,
                             double theta);

/// Measure with quantile function (1 - theta) m^-(Q_1, ..., Q_N) + theta m^+(Q_1, ..., Q_N).
Measure1D horizontal_selection(const Weights& lambda, std::span<const Measure1D> samples,
                               double theta);

/// True iff F_candidate lies in [m^-, m^+](F_1, ..., F_N) within tol everywhere.
bool verify_median_1d(const Weights& lambda, std::span<const Measure1D> samples,
                      const Measure1D& candidate, double tol = 1e-10);

/// False iff some subset of weights sums to 1/2 within kHalfTolerance.
/// Exhaustive for N <= 44 (meet in the middle); throws std::length_error above.
bool selection_is_unique(const Weights& lambda);

}  // namespace wmed
