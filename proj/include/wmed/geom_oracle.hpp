#pragma once

// Small exact solvers in the plane: geometric medians with optimality
// certificates, exact W1 between finite point clouds, and the support and
// moment checks that every Wasserstein median must satisfy.

#include "wmed/common.hpp"
#include "wmed/grid2d.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace wmed {

/// Finite probability measure in the plane; column k of `points` carries masses(k).
struct PointCloud {
  Eigen::Matrix2Xd points;
  Eigen::VectorXd masses;

  /// Validates finite entries and positive masses summing to 1 within 1e-9,
  /// then renormalizes.
  static PointCloud make(Eigen::Matrix2Xd points, Eigen::VectorXd masses);
  static PointCloud dirac(const Eigen::Vector2d& x);
  Index size() const noexcept { return masses.size(); }
};

/// Physical placement of a p x p grid: cell (i, j) has centre
/// origin + ((i + 1/2) h, (j + 1/2) h). Defaults to the unit square.
struct GridFrame {
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  double h = 0.0;  ///< 0 means 1/p

  Eigen::Vector2d center(Index i, Index j, Index p) const;
  double step(Index p) const { return h > 0.0 ? h : 1.0 / static_cast<double>(p); }
};

/// Cells with mass > drop become atoms at their centres. The dropped mass is
/// removed and the rest renormalized; `dropped` receives the removed total.
PointCloud grid_cloud(const ScalarField& v, const GridFrame& frame = {}, double drop = 0.0,
                      double* dropped = nullptr);

struct MedianCertificate {
  Eigen::Vector2d point;
  Eigen::Matrix2Xd subgradients;  ///< p_i, one column per input point
  double residual = 0.0;          ///< || sum lambda_i p_i ||
  int iterations = 0;
};

/// Certificate of `x`: unit vectors (x - x_i)/|x - x_i| off anchors, and the
/// minimal-norm admissible choice (a common vector of norm <= 1) at anchors.
MedianCertificate certify_median(const Eigen::Matrix2Xd& points, const Weights& lambda,
                                 const Eigen::Vector2d& x);

/// Weighted geometric median with residual <= tol. Anchors are tested first;
/// otherwise Weiszfeld steps with Newton polishing. Throws NoConvergence.
MedianCertificate weiszfeld(const Eigen::Matrix2Xd& points, const Weights& lambda,
                            double tol = 1e-10, int max_iter = 100000);

/// min_y sum lambda_i |x_i - y|.
double c_lambda(const Eigen::Matrix2Xd& points, const Weights& lambda, double tol = 1e-10);

/// Exact W1 by splitting both measures into D equal atoms (D the smallest common
/// denominator <= atom_budget, masses matched to 1e-9) and solving the D x D
/// assignment problem. Throws BudgetExceeded when no such D exists.
double w1_exact_small(const PointCloud& a, const PointCloud& b, int atom_budget);

/// Exact W1 for arbitrary real masses (transportation problem solved by
/// successive shortest paths). Throws BudgetExceeded when
/// a.size() * b.size() > max_pairs.
double w1_transport(const PointCloud& a, const PointCloud& b, double max_pairs = 4e7);

/// Lower bound max over `directions` equally spaced unit vectors e of the
/// one-dimensional W1 between the projections <x, e>.
double w1_projection_lower_bound(const PointCloud& a, const PointCloud& b, int directions = 90);

/// True iff every support point of `candidate` is within tol of the ground
/// median set M_lambda(positions) (a segment for collinear positions, the
/// unique geometric median otherwise).
bool dirac_median_check(const Eigen::Matrix2Xd& positions, const Weights& lambda,
                        const PointCloud& candidate, double tol);

struct MomentReport {
  double p = 1.0;
  double median_moment = 0.0;   ///< integral of |x|^p against the median
  double sample_moments = 0.0;  ///< sum_i integral of |x|^p against sample i
  double slack = 0.0;
  bool moment_ok = false;
  double hull_distance = 0.0;      ///< max distance of median support to the sample hull
  double mass_outside_hull = 0.0;  ///< median mass farther than hull_slack from the hull
  double hull_slack = 0.0;
  bool hull_ok = false;
};

/// Moment bound and hull containment for point clouds; `slack` is added to the
/// right-hand side of the moment bound and `hull_slack` to the hull distance.
MomentReport moment_bound_check(const PointCloud& median, std::span<const PointCloud> samples,
                                double p, double slack = 0.0, double hull_slack = 0.0);

/// Grid version in physical coordinates, with slack h p max|x|^(p-1) on the
/// moments and h on the hull. Median cells below `support_tol` are ignored by
/// the hull distance but still counted in mass_outside_hull.
MomentReport moment_bound_check(const ScalarField& median, std::span<const ScalarField> samples,
                                double p, const GridFrame& frame = {}, double support_tol = 1e-9);

}  // namespace wmed
