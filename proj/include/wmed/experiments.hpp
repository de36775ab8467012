#pragma once

// Experiment harness: breakdown sweeps, stability probes and the four-rectangle
// instance. Every report carries the parameters, seeds and solver residuals it
// was produced with.

#include "wmed/dr_solver.hpp"
#include "wmed/geom_oracle.hpp"
#include "wmed/median1d.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace wmed {

struct ExperimentSpec {
  std::string name;
  nlohmann::json generator;  ///< instance generator parameters
  nlohmann::json solver;     ///< solver parameters
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const ExperimentSpec& spec);
nlohmann::json to_json(const DRParams& params);

// ---------------------------------------------------------------------------
// W1 between grid measures

struct W1Bracket {
  double lower = 0.0;
  double upper = 0.0;
  double estimate = 0.0;  ///< exact W1 of the block-aggregated measures
};

/// Euclidean W1 in physical coordinates. Grids up to max_side x max_side are
/// solved exactly; larger grids are aggregated into blocks (each block's mass
/// moved to its centroid) and the aggregation cost, which is an explicit
/// transport plan, is added to or subtracted from the exact coarse value. The
/// lower end is also raised to the sliced lower bound of the full measures.
W1Bracket w1_grid(const ScalarField& a, const ScalarField& b, const GridFrame& frame = {},
                  Index max_side = 16);

// ---------------------------------------------------------------------------
// Breakdown

/// Largest subset weight strictly below 1/2 (exhaustive; N <= 30).
double largest_minority_weight(const Weights& lambda);

enum class SelectionKind { vertical, horizontal };

struct Selection {
  SelectionKind kind = SelectionKind::vertical;
  double theta = 0.5;
};

Measure1D select_median(const Selection& s, const Weights& lambda, std::span<const Measure1D> samples);

/// Vertical and horizontal selections at theta in {0, 1/2, 1}.
std::vector<Selection> standard_selections();

/// max over medians rho and samples i of W1(rho, nu_i), bounded above by
/// max_i integral of max(|m^- - F_i|, |m^+ - F_i|). Every median CDF lies
/// between m^- and m^+, so the bound is safe.
double median_spread_bound_1d(const Weights& lambda, std::span<const Measure1D> samples);

struct BreakdownRow {
  double displacement = 0.0;
  double movement = 0.0;        ///< 1D: max over selection pairs; 2D: upper W1 bracket
  double movement_lower = 0.0;  ///< 1D: min over selection pairs; 2D: lower W1 bracket
  double bound = 0.0;           ///< bounded regime only
  double suboptimality = 0.0;   ///< 2D: duality gap of the corrupted median, physical units
  bool converged = true;
  bool ok = false;
};

struct BreakdownReport {
  std::string mode;  ///< "1d" or "2d"
  std::vector<Index> corrupt;
  double corrupt_weight = 0.0;
  double delta = 0.0;  ///< largest minority weight of the weight vector
  double spread = 0.0;  ///< C
  bool bounded_regime = false;
  double base_suboptimality = 0.0;
  std::vector<BreakdownRow> rows;
  bool passed = false;
  nlohmann::json provenance;
};

nlohmann::json to_json(const BreakdownReport& r);
std::string breakdown_csv(const BreakdownReport& r);

/// Samples in `corrupt` are replaced by one Dirac at anchor + D for each D. The
/// anchor defaults to the mean of the vertical 1/2 selection of the originals.
/// Bounded regime (corrupt weight < 1/2): every selection pair must satisfy
/// W1 <= 2 C delta / (1 - 2 delta) + 2 C up to rounding. Otherwise the largest
/// selection movement at the largest D must be >= D / 2.
BreakdownReport breakdown_sweep_1d(std::span<const Measure1D> samples, const Weights& lambda,
                                   std::span<const Index> corrupt, std::span<const double> displacements,
                                   const double* anchor = nullptr);

struct Breakdown2DOptions {
  GridFrame frame;
  Eigen::Vector2d anchor = Eigen::Vector2d::Zero();     ///< physical position of D = 0
  Eigen::Vector2d direction = Eigen::Vector2d::UnitX();
  DRParams solver;
  Index w1_side = 16;  ///< see w1_grid
  int threads = 1;     ///< displacements solved concurrently
};

/// Same with DR medians. C is bounded by max_i min_k (D / lambda_k + W1(nu_k, nu_i))
/// with D the dispersion of the computed median (upper brackets throughout),
/// and is raised to max_i W1(median, nu_i) since that is what the bound really
/// uses. The bound is inflated by 4 (base + corrupted duality gap). Each Dirac
/// snaps to the nearest cell; displacements leaving the grid throw.
BreakdownReport breakdown_sweep_2d(std::span<const ScalarField> samples, const Weights& lambda,
                                   std::span<const Index> corrupt, std::span<const double> displacements,
                                   const Breakdown2DOptions& options);

/// Lower bound on the optimal dispersion of the grid median problem from the
/// potentials of a solution, in grid units: with w_i rescaled to slope <= 1,
/// sum lambda_i <w_i, nu_i> - max_cells sum lambda_i w_i.
double dual_lower_bound(const MedianSolution& sol, std::span<const ScalarField> samples,
                        const Weights& lambda);

// ---------------------------------------------------------------------------
// Stability

struct StabilityTrial {
  double rhs = 0.0;  ///< sum_i W1(nu_i, perturbed nu_i)
  std::vector<double> movement;  ///< one per selection
};

struct StabilityReport1D {
  double scale = 0.0;
  std::uint64_t seed = 0;
  std::vector<Selection> selections;
  std::vector<StabilityTrial> trials;
  double worst_ratio = 0.0;  ///< max movement / rhs over trials with rhs > 0
  int violations = 0;
  bool passed = false;
  nlohmann::json provenance;
};

nlohmann::json to_json(const StabilityReport1D& r);

/// Perturbs every piece of every sample by an independent shift in
/// [-scale, scale] and checks W1(sel(nu), sel(nu~)) <= sum_i W1(nu_i, nu~_i)
/// for each selection, up to rounding.
StabilityReport1D stability_probe_1d(std::span<const Measure1D> samples, const Weights& lambda,
                                     double scale, std::span<const Selection> selections, int trials,
                                     std::uint64_t seed);

struct StabilityReport2D {
  std::vector<double> scales;
  std::vector<double> mean_movement;  ///< averaged over trials, W1 estimate
  std::vector<double> mean_rhs;
  bool nondecreasing = false;
  int trials = 0;
  std::uint64_t seed = 0;
  nlohmann::json provenance;
};

nlohmann::json to_json(const StabilityReport2D& r);

/// nu~_i = (1 - s) nu_i + s eta_i with one random eta_i per trial and sample,
/// shared across the scales s so each trial moves along a segment.
StabilityReport2D stability_trend_2d(std::span<const ScalarField> samples, const Weights& lambda,
                                     std::span<const double> scales, int trials, std::uint64_t seed,
                                     const DRParams& solver, const GridFrame& frame = {});

// ---------------------------------------------------------------------------
// Four rectangles

struct QuadrilateralInstance {
  std::vector<ScalarField> samples;
  GridFrame frame;  ///< covers [-1 - ell, 1 + ell]^2
};

/// Uniform measures on [-1 - ell, -1] x [-eps/2, eps/2] and its rotations by
/// 90, 180 and 270 degrees, rasterized by exact cell coverage.
QuadrilateralInstance quadrilateral_instance(double epsilon, double ell, Index p);

struct QuadrilateralReport {
  double epsilon = 0.0;
  double ell = 0.0;
  Index p = 0;
  double h = 0.0;
  double central_mass = 0.0;  ///< median mass on cells with centre in [-eps/2 - h, eps/2 + h]^2
  double median_linf = 0.0;   ///< max cell density of the median
  double sample_linf = 0.0;   ///< max cell density over the samples
  double ratio = 0.0;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  nlohmann::json provenance;
};

nlohmann::json to_json(const QuadrilateralReport& r);

/// Solves the instance with uniform weights. A NoConvergence is absorbed into
/// `converged`; the partial median is still measured. `solution` receives it.
QuadrilateralReport quadrilateral_counterexample(double epsilon, double ell, Index p, const DRParams& params,
                                                 MedianSolution* solution = nullptr);

}  // namespace wmed
