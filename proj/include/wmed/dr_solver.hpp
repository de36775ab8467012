#pragma once

// Douglas-Rachford splitting for the discrete Beckmann formulation of the
// Wasserstein median problem
//
//   min  sum_q lambda_q ||sigma_q||_{1,2} + I_simplex(nu)
//   s.t. div sigma_q + nu_q = nu   for every sample q.
//
// The separable part is handled by per-cell shrinkage (threshold tau*lambda_q
// on flow q) and the simplex projection; the affine constraint by
// project_flows. With uniform weights the thresholds are all tau/N.

#include "wmed/common.hpp"
#include "wmed/grid2d.hpp"
#include "wmed/prox.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace wmed {

struct DRParams {
  double tau = 0.1;
  /// Relaxation theta_k in [0, 2). Defaults to the constant 1.
  std::function<double(int)> relaxation = [](int) { return 1.0; };
  double tol = 1e-7;
  int max_iter = 5000;
  double cg_tol = 1e-10;
  int cg_max_iter = 20000;
  /// Linear solves inside the projection. Both honour cg_tol as a relative residual.
  EllipticMethod linear_solver = EllipticMethod::cholesky;
  /// 0 keeps the deterministic start (eta = 0, mu uniform); otherwise the
  /// initial flows are drawn from a seeded normal distribution.
  std::uint64_t seed = 0;
  /// Progress callback invoked after every iteration (may be empty).
  std::function<void(int iter, double residual)> on_iteration;
};

struct DRState {
  std::vector<FlowField> eta;
  ScalarField mu;
  int iter = 0;
  std::vector<double> residual_history;
  std::vector<double> primal_history;
  ProjectionCache cache;  ///< CG warm starts; does not affect the iterates beyond cg_tol
  std::shared_ptr<const EllipticSolver> solver;
};

/// Quantities produced inside one step.
struct DRIterate {
  std::vector<FlowField> sigma;  ///< shrinkage output
  ScalarField nu;                ///< simplex projection of mu
  FlowTuple projected;           ///< projection of the reflected point onto F_h
  std::vector<ScalarField> xi;   ///< multipliers of that projection
  double residual = 0.0;
};

struct MedianSolution {
  ScalarField median;
  std::vector<FlowField> flows;
  std::vector<ScalarField> densities;
  /// Potentials w_q with grad w_q the normalized dual direction of flow q.
  std::vector<ScalarField> potentials;
  double primal_value = 0.0;
  int iterations = 0;
  double final_residual = 0.0;
  std::vector<double> residual_history;
  std::vector<double> primal_history;
};

class MedianNoConvergence : public NoConvergence {
 public:
  MedianNoConvergence(MedianSolution partial)
      : NoConvergence("douglas-rachford: residual above tolerance at max_iter", partial.iterations,
                      partial.final_residual),
        partial_(std::move(partial)) {}
  const MedianSolution& partial() const noexcept { return partial_; }

 private:
  MedianSolution partial_;
};

/// Checks samples (same p x p grid, unit mass, nonnegative) and weights.
void validate_median_problem(std::span<const ScalarField> samples, const Weights& lambda);

DRState initial_state(std::span<const ScalarField> samples, const DRParams& params);

/// One Douglas-Rachford iteration. Returns the iterate quantities; `state` is advanced.
DRIterate dr_step(DRState& state, std::span<const ScalarField> samples, const Weights& lambda,
                  const DRParams& params);

/// Iterates until the residual drops to params.tol. Throws MedianNoConvergence
/// carrying the last iterate when max_iter is reached first.
MedianSolution solve_median(std::span<const ScalarField> samples, const Weights& lambda,
                            const DRParams& params = {});

/// sum_q lambda_q sum_cells |sigma_q(cell)|.
double primal_value(std::span<const FlowField> flows, const Weights& lambda);

/// Packages an iterate: the reported median is the simplex-projected nu, and the
/// flows are corrected by a gradient so that div sigma_q + nu_q = nu holds to
/// cg tolerance against that median.
MedianSolution extract_solution(const DRState& state, const DRIterate& it,
                                std::span<const ScalarField> samples, const Weights& lambda,
                                const DRParams& params);

struct MKReport {
  std::vector<double> constraint_residuals;  ///< ||div sigma_i + nu_i - nu||_2
  /// Fraction of transport-density mass sitting on cells where the potential
  /// gradient deviates from unit length by more than direction_tol.
  std::vector<double> off_unit_fraction;
  double direction_tol = 0.05;
  double dual_value = 0.0;          ///< sum lambda_i <w_i, nu_i - nu> with w_i rescaled to be 1-Lipschitz
  double complementarity_gap = 0.0;  ///< primal_value - dual_value
  double max_constraint_residual() const;
};

MKReport mk_residuals(const MedianSolution& solution, std::span<const ScalarField> samples,
                      const Weights& lambda, double direction_tol = 0.05);

}  // namespace wmed
