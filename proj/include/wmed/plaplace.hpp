#pragma once

// Penalized p-Laplace approximation of the median problem on the grid.
//
//   J(u) = (1/p) sum_i sum_cells |grad u_i|^p
//        + (1/2 eps) sum_cells (sum_j lambda_j u_j)_+^2
//        - sum_i lambda_i <u_i, nu_i>
//
// Unit cell weights, same conventions as grid2d. The minimizer is unique once
// u_1..u_{N-1} are pinned to zero mean; from it one reads off flows
// sigma_i = |grad u_i|^(p-2) grad u_i / lambda_i and an approximate median
// nu = (sum_j lambda_j u_j)_+ / eps satisfying div sigma_i + nu_i = nu.

#include "wmed/common.hpp"
#include "wmed/grid2d.hpp"

#include <functional>
#include <span>
#include <vector>

namespace wmed {

using PotentialVector = std::vector<ScalarField>;

enum class DescentMethod {
  gradient,  ///< steepest descent on the normalized subspace
  lbfgs,     ///< limited-memory quasi-Newton directions, same line search
  newton,    ///< Levenberg-damped Newton directions (sparse factorization), same line search
};

struct PLaplaceParams {
  double epsilon = 1e-2;
  double p_eps = 4.0;  ///< exponent, >= 2
  double armijo = 1e-4;
  double backtrack = 0.5;
  double tol = 1e-7;  ///< on the Euclidean norm of the projected gradient
  int max_iter = 100000;
  DescentMethod method = DescentMethod::newton;
  int memory = 12;  ///< L-BFGS pairs
  std::function<void(int iter, double j, double grad_norm)> on_iteration;
};

void validate_plaplace_problem(std::span<const ScalarField> samples, const Weights& lambda,
                               const PLaplaceParams& params);

double j_eps(const PotentialVector& u, std::span<const ScalarField> samples, const Weights& lambda,
             const PLaplaceParams& params);

/// Gradient of j_eps with respect to every cell value of every u_i (no gauge projection).
PotentialVector j_eps_gradient(const PotentialVector& u, std::span<const ScalarField> samples,
                               const Weights& lambda, const PLaplaceParams& params);

/// Subtracts the mean of u_1..u_{N-1}; u_N is left alone.
void normalize_potentials(PotentialVector& u);

struct EpsQuantities {
  std::vector<FlowField> flows;
  ScalarField nu;
};

EpsQuantities extract_eps_quantities(const PotentialVector& u, const PLaplaceParams& params,
                                     const Weights& lambda);

struct PLaplaceReport {
  double epsilon = 0.0;
  double p_eps = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> j_history;  ///< J after every accepted step, starting at the initial point
  double gradient_norm = 0.0;     ///< projected gradient, Euclidean
  /// max over i and cells of |weak residual| / lambda_i against single-cell
  /// indicators, i.e. the flux equation residual in the max norm.
  double weak_residual = 0.0;
  /// Same against indicators of 4 x 4 blocks.
  double block_residual = 0.0;
  double flux_residual = 0.0;  ///< max_i ||div sigma_i + nu_i - nu||_2
  double mass = 0.0;           ///< sum of nu over the grid
  double obstacle = 0.0;       ///< sum_cells (sum_j lambda_j u_j)_+^2
};

struct PLaplaceResult {
  PotentialVector u;
  EpsQuantities eps;
  PLaplaceReport report;
};

class PLaplaceNoConvergence : public NoConvergence {
 public:
  explicit PLaplaceNoConvergence(PLaplaceResult partial)
      : NoConvergence("p-laplace: gradient above tolerance at max_iter", partial.report.iterations,
                      partial.report.gradient_norm),
        partial_(std::move(partial)) {}
  const PLaplaceResult& partial() const noexcept { return partial_; }

 private:
  PLaplaceResult partial_;
};

/// Monotone descent from `initial` (zero when null). Throws PLaplaceNoConvergence.
PLaplaceResult minimize_j_eps(std::span<const ScalarField> samples, const Weights& lambda,
                              const PLaplaceParams& params, const PotentialVector* initial = nullptr);

/// Residual diagnostics of an arbitrary potential vector.
PLaplaceReport plaplace_report(const PotentialVector& u, std::span<const ScalarField> samples,
                               const Weights& lambda, const PLaplaceParams& params);

}  // namespace wmed
