#include "wmed/dr_solver.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace wmed {

void validate_median_problem(std::span<const ScalarField> samples, const Weights& lambda) {
  if (samples.empty()) throw std::invalid_argument("median problem: no samples");
  if (static_cast<Index>(samples.size()) != lambda.size())
    throw std::invalid_argument("median problem: weight count differs from sample count");
  lambda.require_strictly_positive();
  const Index p = samples.front().rows();
  if (p < 2) throw std::invalid_argument("median problem: grid side must be >= 2");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ScalarField& s = samples[i];
    if (s.rows() != p || s.cols() != p)
      throw std::invalid_argument("median problem: samples must share one square grid");
    if (!is_grid_measure(s, 1e-9))
      throw std::invalid_argument("median problem: sample " + std::to_string(i) +
                                  " is not a probability measure");
  }
}

double primal_value(std::span<const FlowField> flows, const Weights& lambda) {
  double total = 0.0;
  for (std::size_t q = 0; q < flows.size(); ++q)
    total += lambda[static_cast<Index>(q)] * group_norm(flows[q]);
  return total;
}

DRState initial_state(std::span<const ScalarField> samples, const DRParams& params) {
  const Index p = samples.front().rows();
  DRState s;
  s.eta.assign(samples.size(), FlowField::zero(p));
  s.mu = ScalarField::Constant(p, p, 1.0 / static_cast<double>(p * p));
  s.solver = std::make_shared<const EllipticSolver>(
      p, EllipticOptions{params.linear_solver, params.cg_tol, params.cg_max_iter});
  if (params.seed != 0) {
    std::mt19937_64 rng(params.seed);
    std::normal_distribution<double> normal(0.0, 1.0 / static_cast<double>(p));
    for (auto& e : s.eta) {
      e.x = e.x.unaryExpr([&](double) { return normal(rng); });
      e.y = e.y.unaryExpr([&](double) { return normal(rng); });
    }
  }
  return s;
}

DRIterate dr_step(DRState& state, std::span<const ScalarField> samples, const Weights& lambda,
                  const DRParams& params) {
  const std::size_t n = samples.size();
  const double theta = params.relaxation ? params.relaxation(state.iter) : 1.0;
  if (!(theta >= 0.0 && theta < 2.0))
    throw std::invalid_argument("dr_step: relaxation parameter outside [0, 2)");

  DRIterate it;
  it.sigma.reserve(n);
  for (std::size_t q = 0; q < n; ++q)
    it.sigma.push_back(shrink_group(state.eta[q], params.tau * lambda[static_cast<Index>(q)]));
  it.nu = project_simplex(state.mu);

  FlowTuple reflected;
  reflected.flows.reserve(n);
  for (std::size_t q = 0; q < n; ++q) reflected.flows.push_back(2.0 * it.sigma[q] - state.eta[q]);
  reflected.measure = 2.0 * it.nu - state.mu;

  ProjectionMultipliers mult;
  if (!state.solver || state.solver->side() != state.mu.rows())
    state.solver = std::make_shared<const EllipticSolver>(
        state.mu.rows(), EllipticOptions{params.linear_solver, params.cg_tol, params.cg_max_iter});
  it.projected = project_flows(reflected, samples, *state.solver, &state.cache, &mult);
  it.xi = std::move(mult.xi);

  double residual = 0.0;
  for (std::size_t q = 0; q < n; ++q) {
    FlowField step = theta * (it.projected.flows[q] - it.sigma[q]);
    residual += squared_norm(step);
    state.eta[q] += step;
  }
  const ScalarField mu_step = theta * (it.projected.measure - it.nu);
  residual += mu_step.square().sum();
  state.mu += mu_step;

  it.residual = residual;
  ++state.iter;
  state.residual_history.push_back(residual);
  state.primal_history.push_back(primal_value(it.sigma, lambda));
  return it;
}

MedianSolution extract_solution(const DRState& state, const DRIterate& it,
                                std::span<const ScalarField> samples, const Weights& lambda,
                                const DRParams& params) {
  const std::size_t n = samples.size();
  MedianSolution sol;
  sol.median = it.nu;
  sol.iterations = state.iter;
  sol.final_residual = it.residual;
  sol.residual_history = state.residual_history;
  sol.primal_history = state.primal_history;

  const EllipticSolver fallback(samples.front().rows(),
                                {params.linear_solver, params.cg_tol, params.cg_max_iter});
  const EllipticSolver& solver = state.solver ? *state.solver : fallback;
  for (std::size_t q = 0; q < n; ++q) {
    ScalarField rhs = div(it.sigma[q]) + samples[q] - sol.median;
    rhs -= rhs.mean();
    const ScalarField zeta = solver.poisson(rhs);
    sol.flows.push_back(it.sigma[q] + grad(zeta));
    sol.densities.push_back(sol.flows.back().magnitude());
    const double scale = params.tau * lambda[static_cast<Index>(q)];
    sol.potentials.push_back(it.xi.empty() ? ScalarField::Zero(sol.median.rows(), sol.median.cols())
                                           : ScalarField(it.xi[q] / scale));
  }
  sol.primal_value = primal_value(sol.flows, lambda);
  return sol;
}

MedianSolution solve_median(std::span<const ScalarField> samples, const Weights& lambda,
                            const DRParams& params) {
  validate_median_problem(samples, lambda);
  if (!(params.tau > 0.0)) throw std::invalid_argument("solve_median: tau must be positive");
  DRState state = initial_state(samples, params);
  DRIterate it;
  for (int k = 0; k < params.max_iter; ++k) {
    it = dr_step(state, samples, lambda, params);
    if (params.on_iteration) params.on_iteration(state.iter, it.residual);
    if (it.residual <= params.tol) return extract_solution(state, it, samples, lambda, params);
  }
  if (state.iter == 0) throw std::invalid_argument("solve_median: max_iter must be positive");
  throw MedianNoConvergence(extract_solution(state, it, samples, lambda, params));
}

double MKReport::max_constraint_residual() const {
  double worst = 0.0;
  for (double r : constraint_residuals) worst = std::max(worst, r);
  return worst;
}

MKReport mk_residuals(const MedianSolution& solution, std::span<const ScalarField> samples,
                      const Weights& lambda, double direction_tol) {
  MKReport rep;
  rep.direction_tol = direction_tol;
  const std::size_t n = samples.size();
  double dual = 0.0;
  for (std::size_t q = 0; q < n; ++q) {
    const ScalarField r = div(solution.flows[q]) + samples[q] - solution.median;
    rep.constraint_residuals.push_back(std::sqrt(r.square().sum()));

    const ScalarField density = solution.flows[q].magnitude();
    const double total = density.sum();
    const bool have_potential = q < solution.potentials.size();
    if (!have_potential || total == 0.0) {
      rep.off_unit_fraction.push_back(0.0);
      continue;
    }
    const ScalarField slope = grad(solution.potentials[q]).magnitude();
    const double off = ((slope - 1.0).abs() > direction_tol).select(density, 0.0).sum();
    rep.off_unit_fraction.push_back(off / total);

    // Rescale to a feasible (1-Lipschitz in the discrete sense) potential; the
    // pairing then lower-bounds the Beckmann cost of flow q.
    const double lip = std::max(1.0, slope.maxCoeff());
    const ScalarField diff = samples[q] - solution.median;
    dual += lambda[static_cast<Index>(q)] * (solution.potentials[q] * diff).sum() / lip;
  }
  rep.dual_value = dual;
  rep.complementarity_gap = solution.primal_value - dual;
  return rep;
}

}  // namespace wmed
