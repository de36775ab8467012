#include "wmed/prox.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>
#include <string>

namespace wmed {

FlowField shrink_group(const FlowField& sigma, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("shrink_group: tau must be positive");
  const ScalarField norm = sigma.magnitude();
  // zero vectors map to zero
  const ScalarField factor = (norm > tau).select(1.0 - tau / norm, 0.0);
  return {sigma.x * factor, sigma.y * factor};
}

ScalarField project_simplex(const ScalarField& v) {
  if (!v.allFinite()) throw std::invalid_argument("project_simplex: non-finite entry");
  // Michelot's active-set iteration: drop entries at or below the running
  // threshold until none remain. The threshold only increases.
  std::vector<double> active(v.data(), v.data() + v.size());
  double threshold = 0.0;
  for (;;) {
    double sum = 0.0;
    for (double a : active) sum += a;
    threshold = (sum - 1.0) / static_cast<double>(active.size());
    const auto keep = std::remove_if(active.begin(), active.end(),
                                     [threshold](double a) { return a <= threshold; });
    if (keep == active.end()) break;
    active.erase(keep, active.end());
    if (active.empty()) break;
  }
  ScalarField w = (v - threshold).max(0.0);
  const double total = w.sum();
  if (total > 0.0) w /= total;
  return w;
}

FlowTuple project_flows(const FlowTuple& input, std::span<const ScalarField> samples,
                        const EllipticSolver& solver, ProjectionCache* cache,
                        ProjectionMultipliers* multipliers) {
  const std::size_t n = input.flows.size();
  if (n == 0 || samples.size() != n)
    throw std::invalid_argument("project_flows: need one sample per flow");
  const Index p = input.measure.rows();
  if (solver.side() != p) throw std::invalid_argument("project_flows: solver built for another grid");
  for (std::size_t i = 0; i < n; ++i) {
    if (samples[i].rows() != p || input.flows[i].side() != p)
      throw std::invalid_argument("project_flows: fields live on different grids");
    const double mass = samples[i].sum();
    if (std::abs(mass - 1.0) > 1e-9)
      throw InfeasibleMass("project_flows: sample " + std::to_string(i) + " has mass " +
                           std::to_string(mass));
  }

  const double cells = static_cast<double>(p * p);
  const ScalarField nu = input.measure - (input.measure.sum() - 1.0) / cells;

  std::vector<ScalarField> xi(n);
  ScalarField mean_xi = ScalarField::Zero(p, p);
  const bool warm = cache && cache->potentials.size() == n;
  for (std::size_t i = 0; i < n; ++i) {
    ScalarField rhs = div(input.flows[i]) + samples[i] - nu;
    // sum(rhs) is zero up to rounding once nu has unit mass
    rhs -= rhs.mean();
    xi[i] = solver.poisson(rhs, warm ? &cache->potentials[i] : nullptr);
    mean_xi += xi[i];
  }
  mean_xi /= static_cast<double>(n);
  const bool warm_corr = cache && cache->correction.rows() == p;
  const ScalarField correction =
      solver.shifted(mean_xi, static_cast<int>(n), warm_corr ? &cache->correction : nullptr);
  if (cache) {
    cache->potentials = xi;
    cache->correction = correction;
  }

  FlowTuple out;
  out.flows.reserve(n);
  out.measure = nu;
  for (std::size_t i = 0; i < n; ++i) {
    xi[i] -= correction;
    out.flows.push_back(input.flows[i] + grad(xi[i]));
    out.measure += xi[i];
  }
  if (multipliers) multipliers->xi = std::move(xi);
  return out;
}

FlowTuple project_flows(const FlowTuple& input, std::span<const ScalarField> samples,
                        const CgOptions& cg, ProjectionCache* cache,
                        ProjectionMultipliers* multipliers) {
  const EllipticSolver solver(input.measure.rows(),
                              {EllipticMethod::conjugate_gradient, cg.tol, cg.max_iter});
  return project_flows(input, samples, solver, cache, multipliers);
}

double flow_constraint_residual(const FlowTuple& t, std::span<const ScalarField> samples) {
  double worst = 0.0;
  for (std::size_t i = 0; i < t.flows.size(); ++i) {
    const ScalarField r = div(t.flows[i]) + samples[i] - t.measure;
    worst = std::max(worst, std::sqrt(r.square().sum()));
  }
  return worst;
}

}  // namespace wmed
