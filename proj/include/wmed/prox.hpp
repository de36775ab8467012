#pragma once

// Proximal maps and projections used by the Douglas-Rachford median solver.

#include "wmed/grid2d.hpp"

#include <span>
#include <vector>

namespace wmed {

/// Prox of tau * ||.||_{1,2}: per-cell vector shrinkage v -> v * max(0, 1 - tau/|v|).
FlowField shrink_group(const FlowField& sigma, double tau);

/// Euclidean projection onto {w >= 0, sum w = 1}.
ScalarField project_simplex(const ScalarField& v);

/// (sigma_1..sigma_N, nu): one flow per sample plus the median slot.
struct FlowTuple {
  std::vector<FlowField> flows;
  ScalarField measure;
};

/// Warm starts carried between successive projections onto the same constraint set.
struct ProjectionCache {
  std::vector<ScalarField> potentials;  ///< last xi' per sample
  ScalarField correction;               ///< last (I - Delta/N)^{-1} solve
};

/// Multipliers produced by a projection: xi_i with sigma~_i = sigma_i + grad xi_i.
struct ProjectionMultipliers {
  std::vector<ScalarField> xi;
};

/// Projection onto F_h = {div sigma_i + nu_i = nu for all i}.
///
/// The measure slot is first shifted to unit total mass, which leaves the
/// projection unchanged (F_h lies inside the unit-mass hyperplane) and removes
/// rounding drift. Throws InfeasibleMass if a sample does not have unit mass
/// within 1e-9.
FlowTuple project_flows(const FlowTuple& input, std::span<const ScalarField> samples,
                        const EllipticSolver& solver, ProjectionCache* cache = nullptr,
                        ProjectionMultipliers* multipliers = nullptr);

/// Same projection with matrix-free conjugate gradient solves.
FlowTuple project_flows(const FlowTuple& input, std::span<const ScalarField> samples,
                        const CgOptions& cg, ProjectionCache* cache = nullptr,
                        ProjectionMultipliers* multipliers = nullptr);

/// Max over i of ||div sigma_i + nu_i - nu||_2.
double flow_constraint_residual(const FlowTuple& t, std::span<const ScalarField> samples);

}  // namespace wmed
