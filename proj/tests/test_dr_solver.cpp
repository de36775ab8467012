#include "wmed/dr_solver.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace wmed;

namespace {

// Samples constant along y: nu_q(i, j) = f_q(i) / p.
std::vector<ScalarField> column_constant(const std::vector<std::vector<double>>& f, Index p) {
  std::vector<ScalarField> out;
  for (const auto& fq : f) {
    ScalarField s(p, p);
    for (Index i = 0; i < p; ++i) s.row(i).setConstant(fq[static_cast<std::size_t>(i)] / static_cast<double>(p));
    out.push_back(s);
  }
  return out;
}

// For such samples the optimal flows are horizontal and the problem is the
// one-dimensional median problem on the lattice 0..p-1: the optimal CDF is a
// pointwise weighted median of the sample CDFs.
double lattice_median_cost(const std::vector<std::vector<double>>& f, const std::vector<double>& lambda) {
  const std::size_t n = f.size(), p = f.front().size();
  std::vector<double> cdf(n, 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < p; ++k) {
    for (std::size_t q = 0; q < n; ++q) cdf[q] += f[q][k];
    const double m = oracle::median_by_definition(cdf, lambda).first;
    for (std::size_t q = 0; q < n; ++q) total += lambda[q] * std::abs(cdf[q] - m);
  }
  return total;
}

// Feasible point with nu = candidate: sigma_q = grad u_q with Delta u_q = nu - nu_q.
double gradient_flow_cost(const ScalarField& candidate, std::span<const ScalarField> samples,
                          const Weights& lambda) {
  const EllipticSolver solver(candidate.rows(), {EllipticMethod::cholesky, 1e-12, 1000});
  double total = 0.0;
  for (std::size_t q = 0; q < samples.size(); ++q) {
    const FlowField s = grad(solver.poisson(samples[q] - candidate));
    CHECK((div(s) + samples[q] - candidate).abs().maxCoeff() < 1e-10);
    total += lambda[static_cast<Index>(q)] * group_norm(s);
  }
  return total;
}

ScalarField dirac(Index p, Index i, Index j) {
  ScalarField s = ScalarField::Zero(p, p);
  s(i, j) = 1.0;
  return s;
}

}  // namespace

TEST_CASE("column-constant samples reduce to the lattice median problem") {
  std::mt19937_64 rng(1);
  const Index p = 12;
  for (int trial = 0; trial < 3; ++trial) {
    CAPTURE(trial);
    std::vector<std::vector<double>> f;
    const int n = 3 + trial;
    for (int q = 0; q < n; ++q) {
      const ScalarField h = oracle::random_grid_measure(rng, p, 0.5);
      std::vector<double> col(static_cast<std::size_t>(p));
      for (Index i = 0; i < p; ++i) col[static_cast<std::size_t>(i)] = h.row(i).sum();
      f.push_back(col);
    }
    const auto lam = oracle::random_simplex(rng, n);
    const Weights lambda(Eigen::Map<const Eigen::VectorXd>(lam.data(), n));
    const auto samples = column_constant(f, p);

    DRParams params;
    params.tau = 1.0;
    params.tol = 1e-12;
    params.max_iter = 20000;
    const MedianSolution sol = solve_median(samples, lambda, params);
    const double exact = lattice_median_cost(f, lam);
    CHECK(sol.primal_value == doctest::Approx(exact).epsilon(1e-5));
    CHECK(is_grid_measure(sol.median, 1e-12));

    const MKReport mk = mk_residuals(sol, samples, lambda);
    CHECK(mk.max_constraint_residual() < 1e-8);
    CHECK(mk.dual_value <= sol.primal_value + 1e-8);
    CHECK(mk.complementarity_gap >= -1e-8);
  }
}

TEST_CASE("a single sample is its own median") {
  std::mt19937_64 rng(2);
  const Index p = 10;
  const std::vector<ScalarField> samples{oracle::random_grid_measure(rng, p, 0.4)};
  DRParams params;
  params.tau = 0.5;
  params.tol = 1e-12;
  params.max_iter = 20000;
  const MedianSolution sol = solve_median(samples, Weights{1.0}, params);
  CHECK((sol.median - samples[0]).abs().maxCoeff() < 1e-5);
  CHECK(sol.primal_value < 1e-4);
}

TEST_CASE("identical samples") {
  std::mt19937_64 rng(3);
  const Index p = 10;
  const ScalarField s = oracle::random_grid_measure(rng, p, 0.7);
  const std::vector<ScalarField> samples{s, s, s};
  DRParams params;
  params.tau = 0.5;
  params.tol = 1e-12;
  params.max_iter = 20000;
  const MedianSolution sol = solve_median(samples, Weights{0.2, 0.3, 0.5}, params);
  CHECK((sol.median - s).abs().maxCoeff() < 1e-5);
  CHECK(sol.primal_value < 1e-4);
}

TEST_CASE("a majority weight pins the median") {
  const Index p = 12;
  const std::vector<ScalarField> samples{dirac(p, 2, 3), dirac(p, 9, 8)};
  DRParams params;
  params.tau = 0.1;
  params.tol = 1e-12;
  params.max_iter = 20000;
  const MedianSolution sol = solve_median(samples, Weights{0.7, 0.3}, params);
  CHECK((sol.median - samples[0]).abs().maxCoeff() < 1e-4);
  // Any feasible flow between the two cells bounds the optimum.
  const double exact = 0.3 * gradient_flow_cost(samples[0], std::span(samples).subspan(1, 1), Weights{1.0});
  CHECK(sol.primal_value <= exact + 1e-5);
}

TEST_CASE("the median beats every gradient-flow feasible point") {
  std::mt19937_64 rng(4);
  const Index p = 10;
  std::vector<ScalarField> samples;
  for (int q = 0; q < 3; ++q) samples.push_back(oracle::random_grid_measure(rng, p, 0.8));
  const Weights lambda{0.3, 0.3, 0.4};
  DRParams params;
  params.tau = 0.5;
  params.tol = 1e-11;
  params.max_iter = 20000;
  const MedianSolution sol = solve_median(samples, lambda, params);
  for (const auto& candidate : samples)
    CHECK(sol.primal_value <= gradient_flow_cost(candidate, samples, lambda) + 1e-6);
  CHECK(sol.primal_value <= gradient_flow_cost(sol.median, samples, lambda) + 1e-6);
  CHECK(sol.primal_value <= gradient_flow_cost(ScalarField::Constant(p, p, 0.01), samples, lambda) + 1e-6);
}

TEST_CASE("residual is the squared length of the step") {
  std::mt19937_64 rng(5);
  const Index p = 8;
  std::vector<ScalarField> samples{oracle::random_grid_measure(rng, p), oracle::random_grid_measure(rng, p)};
  const Weights lambda{0.5, 0.5};
  DRParams params;
  params.relaxation = [](int k) { return k % 2 ? 1.5 : 0.7; };
  params.seed = 9;
  DRState state = initial_state(samples, params);
  for (int k = 0; k < 10; ++k) {
    const DRState before = state;
    const DRIterate it = dr_step(state, samples, lambda, params);
    double r = (state.mu - before.mu).square().sum();
    for (std::size_t q = 0; q < samples.size(); ++q) r += squared_norm(state.eta[q] - before.eta[q]);
    CHECK(it.residual == doctest::Approx(r).epsilon(1e-12));
    CHECK(state.iter == before.iter + 1);
    CHECK(state.residual_history.back() == it.residual);
    CHECK(flow_constraint_residual(it.projected, samples) < 1e-8);
  }
}

TEST_CASE("runs are deterministic") {
  std::mt19937_64 rng(6);
  const Index p = 8;
  std::vector<ScalarField> samples{oracle::random_grid_measure(rng, p), oracle::random_grid_measure(rng, p),
                                   oracle::random_grid_measure(rng, p)};
  const Weights lambda = Weights::uniform(3);
  for (std::uint64_t seed : {0u, 42u}) {
    DRParams params;
    params.max_iter = 50;
    params.seed = seed;
    MedianSolution a, b;
    try {
      a = solve_median(samples, lambda, params);
    } catch (const MedianNoConvergence& e) {
      a = e.partial();
    }
    try {
      b = solve_median(samples, lambda, params);
    } catch (const MedianNoConvergence& e) {
      b = e.partial();
    }
    CHECK(a.residual_history == b.residual_history);
    CHECK((a.median - b.median).abs().maxCoeff() == 0.0);
  }
}

TEST_CASE("non-convergence carries the partial result") {
  std::mt19937_64 rng(7);
  const Index p = 8;
  std::vector<ScalarField> samples{oracle::random_grid_measure(rng, p), oracle::random_grid_measure(rng, p)};
  DRParams params;
  params.max_iter = 3;
  int calls = 0;
  params.on_iteration = [&](int, double) { ++calls; };
  try {
    solve_median(samples, Weights{0.5, 0.5}, params);
    FAIL("expected MedianNoConvergence");
  } catch (const MedianNoConvergence& e) {
    CHECK(e.iterations() == 3);
    CHECK(e.partial().iterations == 3);
    CHECK(e.partial().residual_history.size() == 3);
    CHECK(is_grid_measure(e.partial().median, 1e-12));
    CHECK(e.residual() == e.partial().final_residual);
  }
  CHECK(calls == 3);
}

TEST_CASE("linear solver choice does not change the iterates") {
  std::mt19937_64 rng(8);
  const Index p = 8;
  std::vector<ScalarField> samples{oracle::random_grid_measure(rng, p), oracle::random_grid_measure(rng, p)};
  const Weights lambda{0.4, 0.6};
  DRParams chol, cg;
  chol.max_iter = cg.max_iter = 200;
  chol.tau = cg.tau = 0.5;
  cg.linear_solver = EllipticMethod::conjugate_gradient;
  cg.cg_tol = chol.cg_tol = 1e-12;
  DRState a = initial_state(samples, chol), b = initial_state(samples, cg);
  for (int k = 0; k < 200; ++k) {
    dr_step(a, samples, lambda, chol);
    dr_step(b, samples, lambda, cg);
  }
  CHECK((a.mu - b.mu).abs().maxCoeff() < 1e-8);
}

TEST_CASE("problem validation") {
  const Index p = 4;
  const ScalarField u = ScalarField::Constant(p, p, 1.0 / 16);
  std::vector<ScalarField> ok{u, u};
  CHECK_THROWS_AS(validate_median_problem(ok, Weights{1.0}), std::invalid_argument);
  CHECK_THROWS_AS(validate_median_problem(ok, Weights{1.0, 0.0}), std::invalid_argument);
  std::vector<ScalarField> heavy{u, 2.0 * u};
  CHECK_THROWS_AS(validate_median_problem(heavy, Weights{0.5, 0.5}), std::invalid_argument);
  std::vector<ScalarField> sizes{u, ScalarField::Constant(3, 3, 1.0 / 9)};
  CHECK_THROWS_AS(validate_median_problem(sizes, Weights{0.5, 0.5}), std::invalid_argument);
  std::vector<ScalarField> none;
  CHECK_THROWS_AS(validate_median_problem(none, Weights{1.0}), std::invalid_argument);
  DRParams params;
  params.tau = 0.0;
  CHECK_THROWS_AS(solve_median(ok, Weights{0.5, 0.5}, params), std::invalid_argument);
  params.tau = 1.0;
  params.relaxation = [](int) { return 2.0; };
  CHECK_THROWS_AS(solve_median(ok, Weights{0.5, 0.5}, params), std::invalid_argument);
}
