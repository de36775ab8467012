#include "wmed/prox.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <functional>
#include <random>

using namespace wmed;
using oracle::flatten;

namespace {

// Sort-based simplex projection.
ScalarField simplex_by_sort(const ScalarField& v) {
  std::vector<double> s(v.data(), v.data() + v.size());
  std::sort(s.begin(), s.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    cum += s[k];
    const double t = (cum - 1.0) / static_cast<double>(k + 1);
    if (s[k] - t > 0.0) theta = t;
  }
  return (v - theta).max(0.0);
}

double shrink_objective(const FlowField& x, const FlowField& v, double tau) {
  return tau * group_norm(x) + 0.5 * squared_norm(x - v);
}

double tuple_distance2(const FlowTuple& a, const FlowTuple& b) {
  double d = (a.measure - b.measure).square().sum();
  for (std::size_t i = 0; i < a.flows.size(); ++i) d += squared_norm(a.flows[i] - b.flows[i]);
  return d;
}

double tuple_inner(const FlowTuple& a, const FlowTuple& b) {
  double d = (a.measure * b.measure).sum();
  for (std::size_t i = 0; i < a.flows.size(); ++i) d += inner(a.flows[i], b.flows[i]);
  return d;
}

FlowTuple difference(const FlowTuple& a, const FlowTuple& b) {
  FlowTuple d;
  d.measure = a.measure - b.measure;
  for (std::size_t i = 0; i < a.flows.size(); ++i) d.flows.push_back(a.flows[i] - b.flows[i]);
  return d;
}

FlowTuple random_tuple(std::mt19937_64& rng, Index p, std::size_t n) {
  FlowTuple t;
  for (std::size_t i = 0; i < n; ++i) t.flows.push_back(oracle::random_flow(rng, p));
  t.measure = oracle::random_field(rng, p);
  return t;
}

// Dense affine projection: the minimal-norm correction solving the stacked
// constraints div sigma_i - nu = -nu_i.
FlowTuple dense_projection(const FlowTuple& z, const std::vector<ScalarField>& samples) {
  const Index p = z.measure.rows();
  const Index c = p * p;
  const Index n = static_cast<Index>(samples.size());
  const Eigen::MatrixXd divm = -oracle::gradient_matrix(p).transpose();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n * c, n * 2 * c + c);
  Eigen::VectorXd b(n * c), x(n * 2 * c + c);
  for (Index i = 0; i < n; ++i) {
    a.block(i * c, i * 2 * c, c, 2 * c) = divm;
    a.block(i * c, n * 2 * c, c, c) = -Eigen::MatrixXd::Identity(c, c);
    b.segment(i * c, c) = -flatten(samples[static_cast<std::size_t>(i)]);
    x.segment(i * 2 * c, 2 * c) = flatten(z.flows[static_cast<std::size_t>(i)]);
  }
  x.tail(c) = flatten(z.measure);
  const Eigen::VectorXd fix = a.completeOrthogonalDecomposition().solve(a * x - b);
  const Eigen::VectorXd y = x - fix;
  FlowTuple out;
  for (Index i = 0; i < n; ++i) {
    out.flows.push_back({oracle::unflatten(y.segment(i * 2 * c, c), p),
                         oracle::unflatten(y.segment(i * 2 * c + c, c), p)});
  }
  out.measure = oracle::unflatten(y.tail(c), p);
  return out;
}

}  // namespace

TEST_CASE("group shrinkage") {
  FlowField s = FlowField::zero(2);
  s.x(0, 0) = 3.0;
  s.y(0, 0) = 4.0;
  s.x(1, 0) = 0.1;
  const FlowField r = shrink_group(s, 1.0);
  CHECK(r.x(0, 0) == doctest::Approx(2.4));
  CHECK(r.y(0, 0) == doctest::Approx(3.2));
  CHECK(r.x(1, 0) == 0.0);
  CHECK(r.magnitude()(1, 1) == 0.0);
  CHECK_THROWS_AS(shrink_group(s, 0.0), std::invalid_argument);
}

TEST_CASE("shrinkage minimizes its prox objective") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double tau = 0.05 + 0.1 * trial;
    const FlowField v = oracle::random_flow(rng, 4);
    const FlowField x = shrink_group(v, tau);
    const double fx = shrink_objective(x, v, tau);
    for (int probe = 0; probe < 20; ++probe) {
      FlowField y = x;
      const double scale = probe < 10 ? 1e-3 : 1.0;
      for (Index k = 0; k < y.x.size(); ++k) {
        y.x.data()[k] += scale * g(rng);
        y.y.data()[k] += scale * g(rng);
      }
      CHECK(fx <= shrink_objective(y, v, tau) + 1e-14);
    }
    // Firmly nonexpansive in particular nonexpansive.
    const FlowField w = oracle::random_flow(rng, 4);
    CHECK(squared_norm(shrink_group(w, tau) - x) <= squared_norm(w - v) + 1e-12);
  }
}

TEST_CASE("simplex projection matches the sort oracle") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Index p = 2 + trial % 9;
    ScalarField v = oracle::random_field(rng, p) * (0.01 + trial * 0.05);
    if (trial % 5 == 0) v = v.round();  // many ties
    const ScalarField w = project_simplex(v);
    CHECK((w - simplex_by_sort(v)).abs().maxCoeff() < 1e-14);
    CHECK(w.minCoeff() >= 0.0);
    CHECK(std::abs(w.sum() - 1.0) < 1e-14);
    // Variational inequality against random simplex points.
    for (int probe = 0; probe < 5; ++probe) {
      const ScalarField y = oracle::random_grid_measure(rng, p, 0.5);
      CHECK(((v - w) * (y - w)).sum() <= 1e-12);
    }
  }
  const ScalarField inside = oracle::random_grid_measure(rng, 5);
  CHECK((project_simplex(inside) - inside).abs().maxCoeff() < 1e-15);
  ScalarField bad = inside;
  bad(0, 0) = NAN;
  CHECK_THROWS_AS(project_simplex(bad), std::invalid_argument);
}

TEST_CASE("flow projection equals the dense least-norm projection") {
  std::mt19937_64 rng(3);
  for (Index p : {2, 3, 4}) {
    for (std::size_t n : {1u, 2u, 3u}) {
      CAPTURE(p);
      CAPTURE(n);
      std::vector<ScalarField> samples;
      for (std::size_t i = 0; i < n; ++i) samples.push_back(oracle::random_grid_measure(rng, p, 0.3));
      const FlowTuple z = random_tuple(rng, p, n);
      const FlowTuple dense = dense_projection(z, samples);
      const EllipticSolver solver(p, {EllipticMethod::cholesky, 1e-13, 1000});
      const FlowTuple fast = project_flows(z, samples, solver);
      CHECK(tuple_distance2(fast, dense) < 1e-20);
      const FlowTuple cg = project_flows(z, samples, CgOptions{1e-13, 10000});
      CHECK(tuple_distance2(cg, dense) < 1e-18);
    }
  }
}

TEST_CASE("flow projection properties") {
  std::mt19937_64 rng(4);
  const Index p = 10;
  const std::size_t n = 4;
  std::vector<ScalarField> samples;
  for (std::size_t i = 0; i < n; ++i) samples.push_back(oracle::random_grid_measure(rng, p, 0.6));
  const EllipticSolver solver(p, {EllipticMethod::cholesky, 1e-12, 1000});

  const FlowTuple a = random_tuple(rng, p, n), b = random_tuple(rng, p, n);
  ProjectionMultipliers mult;
  const FlowTuple pa = project_flows(a, samples, solver, nullptr, &mult);
  const FlowTuple pb = project_flows(b, samples, solver);

  CHECK(flow_constraint_residual(pa, samples) < 1e-9);
  CHECK(std::abs(pa.measure.sum() - 1.0) < 1e-12);
  // Idempotent.
  CHECK(tuple_distance2(project_flows(pa, samples, solver), pa) < 1e-18);
  // Nonexpansive.
  CHECK(tuple_distance2(pa, pb) <= tuple_distance2(a, b) + 1e-12);
  // The constraint set is affine, so the correction is orthogonal to it.
  CHECK(std::abs(tuple_inner(difference(a, pa), difference(pb, pa))) < 1e-8);
  // The flow correction is the gradient of the multiplier.
  REQUIRE(mult.xi.size() == n);
  for (std::size_t i = 0; i < n; ++i)
    CHECK(squared_norm(pa.flows[i] - a.flows[i] - grad(mult.xi[i])) < 1e-20);

  // Warm starts only change the CG path, not the answer.
  ProjectionCache cache;
  const FlowTuple first = project_flows(a, samples, CgOptions{1e-12, 10000}, &cache);
  const FlowTuple second = project_flows(a, samples, CgOptions{1e-12, 10000}, &cache);
  CHECK(tuple_distance2(first, pa) < 1e-16);
  CHECK(tuple_distance2(second, pa) < 1e-16);
}

TEST_CASE("flow projection validates its input") {
  std::mt19937_64 rng(5);
  const Index p = 4;
  std::vector<ScalarField> samples{oracle::random_grid_measure(rng, p)};
  const FlowTuple z = random_tuple(rng, p, 1);
  const EllipticSolver solver(p);
  std::vector<ScalarField> heavy{samples[0] * 1.01};
  CHECK_THROWS_AS(project_flows(z, heavy, solver), InfeasibleMass);
  std::vector<ScalarField> two{samples[0], samples[0]};
  CHECK_THROWS_AS(project_flows(z, two, solver), std::invalid_argument);
  CHECK_THROWS_AS(project_flows(z, samples, EllipticSolver(5)), std::invalid_argument);
}
