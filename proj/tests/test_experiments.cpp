#include "wmed/experiments.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace wmed;

namespace {

Measure1D random_histogram(std::mt19937_64& rng, int bins, double lo, double hi) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> edges, mass;
  for (int k = 0; k <= bins; ++k) edges.push_back(lo + (hi - lo) * k / bins);
  double total = 0.0;
  for (int k = 0; k < bins; ++k) {
    mass.push_back(u(rng) < 0.3 ? 0.0 : u(rng));
    total += mass.back();
  }
  if (total == 0.0) mass[0] = total = 1.0;
  for (double& m : mass) m /= total;
  return Measure1D::histogram(edges, mass);
}

Measure1D random_atomic(std::mt19937_64& rng, int atoms, double spread) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x, m;
  double total = 0.0;
  for (int k = 0; k < atoms; ++k) {
    x.push_back(spread * (u(rng) - 0.5));
    m.push_back(0.05 + u(rng));
    total += m.back();
  }
  for (double& v : m) v /= total;
  return Measure1D::atomic(x, m);
}

Weights to_weights(const std::vector<double>& w) {
  return Weights(Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Index>(w.size())));
}

// Riemann sum of max(|m^- - F_i|, |m^+ - F_i|) on a fine grid.
double spread_by_sampling(const Weights& lambda, const std::vector<Measure1D>& s, double lo, double hi) {
  const Measure1D a = vertical_selection(lambda, s, 0.0), b = vertical_selection(lambda, s, 1.0);
  double c = 0.0;
  const int n = 200000;
  for (const auto& f : s) {
    double t = 0.0;
    for (int k = 0; k < n; ++k) {
      const double x = lo + (hi - lo) * (k + 0.5) / n;
      t += std::max(std::abs(a.cdf(x) - f.cdf(x)), std::abs(b.cdf(x) - f.cdf(x)));
    }
    c = std::max(c, t * (hi - lo) / n);
  }
  return c;
}

ScalarField rotate_quarter(const ScalarField& s) {
  const Index p = s.rows();
  ScalarField r(p, p);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < p; ++i) r(p - 1 - j, i) = s(i, j);
  return r;
}

ScalarField sparse_measure(std::mt19937_64& rng, Index p, int cells) {
  std::uniform_int_distribution<Index> pick(0, p * p - 1);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  ScalarField s = ScalarField::Zero(p, p);
  for (int k = 0; k < cells; ++k) s.data()[pick(rng)] += u(rng);
  return s / s.sum();
}

}  // namespace

TEST_CASE("largest minority weight against enumeration") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 11;
    std::vector<double> w = oracle::random_simplex(rng, n);
    if (trial % 7 == 0) w.assign(static_cast<std::size_t>(n), 1.0 / n);
    const Weights lambda = to_weights(w);
    double best = 0.0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      double s = 0.0;
      for (int i = 0; i < n; ++i)
        if (mask >> i & 1u) s += w[static_cast<std::size_t>(i)];
      if (s < 0.5 - kHalfTolerance) best = std::max(best, s);
    }
    CHECK(largest_minority_weight(lambda) == doctest::Approx(best).epsilon(1e-14));
  }
  CHECK(largest_minority_weight(Weights{0.5, 0.5}) == 0.0);
  CHECK(largest_minority_weight(Weights::uniform(4)) == doctest::Approx(0.25));
}

TEST_CASE("median spread bound") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 12; ++trial) {
    CAPTURE(trial);
    const int n = 2 + trial % 4;
    std::vector<Measure1D> s;
    for (int i = 0; i < n; ++i) s.push_back(random_histogram(rng, 5 + i, -1.0 + 0.3 * i, 1.0 + 0.2 * i));
    const Weights lambda = trial % 2 ? Weights::uniform(n) : to_weights(oracle::random_simplex(rng, n));
    const double c = median_spread_bound_1d(lambda, s);
    CHECK(c == doctest::Approx(spread_by_sampling(lambda, s, -1.0, 2.0)).epsilon(1e-4));
    // Dominates every selection and every mixture of them (the median set is convex).
    std::vector<Measure1D> sels;
    for (const auto& sel : standard_selections()) sels.push_back(select_median(sel, lambda, s));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 6; ++k) {
      std::vector<Piece> mix;
      std::vector<double> w(sels.size());
      double tot = 0.0;
      for (double& x : w) tot += (x = u(rng));
      for (std::size_t a = 0; a < sels.size(); ++a)
        for (Piece pc : sels[a].pieces()) {
          pc.mass *= w[a] / tot;
          mix.push_back(pc);
        }
      const Measure1D m = Measure1D::from_pieces(mix);
      REQUIRE(verify_median_1d(lambda, s, m, 1e-9));
      for (const auto& f : s) CHECK(w1_1d(m, f) <= c + 1e-12);
    }
    // A unique median attains the bound.
    if (selection_is_unique(lambda)) {
      double attained = 0.0;
      for (const auto& f : s) attained = std::max(attained, w1_1d(sels[0], f));
      CHECK(attained == doctest::Approx(c).epsilon(1e-12));
    }
  }
}

TEST_CASE("grid W1 bracket") {
  std::mt19937_64 rng(3);
  const GridFrame frame{Eigen::Vector2d(-1.0, 0.5), 0.1};
  for (int trial = 0; trial < 4; ++trial) {
    const ScalarField a = sparse_measure(rng, 12, 20), b = sparse_measure(rng, 12, 25);
    const W1Bracket small = w1_grid(a, b, frame);
    const double exact = w1_transport(grid_cloud(a, frame), grid_cloud(b, frame));
    CHECK(small.lower == exact);
    CHECK(small.upper == exact);

    const ScalarField c = sparse_measure(rng, 40, 60), d = sparse_measure(rng, 40, 70);
    const double truth = w1_transport(grid_cloud(c, frame), grid_cloud(d, frame));
    for (Index side : {4, 8, 16}) {
      const W1Bracket br = w1_grid(c, d, frame, side);
      CHECK(br.lower <= truth + 1e-12);
      CHECK(br.upper >= truth - 1e-12);
      CHECK(br.lower <= br.estimate + 1e-12);
    }
    CHECK(w1_grid(c, c, frame, 8).lower == 0.0);
  }
  CHECK_THROWS_AS(w1_grid(ScalarField::Constant(3, 3, 1.0 / 9), ScalarField::Constant(4, 4, 1.0 / 16)),
                  std::invalid_argument);
}

TEST_CASE("1D breakdown: minority corruption stays bounded") {
  std::mt19937_64 rng(4);
  std::vector<Measure1D> s{random_atomic(rng, 8, 2.0), random_atomic(rng, 5, 3.0), random_histogram(rng, 6, -1, 1)};
  const std::vector<double> d{0.0, 1.0, 10.0, 100.0, 1e3};
  const std::vector<Index> corrupt{1};
  const BreakdownReport r = breakdown_sweep_1d(s, Weights::uniform(3), corrupt, d);
  CHECK(r.bounded_regime);
  CHECK(r.delta == doctest::Approx(1.0 / 3.0));
  CHECK(r.passed);
  for (const auto& row : r.rows) {
    CHECK(row.movement <= row.bound);
    CHECK(row.movement_lower <= row.movement);
  }
  // Far corruptions all produce the same selections, hence the same movement.
  CHECK(r.rows[3].movement == doctest::Approx(r.rows[4].movement).epsilon(1e-9));
  const nlohmann::json j = to_json(r);
  CHECK(j["rows"].size() == 5);
  CHECK(breakdown_csv(r).find("displacement,movement") == 0);
}

TEST_CASE("1D breakdown: half the weight follows the corruption") {
  std::mt19937_64 rng(5);
  std::vector<Measure1D> s{random_atomic(rng, 6, 1.0), random_atomic(rng, 6, 1.0)};
  const std::vector<double> d{10.0, 1e3, 1e6};
  const std::vector<Index> corrupt{1};
  const BreakdownReport r = breakdown_sweep_1d(s, Weights::uniform(2), corrupt, d);
  CHECK_FALSE(r.bounded_regime);
  CHECK(r.passed);
  CHECK(r.rows.back().movement >= 0.5e6);
}

TEST_CASE("a corrupting majority sharing one Dirac is the median") {
  std::mt19937_64 rng(6);
  std::vector<Measure1D> s;
  for (int i = 0; i < 5; ++i) s.push_back(random_atomic(rng, 4, 2.0));
  const Weights lambda{0.2, 0.15, 0.25, 0.3, 0.1};
  const std::vector<Index> corrupt{0, 2, 4};
  const std::vector<double> d{50.0, 5e4};
  const double anchor = 0.0;
  const BreakdownReport r = breakdown_sweep_1d(s, lambda, corrupt, d, &anchor);
  CHECK(r.passed);
  for (Index j : corrupt) s[static_cast<std::size_t>(j)] = Measure1D::dirac(5e4);
  for (const auto& sel : standard_selections())
    CHECK(w1_1d(select_median(sel, lambda, s), Measure1D::dirac(5e4)) == 0.0);
}

TEST_CASE("breakdown validation") {
  std::vector<Measure1D> s{Measure1D::dirac(0.0), Measure1D::dirac(1.0)};
  const std::vector<double> d{1.0};
  const std::vector<Index> none, twice{0, 0}, out{2};
  CHECK_THROWS_AS(breakdown_sweep_1d(s, Weights::uniform(2), none, d), std::invalid_argument);
  CHECK_THROWS_AS(breakdown_sweep_1d(s, Weights::uniform(2), twice, d), std::invalid_argument);
  CHECK_THROWS_AS(breakdown_sweep_1d(s, Weights::uniform(2), out, d), std::invalid_argument);
  const std::vector<ScalarField> g{ScalarField::Constant(4, 4, 1.0 / 16), ScalarField::Constant(4, 4, 1.0 / 16)};
  Breakdown2DOptions opt;
  const std::vector<double> far{2.0};
  const std::vector<Index> one{0};
  CHECK_THROWS_AS(breakdown_sweep_2d(g, Weights::uniform(2), one, far, opt), std::invalid_argument);
}

TEST_CASE("dual lower bound brackets the optimum") {
  std::mt19937_64 rng(7);
  const Index p = 10;
  std::vector<ScalarField> s;
  for (int i = 0; i < 3; ++i) s.push_back(oracle::random_grid_measure(rng, p, 0.6));
  const Weights lambda{0.2, 0.5, 0.3};
  DRParams params;
  params.tau = 0.5;
  params.tol = 1e-12;
  params.max_iter = 20000;
  const MedianSolution sol = solve_median(s, lambda, params);
  const double lb = dual_lower_bound(sol, s, lambda);
  CHECK(lb <= sol.primal_value + 1e-12);
  CHECK(sol.primal_value - lb < 1e-4 * sol.primal_value);
  MedianSolution bare = sol;
  bare.potentials.clear();
  CHECK(dual_lower_bound(bare, s, lambda) == 0.0);
}

TEST_CASE("2D breakdown on a small grid") {
  const Index p = 16;
  const auto blob = [&](Index ci, Index cj) {
    ScalarField f = ScalarField::Zero(p, p);
    for (Index j = cj - 1; j <= cj + 1; ++j)
      for (Index i = ci - 1; i <= ci + 1; ++i) f(i, j) = 1.0;
    return ScalarField(f / f.sum());
  };
  const std::vector<ScalarField> s{blob(2, 8), blob(4, 5), blob(3, 11)};
  Breakdown2DOptions opt;
  opt.anchor = Eigen::Vector2d(3.5 / p, 8.5 / p);
  opt.solver.tau = 0.3;
  opt.solver.tol = 1e-8;
  opt.solver.max_iter = 20000;
  opt.threads = 2;
  const std::vector<double> d{0.25, 0.6};
  const std::vector<Index> minority{0}, majority{0, 1};
  const BreakdownReport a = breakdown_sweep_2d(s, Weights::uniform(3), minority, d, opt);
  CHECK(a.bounded_regime);
  CHECK(a.passed);
  CHECK(a.base_suboptimality < 1e-3);
  for (const auto& row : a.rows) CHECK(row.converged);
  const BreakdownReport b = breakdown_sweep_2d(s, Weights::uniform(3), majority, d, opt);
  CHECK_FALSE(b.bounded_regime);
  CHECK(b.passed);
  CHECK(b.rows[1].movement_lower >= 0.5 * b.rows[1].displacement);
  // Threading does not change the numbers.
  opt.threads = 1;
  const BreakdownReport c = breakdown_sweep_2d(s, Weights::uniform(3), minority, d, opt);
  CHECK(to_json(c) == to_json(a));
}

TEST_CASE("1D stability probe") {
  std::mt19937_64 rng(8);
  std::vector<Measure1D> s{random_atomic(rng, 7, 2.0), random_histogram(rng, 8, -2, 1), random_atomic(rng, 3, 4.0),
                           random_histogram(rng, 4, 0, 3)};
  const Weights lambda{0.1, 0.4, 0.3, 0.2};
  const auto sels = standard_selections();
  const StabilityReport1D zero = stability_probe_1d(s, lambda, 0.0, sels, 3, 1);
  for (const auto& t : zero.trials) {
    CHECK(t.rhs == 0.0);
    for (double m : t.movement) CHECK(m == 0.0);
  }
  const StabilityReport1D r = stability_probe_1d(s, lambda, 0.5, sels, 40, 2);
  CHECK(r.passed);
  CHECK(r.worst_ratio <= 1.0);
  CHECK(r.worst_ratio > 0.0);
  CHECK(to_json(stability_probe_1d(s, lambda, 0.5, sels, 40, 2)) == to_json(r));
}

TEST_CASE("2D stability trend") {
  std::mt19937_64 rng(9);
  const Index p = 10;
  std::vector<ScalarField> s;
  for (int i = 0; i < 3; ++i) s.push_back(oracle::random_grid_measure(rng, p, 0.7));
  DRParams params;
  params.tau = 0.5;
  params.tol = 1e-9;
  params.max_iter = 20000;
  const std::vector<double> scales{0.0, 0.1, 0.3, 0.6};
  const StabilityReport2D r = stability_trend_2d(s, Weights::uniform(3), scales, 2, 3, params);
  CHECK(r.mean_movement[0] == 0.0);
  CHECK(r.mean_rhs[0] == 0.0);
  CHECK(std::is_sorted(r.mean_rhs.begin(), r.mean_rhs.end()));
  CHECK(r.nondecreasing);
  CHECK(to_json(stability_trend_2d(s, Weights::uniform(3), scales, 2, 3, params)) == to_json(r));
  const std::vector<double> bad{1.5};
  CHECK_THROWS_AS(stability_trend_2d(s, Weights::uniform(3), bad, 1, 0, params), std::invalid_argument);
}

TEST_CASE("four-rectangle instance geometry") {
  for (double eps : {0.2, 0.33}) {
    const QuadrilateralInstance q = quadrilateral_instance(eps, 0.6, 64);
    REQUIRE(q.samples.size() == 4);
    CHECK(q.frame.h == doctest::Approx(3.2 / 64));
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(is_grid_measure(q.samples[k], 1e-12));
      CHECK((rotate_quarter(q.samples[k]) - q.samples[(k + 1) % 4]).abs().maxCoeff() < 1e-14);
    }
    // Sample 0 lives on x in [-1.6, -1].
    const ScalarField& s0 = q.samples[0];
    for (Index j = 0; j < 64; ++j)
      for (Index i = 0; i < 64; ++i)
        if (s0(i, j) > 0.0) {
          const Eigen::Vector2d c = q.frame.center(i, j, 64);
          CHECK(c.x() < -1.0);
          CHECK(std::abs(c.y()) < eps / 2 + q.frame.h);
        }
  }
  // Cell-aligned rectangles have a flat density 1 / (ell eps).
  const QuadrilateralInstance q = quadrilateral_instance(0.2, 0.6, 128);
  const double h2 = q.frame.h * q.frame.h;
  CHECK(q.samples[0].maxCoeff() / h2 == doctest::Approx(1.0 / 0.12));
  CHECK_THROWS_AS(quadrilateral_instance(1.0, 0.6, 32), std::invalid_argument);
  CHECK_THROWS_AS(quadrilateral_instance(0.2, 0.0, 32), std::invalid_argument);
}

TEST_CASE("four-rectangle median concentrates in the centre") {
  DRParams params;
  params.tau = 0.5;
  params.tol = 1e-7;
  params.max_iter = 5000;
  MedianSolution sol;
  const QuadrilateralReport r = quadrilateral_counterexample(0.4, 0.6, 32, params, &sol);
  CHECK(r.converged);
  CHECK(r.central_mass >= 0.95);
  CHECK(r.ratio > 1.0);
  CHECK(sol.median.sum() == doctest::Approx(1.0));
  const nlohmann::json j = to_json(r);
  CHECK(j["provenance"]["solver"]["tau"] == 0.5);
}
