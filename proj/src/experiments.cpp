#include "wmed/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cfloat>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace wmed {

namespace {

constexpr double kRounding = 64.0 * DBL_EPSILON;

const char* method_name(EllipticMethod m) {
  return m == EllipticMethod::cholesky ? "cholesky" : "conjugate_gradient";
}

const char* kind_name(SelectionKind k) { return k == SelectionKind::vertical ? "vertical" : "horizontal"; }

std::pair<MedianSolution, bool> solve_accepting_partial(std::span<const ScalarField> samples,
                                                        const Weights& lambda, const DRParams& params) {
  try {
    return {solve_median(samples, lambda, params), true};
  } catch (const MedianNoConvergence& e) {
    return {e.partial(), false};
  }
}

nlohmann::json solver_json(const MedianSolution& s, bool converged) {
  return {{"iterations", s.iterations},
          {"final_residual", s.final_residual},
          {"primal_value", s.primal_value},
          {"converged", converged}};
}

// Block aggregation: every block's mass sits at its centroid. Returns the
// coarse cloud and the cost of moving the fine measure there.
PointCloud aggregate(const ScalarField& v, const GridFrame& frame, Index block, double& cost) {
  const Index p = v.rows();
  const Index nb = (p + block - 1) / block;
  std::vector<Eigen::Vector2d> pts;
  std::vector<double> mass;
  cost = 0.0;
  for (Index bj = 0; bj < nb; ++bj)
    for (Index bi = 0; bi < nb; ++bi) {
      double m = 0.0;
      Eigen::Vector2d c = Eigen::Vector2d::Zero();
      const Index i1 = std::min(p, (bi + 1) * block), j1 = std::min(p, (bj + 1) * block);
      for (Index j = bj * block; j < j1; ++j)
        for (Index i = bi * block; i < i1; ++i)
          if (v(i, j) > 0.0) {
            m += v(i, j);
            c += v(i, j) * frame.center(i, j, p);
          }
      if (m <= 0.0) continue;
      c /= m;
      for (Index j = bj * block; j < j1; ++j)
        for (Index i = bi * block; i < i1; ++i)
          if (v(i, j) > 0.0) cost += v(i, j) * (frame.center(i, j, p) - c).norm();
      pts.push_back(c);
      mass.push_back(m);
    }
  PointCloud out;
  out.points.resize(2, static_cast<Index>(pts.size()));
  out.masses.resize(static_cast<Index>(pts.size()));
  double total = 0.0;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    out.points.col(static_cast<Index>(k)) = pts[k];
    out.masses(static_cast<Index>(k)) = mass[k];
    total += mass[k];
  }
  out.masses /= total;
  return out;
}

// Exact integral over [0, 1] of max(|a(t)|, |b(t)|) for linear a, b.
double integral_max_abs(double a0, double a1, double b0, double b1) {
  std::vector<double> ts{0.0, 1.0};
  const auto root = [&](double u0, double u1) {
    if ((u0 < 0.0 && u1 > 0.0) || (u0 > 0.0 && u1 < 0.0)) ts.push_back(u0 / (u0 - u1));
  };
  root(a0, a1);
  root(b0, b1);
  root(a0 - b0, a1 - b1);
  root(a0 + b0, a1 + b1);
  std::sort(ts.begin(), ts.end());
  const auto g = [&](double t) {
    return std::max(std::abs(a0 + t * (a1 - a0)), std::abs(b0 + t * (b1 - b0)));
  };
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) s += 0.5 * (ts[k + 1] - ts[k]) * (g(ts[k]) + g(ts[k + 1]));
  return s;
}

void check_corrupt_set(std::span<const Index> corrupt, Index n) {
  std::vector<Index> c(corrupt.begin(), corrupt.end());
  std::sort(c.begin(), c.end());
  if (c.empty()) throw std::invalid_argument("breakdown: empty corrupt set");
  if (std::adjacent_find(c.begin(), c.end()) != c.end()) throw std::invalid_argument("breakdown: repeated index");
  if (c.front() < 0 || c.back() >= n) throw std::invalid_argument("breakdown: corrupt index out of range");
}

double corrupt_weight(const Weights& lambda, std::span<const Index> corrupt) {
  double w = 0.0;
  for (Index j : corrupt) w += lambda[j];
  return w;
}

double proof_bound(double c, double delta) { return 2.0 * c * delta / (1.0 - 2.0 * delta) + 2.0 * c; }

template <typename F>
void parallel_for(std::size_t n, int threads, F&& f) {
  const std::size_t t = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, std::max<std::size_t>(n, 1));
  if (t == 1) {
    for (std::size_t k = 0; k < n; ++k) f(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(t);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < t; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t k = next++; k < n; k = next++) f(k);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

nlohmann::json to_json(const ExperimentSpec& spec) {
  return {{"name", spec.name}, {"generator", spec.generator}, {"solver", spec.solver}, {"seed", spec.seed}};
}

nlohmann::json to_json(const DRParams& params) {
  return {{"tau", params.tau},
          {"relaxation_0", params.relaxation ? params.relaxation(0) : 1.0},
          {"tol", params.tol},
          {"max_iter", params.max_iter},
          {"cg_tol", params.cg_tol},
          {"cg_max_iter", params.cg_max_iter},
          {"linear_solver", method_name(params.linear_solver)},
          {"seed", params.seed}};
}

W1Bracket w1_grid(const ScalarField& a, const ScalarField& b, const GridFrame& frame, Index max_side) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != a.cols())
    throw std::invalid_argument("w1_grid: grid mismatch");
  if (max_side < 1) throw std::invalid_argument("w1_grid: max_side < 1");
  const Index p = a.rows();
  W1Bracket r;
  if (p <= max_side) {
    r.estimate = w1_transport(grid_cloud(a, frame), grid_cloud(b, frame));
    r.lower = r.upper = r.estimate;
    return r;
  }
  const Index block = (p + max_side - 1) / max_side;
  double ca = 0.0, cb = 0.0;
  const PointCloud A = aggregate(a, frame, block, ca), B = aggregate(b, frame, block, cb);
  r.estimate = w1_transport(A, B);
  r.upper = r.estimate + ca + cb;
  const double sliced = w1_projection_lower_bound(grid_cloud(a, frame), grid_cloud(b, frame));
  r.lower = std::max({0.0, r.estimate - ca - cb, sliced});
  return r;
}

double largest_minority_weight(const Weights& lambda) {
  const Index n = lambda.size();
  if (n < 1 || n > 30) throw std::length_error("largest_minority_weight: need 1 <= N <= 30");
  // Meet in the middle: all subset sums of each half, then a sweep.
  const Index h = n / 2;
  const auto sums = [&](Index from, Index to) {
    std::vector<double> s{0.0};
    for (Index i = from; i < to; ++i) {
      const std::size_t m = s.size();
      for (std::size_t k = 0; k < m; ++k) s.push_back(s[k] + lambda[i]);
    }
    std::sort(s.begin(), s.end());
    return s;
  };
  const std::vector<double> left = sums(0, h), right = sums(h, n);
  const double limit = 0.5 - kHalfTolerance;
  double best = 0.0;
  std::size_t k = right.size();
  for (double l : left) {
    while (k > 0 && l + right[k - 1] >= limit) --k;
    if (k > 0) best = std::max(best, l + right[k - 1]);
  }
  return best;
}

Measure1D select_median(const Selection& s, const Weights& lambda, std::span<const Measure1D> samples) {
  return s.kind == SelectionKind::vertical ? vertical_selection(lambda, samples, s.theta)
                                           : horizontal_selection(lambda, samples, s.theta);
}

std::vector<Selection> standard_selections() {
  std::vector<Selection> s;
  for (SelectionKind k : {SelectionKind::vertical, SelectionKind::horizontal})
    for (double t : {0.0, 0.5, 1.0}) s.push_back({k, t});
  return s;
}

double median_spread_bound_1d(const Weights& lambda, std::span<const Measure1D> samples) {
  const Measure1D lo = vertical_selection(lambda, samples, 0.0);
  const Measure1D hi = vertical_selection(lambda, samples, 1.0);
  double c = 0.0;
  for (const Measure1D& f : samples) {
    std::vector<double> x(lo.knots().begin(), lo.knots().end());
    x.insert(x.end(), hi.knots().begin(), hi.knots().end());
    x.insert(x.end(), f.knots().begin(), f.knots().end());
    std::sort(x.begin(), x.end());
    x.erase(std::unique(x.begin(), x.end()), x.end());
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < x.size(); ++k) {
      const double fl = f.cdf(x[k]), fr = f.cdf_before(x[k + 1]);
      const double v = integral_max_abs(lo.cdf(x[k]) - fl, lo.cdf_before(x[k + 1]) - fr, hi.cdf(x[k]) - fl,
                                        hi.cdf_before(x[k + 1]) - fr);
      total += (x[k + 1] - x[k]) * v;
    }
    c = std::max(c, total);
  }
  return c;
}

BreakdownReport breakdown_sweep_1d(std::span<const Measure1D> samples, const Weights& lambda,
                                   std::span<const Index> corrupt, std::span<const double> displacements,
                                   const double* anchor) {
  const Index n = static_cast<Index>(samples.size());
  if (n < 2 || lambda.size() != n) throw std::invalid_argument("breakdown_sweep_1d: need N >= 2 matching weights");
  check_corrupt_set(corrupt, n);
  BreakdownReport r;
  r.mode = "1d";
  r.corrupt.assign(corrupt.begin(), corrupt.end());
  r.corrupt_weight = corrupt_weight(lambda, corrupt);
  r.delta = largest_minority_weight(lambda);
  r.bounded_regime = r.corrupt_weight < 0.5 - kHalfTolerance;
  r.spread = median_spread_bound_1d(lambda, samples);

  const std::vector<Selection> sels = standard_selections();
  std::vector<Measure1D> base;
  for (const auto& s : sels) base.push_back(select_median(s, lambda, samples));
  const double a = anchor ? *anchor : vertical_selection(lambda, samples, 0.5).mean();

  double span = std::abs(a);
  for (const auto& s : samples) span = std::max({span, std::abs(s.support_min()), std::abs(s.support_max())});

  std::vector<Measure1D> corrupted(samples.begin(), samples.end());
  for (double d : displacements) {
    for (Index j : corrupt) corrupted[static_cast<std::size_t>(j)] = Measure1D::dirac(a + d);
    BreakdownRow row;
    row.displacement = d;
    row.movement_lower = INFINITY;
    for (const auto& s : sels) {
      const Measure1D m = select_median(s, lambda, corrupted);
      for (const auto& b : base) {
        const double w = w1_1d(b, m);
        row.movement = std::max(row.movement, w);
        row.movement_lower = std::min(row.movement_lower, w);
      }
    }
    const double tol = kRounding * (1.0 + span + std::abs(d));
    if (r.bounded_regime) {
      row.bound = proof_bound(r.spread, r.delta);
      row.ok = row.movement <= row.bound + tol;
    } else {
      row.ok = row.movement >= 0.5 * std::abs(d) - tol;
    }
    r.rows.push_back(row);
  }

  if (r.bounded_regime) {
    r.passed = std::all_of(r.rows.begin(), r.rows.end(), [](const BreakdownRow& x) { return x.ok; });
  } else {
    const auto far = std::max_element(r.rows.begin(), r.rows.end(), [](const auto& x, const auto& y) {
      return std::abs(x.displacement) < std::abs(y.displacement);
    });
    r.passed = far != r.rows.end() && far->ok;
  }
  r.provenance = {{"anchor", a},
                  {"selections", sels.size()},
                  {"weights", std::vector<double>(lambda.values().begin(), lambda.values().end())},
                  {"samples", n}};
  return r;
}

double dual_lower_bound(const MedianSolution& sol, std::span<const ScalarField> samples, const Weights& lambda) {
  if (sol.potentials.size() != samples.size()) return 0.0;
  double paired = 0.0;
  ScalarField combined = ScalarField::Zero(sol.median.rows(), sol.median.cols());
  for (std::size_t q = 0; q < samples.size(); ++q) {
    const double lip = std::max(1.0, grad(sol.potentials[q]).magnitude().maxCoeff());
    const double l = lambda[static_cast<Index>(q)];
    paired += l * (sol.potentials[q] * samples[q]).sum() / lip;
    combined += (l / lip) * sol.potentials[q];
  }
  return std::max(0.0, paired - combined.maxCoeff());
}

BreakdownReport breakdown_sweep_2d(std::span<const ScalarField> samples, const Weights& lambda,
                                   std::span<const Index> corrupt, std::span<const double> displacements,
                                   const Breakdown2DOptions& opt) {
  validate_median_problem(samples, lambda);
  const Index n = static_cast<Index>(samples.size());
  if (n < 2) throw std::invalid_argument("breakdown_sweep_2d: need N >= 2");
  check_corrupt_set(corrupt, n);
  const Index p = samples.front().rows();
  const double h = opt.frame.step(p);
  if (opt.direction.norm() == 0.0) throw std::invalid_argument("breakdown_sweep_2d: zero direction");
  const Eigen::Vector2d dir = opt.direction.normalized();

  // Snap every corrupting Dirac first so that bad displacements fail early.
  std::vector<std::pair<Index, Index>> cells;
  std::vector<double> actual;
  for (double d : displacements) {
    const Eigen::Vector2d x = (opt.anchor + d * dir - opt.frame.origin) / h;
    const Index i = static_cast<Index>(std::floor(x.x())), j = static_cast<Index>(std::floor(x.y()));
    if (i < 0 || j < 0 || i >= p || j >= p) throw std::invalid_argument("breakdown_sweep_2d: displacement leaves the grid");
    cells.emplace_back(i, j);
    actual.push_back((opt.frame.center(i, j, p) - opt.anchor).norm());
  }

  BreakdownReport r;
  r.mode = "2d";
  r.corrupt.assign(corrupt.begin(), corrupt.end());
  r.corrupt_weight = corrupt_weight(lambda, corrupt);
  r.delta = largest_minority_weight(lambda);
  r.bounded_regime = r.corrupt_weight < 0.5 - kHalfTolerance;

  const auto [base, base_ok] = solve_accepting_partial(samples, lambda, opt.solver);
  r.base_suboptimality = std::max(0.0, base.primal_value - dual_lower_bound(base, samples, lambda)) * h;

  std::vector<double> to_median(static_cast<std::size_t>(n));
  double dispersion_ub = 0.0;
  for (Index i = 0; i < n; ++i) {
    to_median[static_cast<std::size_t>(i)] = w1_grid(base.median, samples[static_cast<std::size_t>(i)], opt.frame, opt.w1_side).upper;
    dispersion_ub += lambda[i] * to_median[static_cast<std::size_t>(i)];
  }
  Eigen::MatrixXd pair = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index k = i + 1; k < n; ++k)
      pair(i, k) = pair(k, i) =
          w1_grid(samples[static_cast<std::size_t>(i)], samples[static_cast<std::size_t>(k)], opt.frame, opt.w1_side).upper;
  double c_ub = 0.0;
  for (Index i = 0; i < n; ++i) {
    double best = INFINITY;
    for (Index k = 0; k < n; ++k) best = std::min(best, dispersion_ub / lambda[k] + pair(k, i));
    c_ub = std::max(c_ub, best);
  }
  const double c_median = *std::max_element(to_median.begin(), to_median.end());
  r.spread = std::max(c_ub, c_median);

  r.rows.resize(displacements.size());
  parallel_for(displacements.size(), opt.threads, [&](std::size_t k) {
    std::vector<ScalarField> corrupted(samples.begin(), samples.end());
    ScalarField dirac = ScalarField::Zero(p, p);
    dirac(cells[k].first, cells[k].second) = 1.0;
    for (Index j : corrupt) corrupted[static_cast<std::size_t>(j)] = dirac;
    const auto [sol, ok] = solve_accepting_partial(corrupted, lambda, opt.solver);
    const W1Bracket moved = w1_grid(base.median, sol.median, opt.frame, opt.w1_side);
    BreakdownRow& row = r.rows[k];
    row.displacement = actual[k];
    row.movement = moved.upper;
    row.movement_lower = moved.lower;
    row.converged = ok;
    row.suboptimality = std::max(0.0, sol.primal_value - dual_lower_bound(sol, corrupted, lambda)) * h;
    if (r.bounded_regime) {
      row.bound = proof_bound(r.spread, r.delta) + 4.0 * (r.base_suboptimality + row.suboptimality);
      row.ok = row.movement <= row.bound;
    } else {
      row.ok = row.movement_lower >= 0.5 * row.displacement;
    }
  });

  if (r.bounded_regime) {
    r.passed = std::all_of(r.rows.begin(), r.rows.end(), [](const BreakdownRow& x) { return x.ok; });
  } else {
    const auto far = std::max_element(r.rows.begin(), r.rows.end(), [](const auto& x, const auto& y) {
      return x.displacement < y.displacement;
    });
    r.passed = far != r.rows.end() && far->ok;
  }
  r.provenance = {{"grid", p},
                  {"h", h},
                  {"anchor", {opt.anchor.x(), opt.anchor.y()}},
                  {"direction", {dir.x(), dir.y()}},
                  {"weights", std::vector<double>(lambda.values().begin(), lambda.values().end())},
                  {"spread_dispersion_bound", c_ub},
                  {"spread_from_median", c_median},
                  {"w1_side", opt.w1_side},
                  {"solver", to_json(opt.solver)},
                  {"base_solve", solver_json(base, base_ok)}};
  return r;
}

nlohmann::json to_json(const BreakdownReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& x : r.rows)
    rows.push_back({{"displacement", x.displacement},
                    {"movement", x.movement},
                    {"movement_lower", x.movement_lower},
                    {"bound", x.bound},
                    {"suboptimality", x.suboptimality},
                    {"converged", x.converged},
                    {"ok", x.ok}});
  return {{"experiment", "breakdown"},
          {"mode", r.mode},
          {"corrupt", r.corrupt},
          {"corrupt_weight", r.corrupt_weight},
          {"delta", r.delta},
          {"C", r.spread},
          {"bounded_regime", r.bounded_regime},
          {"base_suboptimality", r.base_suboptimality},
          {"rows", rows},
          {"passed", r.passed},
          {"provenance", r.provenance}};
}

std::string breakdown_csv(const BreakdownReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "displacement,movement,movement_lower,bound,suboptimality,converged,ok\n";
  for (const auto& x : r.rows)
    os << x.displacement << ',' << x.movement << ',' << x.movement_lower << ',' << x.bound << ','
       << x.suboptimality << ',' << x.converged << ',' << x.ok << '\n';
  return os.str();
}

StabilityReport1D stability_probe_1d(std::span<const Measure1D> samples, const Weights& lambda, double scale,
                                     std::span<const Selection> selections, int trials, std::uint64_t seed) {
  if (samples.empty() || lambda.size() != static_cast<Index>(samples.size()))
    throw std::invalid_argument("stability_probe_1d: samples and weights mismatch");
  if (!(scale >= 0.0) || trials < 0) throw std::invalid_argument("stability_probe_1d: bad scale or trials");
  StabilityReport1D r;
  r.scale = scale;
  r.seed = seed;
  r.selections.assign(selections.begin(), selections.end());
  std::vector<Measure1D> base;
  for (const auto& s : selections) base.push_back(select_median(s, lambda, samples));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> shift(-scale, scale);
  for (int t = 0; t < trials; ++t) {
    std::vector<Measure1D> moved;
    StabilityTrial trial;
    double span = 0.0;
    for (const auto& s : samples) {
      if (scale == 0.0) {
        moved.push_back(s);
      } else {
        std::vector<Piece> pieces = s.pieces();
        for (auto& pc : pieces) {
          const double d = shift(rng);
          pc.left += d;
          pc.right += d;
        }
        moved.push_back(Measure1D::from_pieces(pieces));
      }
      trial.rhs += w1_1d(s, moved.back());
      span = std::max({span, std::abs(s.support_min()), std::abs(s.support_max()),
                       std::abs(moved.back().support_min()), std::abs(moved.back().support_max())});
    }
    const double tol = kRounding * (1.0 + span) * static_cast<double>(samples.size() + 1);
    for (std::size_t k = 0; k < selections.size(); ++k) {
      const double w = w1_1d(base[k], select_median(selections[k], lambda, moved));
      trial.movement.push_back(w);
      if (w > trial.rhs + tol) ++r.violations;
      if (trial.rhs > 0.0) r.worst_ratio = std::max(r.worst_ratio, w / trial.rhs);
    }
    r.trials.push_back(std::move(trial));
  }
  r.passed = r.violations == 0;
  nlohmann::json sel = nlohmann::json::array();
  for (const auto& s : selections) sel.push_back({{"kind", kind_name(s.kind)}, {"theta", s.theta}});
  r.provenance = {{"selections", sel}, {"samples", samples.size()}};
  return r;
}

nlohmann::json to_json(const StabilityReport1D& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& t : r.trials) rows.push_back({{"rhs", t.rhs}, {"movement", t.movement}});
  return {{"experiment", "stability"}, {"mode", "1d"},       {"scale", r.scale},
          {"seed", r.seed},            {"trials", rows},     {"worst_ratio", r.worst_ratio},
          {"violations", r.violations}, {"passed", r.passed}, {"provenance", r.provenance}};
}

StabilityReport2D stability_trend_2d(std::span<const ScalarField> samples, const Weights& lambda,
                                     std::span<const double> scales, int trials, std::uint64_t seed,
                                     const DRParams& solver, const GridFrame& frame) {
  validate_median_problem(samples, lambda);
  for (double s : scales)
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("stability_trend_2d: scales must lie in [0, 1]");
  const Index p = samples.front().rows();
  StabilityReport2D r;
  r.scales.assign(scales.begin(), scales.end());
  r.mean_movement.assign(scales.size(), 0.0);
  r.mean_rhs.assign(scales.size(), 0.0);
  r.trials = trials;
  r.seed = seed;

  const auto [base, base_ok] = solve_accepting_partial(samples, lambda, solver);
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  int unconverged = base_ok ? 0 : 1;
  for (int t = 0; t < trials; ++t) {
    std::vector<ScalarField> eta;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      ScalarField e(p, p);
      for (Index k = 0; k < e.size(); ++k) e.data()[k] = expo(rng);
      eta.push_back(e / e.sum());
    }
    for (std::size_t k = 0; k < scales.size(); ++k) {
      const double s = scales[k];
      std::vector<ScalarField> moved;
      double rhs = 0.0;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        moved.push_back((1.0 - s) * samples[i] + s * eta[i]);
        if (s > 0.0) rhs += w1_grid(samples[i], moved.back(), frame).estimate;
      }
      const auto [sol, ok] = solve_accepting_partial(moved, lambda, solver);
      if (!ok) ++unconverged;
      r.mean_movement[k] += (s > 0.0 ? w1_grid(base.median, sol.median, frame).estimate : 0.0) / trials;
      r.mean_rhs[k] += rhs / trials;
    }
  }
  r.nondecreasing = std::is_sorted(r.mean_movement.begin(), r.mean_movement.end());
  r.provenance = {{"grid", p}, {"solver", to_json(solver)}, {"unconverged_solves", unconverged},
                  {"base_solve", solver_json(base, base_ok)}};
  return r;
}

nlohmann::json to_json(const StabilityReport2D& r) {
  return {{"experiment", "stability"},      {"mode", "2d"},           {"scales", r.scales},
          {"mean_movement", r.mean_movement}, {"mean_rhs", r.mean_rhs}, {"nondecreasing", r.nondecreasing},
          {"trials", r.trials},             {"seed", r.seed},         {"provenance", r.provenance}};
}

QuadrilateralInstance quadrilateral_instance(double epsilon, double ell, Index p) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("quadrilateral: need 0 < epsilon < 1");
  if (!(ell > 0.0) || p < 2) throw std::invalid_argument("quadrilateral: need ell > 0 and p >= 2");
  const double half = 1.0 + ell;
  QuadrilateralInstance q;
  q.frame.origin = Eigen::Vector2d(-half, -half);
  q.frame.h = 2.0 * half / static_cast<double>(p);
  const double h = q.frame.h, e = epsilon / 2.0;
  // [x0, x1] x [y0, y1] for the four rotations.
  const double rects[4][4] = {{-half, -1.0, -e, e}, {-e, e, -half, -1.0}, {1.0, half, -e, e}, {-e, e, 1.0, half}};
  const auto overlap = [](double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  };
  for (const auto& rc : rects) {
    ScalarField s(p, p);
    for (Index j = 0; j < p; ++j)
      for (Index i = 0; i < p; ++i) {
        const double x0 = -half + static_cast<double>(i) * h, y0 = -half + static_cast<double>(j) * h;
        s(i, j) = overlap(x0, x0 + h, rc[0], rc[1]) * overlap(y0, y0 + h, rc[2], rc[3]);
      }
    q.samples.push_back(s / s.sum());
  }
  return q;
}

QuadrilateralReport quadrilateral_counterexample(double epsilon, double ell, Index p, const DRParams& params,
                                                 MedianSolution* solution) {
  const QuadrilateralInstance inst = quadrilateral_instance(epsilon, ell, p);
  const auto [sol, ok] = solve_accepting_partial(inst.samples, Weights::uniform(4), params);
  QuadrilateralReport r;
  r.epsilon = epsilon;
  r.ell = ell;
  r.p = p;
  r.h = inst.frame.h;
  const double reach = epsilon / 2.0 + r.h;
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < p; ++i) {
      const Eigen::Vector2d c = inst.frame.center(i, j, p);
      if (std::abs(c.x()) <= reach && std::abs(c.y()) <= reach) r.central_mass += sol.median(i, j);
    }
  const double area = r.h * r.h;
  r.median_linf = sol.median.maxCoeff() / area;
  for (const auto& s : inst.samples) r.sample_linf = std::max(r.sample_linf, s.maxCoeff() / area);
  r.ratio = r.median_linf / r.sample_linf;
  r.iterations = sol.iterations;
  r.residual = sol.final_residual;
  r.converged = ok;
  r.provenance = {{"solver", to_json(params)}, {"solve", solver_json(sol, ok)}, {"domain_half_width", 1.0 + ell}};
  if (solution) *solution = sol;
  return r;
}

nlohmann::json to_json(const QuadrilateralReport& r) {
  return {{"experiment", "quadrilateral"},
          {"epsilon", r.epsilon},
          {"ell", r.ell},
          {"p", r.p},
          {"h", r.h},
          {"central_mass", r.central_mass},
          {"median_linf", r.median_linf},
          {"sample_linf", r.sample_linf},
          {"ratio", r.ratio},
          {"iterations", r.iterations},
          {"residual", r.residual},
          {"converged", r.converged},
          {"provenance", r.provenance}};
}

}  // namespace wmed
