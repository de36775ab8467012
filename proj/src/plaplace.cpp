#include "wmed/plaplace.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

namespace wmed {

namespace {

// m^e for m >= 0, through logs for large exponents.
ScalarField magnitude_power(const ScalarField& m, double e, bool log_form) {
  if (e == 0.0) return ScalarField::Ones(m.rows(), m.cols());
  if (!log_form) return m.pow(e);
  return (m > 0.0).select((e * m.max(1e-300).log()).exp(), 0.0);
}

struct Problem {
  std::span<const ScalarField> samples;
  const Weights& lambda;
  const PLaplaceParams& params;
  Index p;
  std::size_t n;

  Index cells() const { return p * p; }
  bool log_form() const { return params.p_eps > 8.0; }

  Eigen::Map<const ScalarField> field(const Eigen::VectorXd& x, std::size_t i) const {
    return {x.data() + static_cast<Index>(i) * cells(), p, p};
  }
  Eigen::Map<ScalarField> field(Eigen::VectorXd& x, std::size_t i) const {
    return {x.data() + static_cast<Index>(i) * cells(), p, p};
  }

  ScalarField weighted_sum(const Eigen::VectorXd& x) const {
    ScalarField s = ScalarField::Zero(p, p);
    for (std::size_t i = 0; i < n; ++i) s += lambda[static_cast<Index>(i)] * field(x, i);
    return s;
  }

  double value(const Eigen::VectorXd& x, Eigen::VectorXd* g) const {
    const double pe = params.p_eps;
    double j = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const ScalarField u = field(x, i);
      const FlowField gu = grad(u);
      const ScalarField m = gu.magnitude();
      j += magnitude_power(m, pe, log_form()).sum() / pe;
      const double li = lambda[static_cast<Index>(i)];
      j -= li * (u * samples[i]).sum();
      if (g) {
        const ScalarField w = magnitude_power(m, pe - 2.0, log_form());
        field(*g, i) = -div(FlowField{w * gu.x, w * gu.y}) - li * samples[i];
      }
    }
    const ScalarField pos = weighted_sum(x).max(0.0);
    j += pos.square().sum() / (2.0 * params.epsilon);
    if (g)
      for (std::size_t i = 0; i < n; ++i)
        field(*g, i) += lambda[static_cast<Index>(i)] / params.epsilon * pos;
    return j;
  }

  void project(Eigen::VectorXd& v) const {
    for (std::size_t i = 0; i + 1 < n; ++i) {
      auto f = field(v, i);
      f -= f.mean();
    }
  }

  // Damped Hessian with the gauge fixed by pinning cell 0 of u_1..u_{N-1}
  // (identity rows there). The Hessian itself is gauge invariant.
  Eigen::SparseMatrix<double> damped_hessian(const Eigen::VectorXd& x, double mu) const {
    const double pe = params.p_eps;
    const Index c = cells();
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(c) * n * (12 + n));
    auto pinned = [&](Index k) { return k % c == 0 && k / c < static_cast<Index>(n) - 1; };
    auto add = [&](Index r, Index col, double v) {
      if (!pinned(r) && !pinned(col)) t.emplace_back(r, col, v);
    };
    for (std::size_t comp = 0; comp < n; ++comp) {
      const Index off = static_cast<Index>(comp) * c;
      const FlowField g = grad(ScalarField(field(x, comp)));
      for (Index j = 0; j < p; ++j)
        for (Index i = 0; i < p; ++i) {
          const double vx = g.x(i, j), vy = g.y(i, j);
          const double m = std::hypot(vx, vy);
          double a = 1.0, b = 0.0;  // A = a I + b v v^T
          if (pe != 2.0) {
            if (m == 0.0) continue;
            a = log_form() ? std::exp((pe - 2.0) * std::log(m)) : std::pow(m, pe - 2.0);
            b = (pe - 2.0) * a / (m * m);
          }
          const double axx = a + b * vx * vx, ayy = a + b * vy * vy, axy = b * vx * vy;
          const Index k = off + i + j * p;
          // Difference stencils: x uses (k, k+1), y uses (k, k+p).
          Index nodes[3] = {k, -1, -1};
          double ex[3] = {0.0, 0.0, 0.0}, ey[3] = {0.0, 0.0, 0.0};
          if (i + 1 < p) {
            nodes[1] = k + 1;
            ex[0] = -1.0;
            ex[1] = 1.0;
          }
          if (j + 1 < p) {
            nodes[2] = k + p;
            ey[0] = -1.0;
            ey[2] = 1.0;
          }
          for (int r = 0; r < 3; ++r) {
            if (nodes[r] < 0) continue;
            for (int s = 0; s < 3; ++s) {
              if (nodes[s] < 0) continue;
              const double v = axx * ex[r] * ex[s] + ayy * ey[r] * ey[s] + axy * (ex[r] * ey[s] + ey[r] * ex[s]);
              if (v != 0.0) add(nodes[r], nodes[s], v);
            }
          }
        }
    }
    const ScalarField sum = weighted_sum(x);
    for (Index k = 0; k < c; ++k) {
      if (!(sum.data()[k] > 0.0)) continue;
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
          add(static_cast<Index>(a) * c + k, static_cast<Index>(b) * c + k,
              lambda[static_cast<Index>(a)] * lambda[static_cast<Index>(b)] / params.epsilon);
    }
    for (Index r = 0; r < static_cast<Index>(n) * c; ++r) t.emplace_back(r, r, pinned(r) ? 1.0 : mu);
    Eigen::SparseMatrix<double> h(static_cast<Index>(n) * c, static_cast<Index>(n) * c);
    h.setFromTriplets(t.begin(), t.end());
    return h;
  }

  // Adds the constant shifts with sum_i lambda_i alpha_i = 0 that bring
  // u_1..u_{N-1} back to zero mean; J and its derivatives do not see them.
  void regauge(Eigen::VectorXd& d) const {
    double shift = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      auto f = field(d, i);
      const double alpha = -f.mean();
      f += alpha;
      shift += lambda[static_cast<Index>(i)] * alpha;
    }
    field(d, n - 1) -= shift / lambda[static_cast<Index>(n) - 1];
  }

  Eigen::VectorXd stack(const PotentialVector& u) const {
    Eigen::VectorXd x(static_cast<Index>(n) * cells());
    for (std::size_t i = 0; i < n; ++i) field(x, i) = u[i];
    return x;
  }

  PotentialVector unstack(const Eigen::VectorXd& x) const {
    PotentialVector u;
    for (std::size_t i = 0; i < n; ++i) u.emplace_back(field(x, i));
    return u;
  }
};

}  // namespace

void validate_plaplace_problem(std::span<const ScalarField> samples, const Weights& lambda,
                               const PLaplaceParams& params) {
  if (samples.empty()) throw std::invalid_argument("p-laplace: no samples");
  if (static_cast<Index>(samples.size()) != lambda.size())
    throw std::invalid_argument("p-laplace: weight count differs from sample count");
  lambda.require_strictly_positive();
  if (!(params.epsilon > 0.0)) throw std::invalid_argument("p-laplace: epsilon must be positive");
  if (!(params.p_eps >= 2.0)) throw std::invalid_argument("p-laplace: exponent must be >= 2");
  if (!(params.armijo > 0.0 && params.armijo < 1.0) ||
      !(params.backtrack > 0.0 && params.backtrack < 1.0))
    throw std::invalid_argument("p-laplace: line search constants must lie in (0, 1)");
  const Index p = samples.front().rows();
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].rows() != p || samples[i].cols() != p || !is_grid_measure(samples[i], 1e-9))
      throw std::invalid_argument("p-laplace: sample " + std::to_string(i) +
                                  " is not a probability measure on the common grid");
}

double j_eps(const PotentialVector& u, std::span<const ScalarField> samples, const Weights& lambda,
             const PLaplaceParams& params) {
  const Problem prob{samples, lambda, params, samples.front().rows(), samples.size()};
  return prob.value(prob.stack(u), nullptr);
}

PotentialVector j_eps_gradient(const PotentialVector& u, std::span<const ScalarField> samples,
                               const Weights& lambda, const PLaplaceParams& params) {
  const Problem prob{samples, lambda, params, samples.front().rows(), samples.size()};
  Eigen::VectorXd g(static_cast<Index>(prob.n) * prob.cells());
  prob.value(prob.stack(u), &g);
  return prob.unstack(g);
}

void normalize_potentials(PotentialVector& u) {
  for (std::size_t i = 0; i + 1 < u.size(); ++i) u[i] -= u[i].mean();
}

EpsQuantities extract_eps_quantities(const PotentialVector& u, const PLaplaceParams& params,
                                     const Weights& lambda) {
  if (u.empty() || static_cast<Index>(u.size()) != lambda.size())
    throw std::invalid_argument("extract_eps_quantities: one potential per weight");
  const Index p = u.front().rows();
  EpsQuantities q;
  ScalarField s = ScalarField::Zero(p, p);
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double li = lambda[static_cast<Index>(i)];
    const FlowField g = grad(u[i]);
    const ScalarField w = magnitude_power(g.magnitude(), params.p_eps - 2.0, params.p_eps > 8.0) / li;
    q.flows.push_back({w * g.x, w * g.y});
    s += li * u[i];
  }
  q.nu = s.max(0.0) / params.epsilon;
  return q;
}

PLaplaceReport plaplace_report(const PotentialVector& u, std::span<const ScalarField> samples,
                               const Weights& lambda, const PLaplaceParams& params) {
  const Problem prob{samples, lambda, params, samples.front().rows(), samples.size()};
  const Eigen::VectorXd x = prob.stack(u);
  Eigen::VectorXd g(x.size());
  PLaplaceReport r;
  r.epsilon = params.epsilon;
  r.p_eps = params.p_eps;
  prob.value(x, &g);
  Eigen::VectorXd pg = g;
  prob.project(pg);
  r.gradient_norm = pg.norm();

  const Index p = prob.p;
  for (std::size_t i = 0; i < prob.n; ++i) {
    const ScalarField gi = prob.field(g, i) / lambda[static_cast<Index>(i)];
    r.weak_residual = std::max(r.weak_residual, gi.abs().maxCoeff());
    for (Index bj = 0; bj < p; bj += 4)
      for (Index bi = 0; bi < p; bi += 4) {
        const double block = gi.block(bi, bj, std::min<Index>(4, p - bi), std::min<Index>(4, p - bj)).sum();
        r.block_residual = std::max(r.block_residual, std::abs(block));
      }
  }
  const EpsQuantities q = extract_eps_quantities(u, params, lambda);
  for (std::size_t i = 0; i < prob.n; ++i) {
    const ScalarField res = div(q.flows[i]) + samples[i] - q.nu;
    r.flux_residual = std::max(r.flux_residual, std::sqrt(res.square().sum()));
  }
  r.mass = q.nu.sum();
  r.obstacle = prob.weighted_sum(x).max(0.0).square().sum();
  return r;
}

PLaplaceResult minimize_j_eps(std::span<const ScalarField> samples, const Weights& lambda,
                              const PLaplaceParams& params, const PotentialVector* initial) {
  validate_plaplace_problem(samples, lambda, params);
  const Problem prob{samples, lambda, params, samples.front().rows(), samples.size()};
  const Index dim = static_cast<Index>(prob.n) * prob.cells();

  Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
  if (initial) {
    if (initial->size() != prob.n) throw std::invalid_argument("p-laplace: initial has wrong size");
    x = prob.stack(*initial);
    prob.project(x);
  }
  Eigen::VectorXd g(dim), pg, x_new, g_new(dim), d;
  double j = prob.value(x, &g);
  pg = g;
  prob.project(pg);

  std::vector<double> history{j};
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> pairs;  // (s, y)
  double step = 1.0;
  double mu = 1e-6;  // Levenberg damping for the Newton directions
  int it = 0;
  bool converged = false;
  for (; it < params.max_iter; ++it) {
    if (pg.norm() <= params.tol) {
      converged = true;
      break;
    }
    // Search direction.
    if (params.method == DescentMethod::newton) {
      Eigen::VectorXd rhs = -g;
      for (std::size_t i = 0; i + 1 < prob.n; ++i) rhs(static_cast<Index>(i) * prob.cells()) = 0.0;
      for (;;) {
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(prob.damped_hessian(x, mu));
        if (ldlt.info() == Eigen::Success) {
          d = ldlt.solve(rhs);
          prob.regauge(d);
          if (d.allFinite() && d.dot(pg) < 0.0) break;
        }
        mu *= 100.0;
        if (mu > 1e12) {
          d = -pg;
          break;
        }
      }
    } else if (params.method == DescentMethod::lbfgs && !pairs.empty()) {
      d = -pg;
      std::vector<double> alpha(pairs.size());
      for (std::size_t k = pairs.size(); k-- > 0;) {
        const auto& [s, y] = pairs[k];
        alpha[k] = s.dot(d) / y.dot(s);
        d -= alpha[k] * y;
      }
      const auto& [s_last, y_last] = pairs.back();
      d *= s_last.dot(y_last) / y_last.squaredNorm();
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto& [s, y] = pairs[k];
        d += (alpha[k] - y.dot(d) / y.dot(s)) * s;
      }
      if (d.dot(pg) >= 0.0) {
        pairs.clear();
        d = -pg;
      }
    } else {
      d = -pg;
    }
    const bool quasi_newton =
        params.method == DescentMethod::newton || (params.method == DescentMethod::lbfgs && !pairs.empty());
    double t = quasi_newton ? 1.0 : std::min(step * 2.0, 1e12);
    if (params.method == DescentMethod::lbfgs && pairs.empty()) t = std::min(1.0, 1.0 / pg.norm());

    const double slope = pg.dot(d);
    double j_new = 0.0;
    bool accepted = false;
    for (int back = 0; back < 80; ++back, t *= params.backtrack) {
      x_new = x + t * d;
      j_new = prob.value(x_new, nullptr);
      if (j_new <= j + params.armijo * t * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (params.method == DescentMethod::newton && mu < 1e12) {
        mu *= 100.0;
        --it;
        continue;
      }
      if (quasi_newton && params.method == DescentMethod::lbfgs) {
        pairs.clear();
        --it;
        continue;
      }
      break;  // no representable decrease left along the gradient
    }
    step = t;
    if (params.method == DescentMethod::newton) mu = t == 1.0 ? std::max(mu * 0.1, 1e-14) : mu * 2.0;
    prob.value(x_new, &g_new);
    Eigen::VectorXd pg_new = g_new;
    prob.project(pg_new);
    if (params.method == DescentMethod::lbfgs) {
      Eigen::VectorXd s = x_new - x, y = pg_new - pg;
      if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
        pairs.emplace_back(std::move(s), std::move(y));
        if (static_cast<int>(pairs.size()) > params.memory) pairs.pop_front();
      }
    }
    x.swap(x_new);
    g.swap(g_new);
    pg.swap(pg_new);
    j = j_new;
    history.push_back(j);
    if (params.on_iteration) params.on_iteration(it + 1, j, pg.norm());
  }

  PLaplaceResult result;
  result.u = prob.unstack(x);
  result.eps = extract_eps_quantities(result.u, params, lambda);
  result.report = plaplace_report(result.u, samples, lambda, params);
  result.report.iterations = it;
  result.report.converged = converged;
  result.report.j_history = std::move(history);
  if (!converged) throw PLaplaceNoConvergence(std::move(result));
  return result;
}

}  // namespace wmed
