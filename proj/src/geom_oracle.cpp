#include "wmed/geom_oracle.hpp"

#include "wmed/median1d.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace wmed {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double spread(const Eigen::Matrix2Xd& pts) {
  if (pts.cols() == 0) return 0.0;
  return (pts.rowwise().maxCoeff() - pts.rowwise().minCoeff()).norm();
}

double objective(const Eigen::Matrix2Xd& pts, const Weights& lambda, const Eigen::Vector2d& x) {
  return ((pts.colwise() - x).colwise().norm().transpose().array() * lambda.values().array()).sum();
}

// Andrew's monotone chain; returns the hull counter-clockwise without repetition.
std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Eigen::Vector2d> h(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p) <= 0.0) --k;
    h[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 2], h[k - 1], pts[i]) <= 0.0) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

double segment_distance(const Eigen::Vector2d& x, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const Eigen::Vector2d d = b - a;
  const double len2 = d.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((x - a).dot(d) / len2, 0.0, 1.0) : 0.0;
  return (x - (a + t * d)).norm();
}

double hull_distance(const std::vector<Eigen::Vector2d>& hull, const Eigen::Vector2d& x) {
  if (hull.empty()) return kInf;
  if (hull.size() == 1) return (x - hull[0]).norm();
  if (hull.size() == 2) return segment_distance(x, hull[0], hull[1]);
  bool inside = true;
  double best = kInf;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    const double c = (b.x() - a.x()) * (x.y() - a.y()) - (b.y() - a.y()) * (x.x() - a.x());
    if (c < 0.0) inside = false;
    best = std::min(best, segment_distance(x, a, b));
  }
  return inside ? 0.0 : best;
}

// Minimum-cost perfect assignment on a square matrix (potentials method), O(n^3).
double assignment_cost(const Eigen::MatrixXd& c) {
  const Index n = c.rows();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> match(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    match[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), kInf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = match[static_cast<std::size_t>(j0)];
      double delta = kInf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = c(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (Index j = 1; j <= n; ++j) total += c(match[static_cast<std::size_t>(j)] - 1, j - 1);
  return total;
}

}  // namespace

// ---------------------------------------------------------------- point clouds

PointCloud PointCloud::make(Eigen::Matrix2Xd points, Eigen::VectorXd masses) {
  if (points.cols() != masses.size() || masses.size() == 0)
    throw std::invalid_argument("point cloud: need one positive mass per point");
  if (!points.allFinite() || !masses.allFinite() || masses.minCoeff() <= 0.0)
    throw std::invalid_argument("point cloud: masses must be positive and finite");
  const double total = masses.sum();
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("point cloud: masses sum to " + std::to_string(total));
  masses /= total;
  return {std::move(points), std::move(masses)};
}

PointCloud PointCloud::dirac(const Eigen::Vector2d& x) {
  return make(Eigen::Matrix2Xd(x), Eigen::VectorXd::Ones(1));
}

Eigen::Vector2d GridFrame::center(Index i, Index j, Index p) const {
  const double s = step(p);
  return origin + Eigen::Vector2d((static_cast<double>(i) + 0.5) * s, (static_cast<double>(j) + 0.5) * s);
}

PointCloud grid_cloud(const ScalarField& v, const GridFrame& frame, double drop, double* dropped) {
  const Index p = v.rows();
  std::vector<Index> cells;
  double removed = 0.0;
  for (Index j = 0; j < v.cols(); ++j)
    for (Index i = 0; i < p; ++i) {
      if (v(i, j) > drop && v(i, j) > 0.0)
        cells.push_back(i + j * p);
      else
        removed += std::max(0.0, v(i, j));
    }
  if (cells.empty()) throw std::invalid_argument("grid_cloud: no cell above the drop threshold");
  Eigen::Matrix2Xd pts(2, static_cast<Index>(cells.size()));
  Eigen::VectorXd m(static_cast<Index>(cells.size()));
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const Index i = cells[k] % p, j = cells[k] / p;
    pts.col(static_cast<Index>(k)) = frame.center(i, j, p);
    m(static_cast<Index>(k)) = v(i, j);
  }
  if (dropped) *dropped = removed;
  m /= m.sum();
  return {std::move(pts), std::move(m)};
}

// ---------------------------------------------------------------- geometric medians

MedianCertificate certify_median(const Eigen::Matrix2Xd& points, const Weights& lambda,
                                 const Eigen::Vector2d& x) {
  const Index n = points.cols();
  if (n == 0 || lambda.size() != n) throw std::invalid_argument("certify_median: size mismatch");
  const double anchor_eps = 1e-12 * (1.0 + spread(points) + x.cwiseAbs().maxCoeff());
  MedianCertificate c;
  c.point = x;
  c.subgradients.setZero(2, n);
  Eigen::Vector2d g = Eigen::Vector2d::Zero();
  double anchored = 0.0;
  std::vector<Index> anchors;
  for (Index i = 0; i < n; ++i) {
    const Eigen::Vector2d d = x - points.col(i);
    const double r = d.norm();
    if (r <= anchor_eps) {
      anchors.push_back(i);
      anchored += lambda[i];
    } else {
      c.subgradients.col(i) = d / r;
      g += lambda[i] * c.subgradients.col(i);
    }
  }
  const double gn = g.norm();
  if (!anchors.empty() && anchored > 0.0) {
    // Common vector q for all anchors minimizing |g + anchored q| over |q| <= 1.
    const Eigen::Vector2d q = gn <= anchored ? Eigen::Vector2d(-g / anchored)
                                             : Eigen::Vector2d(-g / gn);
    for (Index i : anchors) c.subgradients.col(i) = q;
    c.residual = std::max(0.0, gn - anchored);
  } else {
    c.residual = gn;
  }
  return c;
}

MedianCertificate weiszfeld(const Eigen::Matrix2Xd& points, const Weights& lambda, double tol,
                            int max_iter) {
  const Index n = points.cols();
  if (n == 0 || lambda.size() != n) throw std::invalid_argument("weiszfeld: size mismatch");
  if (!(tol > 0.0)) throw std::invalid_argument("weiszfeld: tol must be positive");

  // A data point is optimal iff its certificate residual vanishes.
  MedianCertificate best;
  best.residual = kInf;
  for (Index i = 0; i < n; ++i) {
    if (lambda[i] == 0.0) continue;
    MedianCertificate c = certify_median(points, lambda, points.col(i));
    if (c.residual <= tol) return c;
    if (c.residual < best.residual) best = std::move(c);
  }

  const double scale = std::max(spread(points), 1e-300);
  const double anchor_eps = 1e-12 * (1.0 + scale);
  Eigen::Vector2d x = points * lambda.values();
  for (int it = 0; it < max_iter; ++it) {
    MedianCertificate c = certify_median(points, lambda, x);
    c.iterations = it;
    if (c.residual <= tol) return c;
    if (c.residual < best.residual) best = c;

    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    Eigen::Matrix2d hess = Eigen::Matrix2d::Zero();
    Eigen::Vector2d num = Eigen::Vector2d::Zero();
    double den = 0.0;
    bool at_anchor = false;
    for (Index i = 0; i < n; ++i) {
      const Eigen::Vector2d d = x - points.col(i);
      const double r = d.norm();
      if (r <= anchor_eps) {
        at_anchor = true;
        continue;
      }
      const Eigen::Vector2d u = d / r;
      g += lambda[i] * u;
      hess += lambda[i] / r * (Eigen::Matrix2d::Identity() - u * u.transpose());
      num += lambda[i] / r * points.col(i);
      den += lambda[i] / r;
    }
    if (at_anchor) {
      // Suboptimal anchor: leave it along the descent direction.
      x -= 1e-9 * scale * g.normalized();
      continue;
    }

    const double f0 = objective(points, lambda, x);
    const double det = hess.determinant();
    const double tr = hess.trace();
    bool moved = false;
    if (det > 1e-12 * tr * tr) {
      Eigen::Vector2d step = -hess.inverse() * g;
      for (int halving = 0; halving < 30 && !moved; ++halving, step *= 0.5) {
        const Eigen::Vector2d y = x + step;
        // Residual-only progress is accepted only while the objective is flat
        // to rounding; otherwise the two criteria can cycle.
        const double fy = objective(points, lambda, y);
        if (fy < f0 || (fy <= f0 + 8 * DBL_EPSILON * f0 &&
                        certify_median(points, lambda, y).residual < c.residual)) {
          x = y;
          moved = true;
        }
      }
    }
    if (!moved) x = num / den;
  }
  throw NoConvergence("weiszfeld: certificate residual above tolerance", max_iter, best.residual);
}

double c_lambda(const Eigen::Matrix2Xd& points, const Weights& lambda, double tol) {
  return objective(points, lambda, weiszfeld(points, lambda, tol).point);
}

// ---------------------------------------------------------------- W1 in the plane

double w1_exact_small(const PointCloud& a, const PointCloud& b, int atom_budget) {
  auto counts_for = [](const PointCloud& c, int d, std::vector<int>& out) {
    out.clear();
    int total = 0;
    for (Index k = 0; k < c.size(); ++k) {
      const double scaled = c.masses(k) * d;
      const double r = std::round(scaled);
      if (std::abs(scaled - r) > 1e-9 * d) return false;
      out.push_back(static_cast<int>(r));
      total += static_cast<int>(r);
    }
    return total == d;
  };
  std::vector<int> ca, cb;
  int d = 1;
  for (; d <= atom_budget; ++d)
    if (counts_for(a, d, ca) && counts_for(b, d, cb)) break;
  if (d > atom_budget)
    throw BudgetExceeded("w1_exact_small: no common denominator up to " + std::to_string(atom_budget));

  auto expand = [d](const PointCloud& c, const std::vector<int>& counts) {
    Eigen::Matrix2Xd pts(2, d);
    Index col = 0;
    for (Index k = 0; k < c.size(); ++k)
      for (int r = 0; r < counts[static_cast<std::size_t>(k)]; ++r) pts.col(col++) = c.points.col(k);
    return pts;
  };
  const Eigen::Matrix2Xd pa = expand(a, ca), pb = expand(b, cb);
  Eigen::MatrixXd cost(d, d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < d; ++i) cost(i, j) = (pa.col(i) - pb.col(j)).norm();
  return assignment_cost(cost) / d;
}

double w1_transport(const PointCloud& a, const PointCloud& b, double max_pairs) {
  if (static_cast<double>(a.size()) * static_cast<double>(b.size()) > max_pairs)
    throw BudgetExceeded("w1_transport: " + std::to_string(a.size()) + " x " +
                         std::to_string(b.size()) + " exceeds the pair budget");
  using std::size_t;
  constexpr double eps = 1e-15;
  const size_t n = static_cast<size_t>(a.size()), m = static_cast<size_t>(b.size());
  auto cost = [&](size_t i, size_t j) {
    return (a.points.col(static_cast<Index>(i)) - b.points.col(static_cast<Index>(j))).norm();
  };

  std::vector<double> supply(a.masses.data(), a.masses.data() + n);
  std::vector<double> demand(b.masses.data(), b.masses.data() + m);
  // Nodes: sources 0..n-1, sinks n..n+m-1, and a super sink fed by every sink
  // with demand left. Reduced costs rc(x -> y) = c + pot[x] - pot[y] stay >= 0.
  const size_t sink = n + m, nodes = n + m + 1;
  constexpr size_t none = static_cast<size_t>(-1);
  std::vector<double> pot(nodes, 0.0), dist(nodes);
  std::vector<size_t> parent(nodes);
  std::vector<char> done(nodes);
  std::vector<std::vector<std::pair<size_t, double>>> inflow(m);

  const size_t max_phases = 20 * nodes + 1000;
  for (size_t phase = 0;; ++phase) {
    if (phase > max_phases) throw Error("w1_transport: no progress");
    if (std::none_of(supply.begin(), supply.end(), [](double s) { return s > eps; }) ||
        std::none_of(demand.begin(), demand.end(), [](double s) { return s > eps; }))
      break;

    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(parent.begin(), parent.end(), none);
    std::fill(done.begin(), done.end(), 0);
    for (size_t i = 0; i < n; ++i)
      if (supply[i] > eps) dist[i] = 0.0;

    auto relax = [&](size_t from, size_t to, double rc) {
      const double d = dist[from] + std::max(0.0, rc);
      if (d < dist[to]) {
        dist[to] = d;
        parent[to] = from;
      }
    };
    // Dense Dijkstra: every source is adjacent to every sink.
    while (!done[sink]) {
      size_t u = none;
      for (size_t v = 0; v < nodes; ++v)
        if (!done[v] && dist[v] < kInf && (u == none || dist[v] < dist[u])) u = v;
      if (u == none) throw Error("w1_transport: no augmenting path");
      done[u] = 1;
      if (u < n) {
        for (size_t j = 0; j < m; ++j)
          if (!done[n + j]) relax(u, n + j, cost(u, j) + pot[u] - pot[n + j]);
      } else if (u < sink) {
        const size_t j = u - n;
        for (const auto& [i, f] : inflow[j])
          if (!done[i] && f > 0.0) relax(u, i, -cost(i, j) + pot[u] - pot[i]);
        if (demand[j] > eps) relax(u, sink, pot[u] - pot[sink]);
      }
    }

    const double dt = dist[sink];
    for (size_t v = 0; v < nodes; ++v) pot[v] += std::min(dist[v], dt);

    auto flow_entry = [&](size_t j, size_t i) {
      return std::find_if(inflow[j].begin(), inflow[j].end(), [i](const auto& e) { return e.first == i; });
    };
    const size_t last = parent[sink];
    double amount = demand[last - n];
    size_t v = last;
    for (; parent[v] != none; v = parent[v])
      if (parent[v] >= n) amount = std::min(amount, flow_entry(parent[v] - n, v)->second);
    amount = std::min(amount, supply[v]);
    supply[v] -= amount;
    demand[last - n] -= amount;

    for (v = last; parent[v] != none; v = parent[v]) {
      const size_t u = parent[v];
      if (u < n) {
        auto it = flow_entry(v - n, u);
        if (it == inflow[v - n].end())
          inflow[v - n].emplace_back(u, amount);
        else
          it->second += amount;
      } else {
        auto it = flow_entry(u - n, v);
        it->second -= amount;
        if (it->second <= 1e-18) inflow[u - n].erase(it);
      }
    }
  }

  double total = 0.0;
  for (size_t j = 0; j < m; ++j)
    for (const auto& [i, f] : inflow[j]) total += f * cost(i, j);
  return total;
}

double w1_projection_lower_bound(const PointCloud& a, const PointCloud& b, int directions) {
  double best = 0.0;
  const std::span<const double> ma(a.masses.data(), static_cast<std::size_t>(a.size()));
  const std::span<const double> mb(b.masses.data(), static_cast<std::size_t>(b.size()));
  for (int k = 0; k < directions; ++k) {
    const double angle = M_PI * k / directions;
    const Eigen::Vector2d e(std::cos(angle), std::sin(angle));
    const Eigen::VectorXd pa = a.points.transpose() * e;
    const Eigen::VectorXd pb = b.points.transpose() * e;
    const Measure1D ua = Measure1D::atomic(std::span<const double>(pa.data(), ma.size()), ma);
    const Measure1D ub = Measure1D::atomic(std::span<const double>(pb.data(), mb.size()), mb);
    best = std::max(best, w1_1d(ua, ub));
  }
  return best;
}

bool dirac_median_check(const Eigen::Matrix2Xd& positions, const Weights& lambda,
                        const PointCloud& candidate, double tol) {
  const Index n = positions.cols();
  if (n == 0 || lambda.size() != n) throw std::invalid_argument("dirac_median_check: size mismatch");
  const double scale = spread(positions);
  const Eigen::Vector2d base = positions.col(0);

  // Collinear configurations have a segment of medians.
  Index far = 0;
  for (Index i = 0; i < n; ++i)
    if ((positions.col(i) - base).norm() > (positions.col(far) - base).norm()) far = i;
  const Eigen::Vector2d dir = far == 0 ? Eigen::Vector2d(1.0, 0.0)
                                       : Eigen::Vector2d((positions.col(far) - base).normalized());
  bool collinear = true;
  for (Index i = 0; i < n && collinear; ++i) {
    const Eigen::Vector2d d = positions.col(i) - base;
    collinear = std::abs(d.x() * dir.y() - d.y() * dir.x()) <= 1e-12 * (1.0 + scale);
  }

  Eigen::Vector2d seg_a, seg_b;
  if (collinear) {
    const Eigen::VectorXd t = positions.transpose() * dir - Eigen::VectorXd::Constant(n, base.dot(dir));
    const MedianInterval m = weighted_median_interval(t, lambda);
    seg_a = base + m.lower * dir;
    seg_b = base + m.upper * dir;
  } else {
    seg_a = seg_b = weiszfeld(positions, lambda, 1e-13).point;
  }
  for (Index k = 0; k < candidate.size(); ++k)
    if (segment_distance(candidate.points.col(k), seg_a, seg_b) > tol) return false;
  return true;
}

// ---------------------------------------------------------------- moment and hull bounds

MomentReport moment_bound_check(const PointCloud& median, std::span<const PointCloud> samples,
                                double p, double slack, double hull_slack) {
  if (!(p > 0.0)) throw std::invalid_argument("moment_bound_check: p must be positive");
  MomentReport r;
  r.p = p;
  r.slack = slack;
  r.hull_slack = hull_slack;
  auto moment = [p](const PointCloud& c) {
    return (c.points.colwise().norm().transpose().array().pow(p) * c.masses.array()).sum();
  };
  r.median_moment = moment(median);
  std::vector<Eigen::Vector2d> pts;
  for (const auto& s : samples) {
    r.sample_moments += moment(s);
    for (Index k = 0; k < s.size(); ++k) pts.push_back(s.points.col(k));
  }
  r.moment_ok = r.median_moment <= r.sample_moments + slack;

  const auto hull = convex_hull(std::move(pts));
  for (Index k = 0; k < median.size(); ++k) {
    const double d = hull_distance(hull, median.points.col(k));
    r.hull_distance = std::max(r.hull_distance, d);
    if (d > hull_slack) r.mass_outside_hull += median.masses(k);
  }
  r.hull_ok = r.hull_distance <= hull_slack;
  return r;
}

MomentReport moment_bound_check(const ScalarField& median, std::span<const ScalarField> samples,
                                double p, const GridFrame& frame, double support_tol) {
  const Index side = median.rows();
  const double h = frame.step(side);
  double max_radius = 0.0;
  for (Index i : {Index{0}, side - 1})
    for (Index j : {Index{0}, side - 1}) max_radius = std::max(max_radius, frame.center(i, j, side).norm());
  const double slack = h * p * std::pow(max_radius, p - 1.0);

  std::vector<PointCloud> clouds;
  for (const auto& s : samples) clouds.push_back(grid_cloud(s, frame));
  MomentReport r = moment_bound_check(grid_cloud(median, frame), clouds, p, slack, h);

  // Hull distance over the numerically relevant support only.
  const PointCloud support = grid_cloud(median, frame, support_tol);
  const MomentReport trimmed = moment_bound_check(support, clouds, p, slack, h);
  r.hull_distance = trimmed.hull_distance;
  r.hull_ok = trimmed.hull_ok;
  return r;
}

}  // namespace wmed
