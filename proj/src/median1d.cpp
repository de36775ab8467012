#include "wmed/median1d.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace wmed {

namespace {

constexpr double kDropMass = 1e-15;
constexpr double kMassTolerance = 1e-9;

void check_theta(double theta) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw std::invalid_argument("theta must lie in [0, 1]");
}

void check_samples(const Weights& lambda, std::span<const Measure1D> samples) {
  if (samples.empty()) throw std::invalid_argument("median: no samples");
  if (static_cast<Index>(samples.size()) != lambda.size())
    throw std::invalid_argument("median: weight count differs from sample count");
}

// Sorted union of all knots.
std::vector<double> merged_knots(std::span<const Measure1D> measures) {
  std::vector<double> all;
  for (const auto& m : measures)
    all.insert(all.end(), m.knots().data(), m.knots().data() + m.knot_count());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}

// Fractions s in (0, 1) where two of the lines a_i + (b_i - a_i) s cross, sorted.
std::vector<double> crossings(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  std::vector<double> s;
  const Index n = a.size();
  for (Index i = 0; i < n; ++i) {
    for (Index k = i + 1; k < n; ++k) {
      const double d0 = a(i) - a(k);
      const double d1 = b(i) - b(k);
      if ((d0 < 0.0 && d1 > 0.0) || (d0 > 0.0 && d1 < 0.0)) {
        const double t = d0 / (d0 - d1);
        if (t > 0.0 && t < 1.0) s.push_back(t);
      }
    }
  }
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

// Integral over [0, len] of |a + (b - a) s / len|.
double abs_linear_integral(double a, double b, double len) {
  if ((a >= 0.0 && b >= 0.0) || (a <= 0.0 && b <= 0.0)) return 0.5 * (std::abs(a) + std::abs(b)) * len;
  return 0.5 * (a * a + b * b) / (std::abs(a) + std::abs(b)) * len;
}

}  // namespace

// ---------------------------------------------------------------- construction

Measure1D Measure1D::atomic(std::span<const double> positions, std::span<const double> masses) {
  if (positions.size() != masses.size() || positions.empty())
    throw std::invalid_argument("atomic measure: need matching, nonempty positions and masses");
  std::vector<Piece> pieces;
  pieces.reserve(positions.size());
  for (std::size_t k = 0; k < positions.size(); ++k) {
    if (!std::isfinite(positions[k])) throw std::invalid_argument("atomic measure: non-finite atom");
    pieces.push_back({positions[k], positions[k], masses[k]});
  }
  return from_pieces(pieces);
}

Measure1D Measure1D::dirac(double x) {
  const double one = 1.0;
  return atomic(std::span<const double>(&x, 1), std::span<const double>(&one, 1));
}

Measure1D Measure1D::histogram(std::span<const double> edges, std::span<const double> masses) {
  if (edges.size() != masses.size() + 1 || masses.empty())
    throw std::invalid_argument("histogram: need one more edge than bins");
  std::vector<Piece> pieces;
  for (std::size_t k = 0; k < masses.size(); ++k) {
    if (!(edges[k] < edges[k + 1])) throw std::invalid_argument("histogram: edges must increase");
    pieces.push_back({edges[k], edges[k + 1], masses[k]});
  }
  return from_pieces(pieces);
}

Measure1D Measure1D::from_pieces(std::span<const Piece> pieces) {
  double total = 0.0;
  std::vector<double> xs;
  for (const Piece& p : pieces) {
    if (!std::isfinite(p.left) || !std::isfinite(p.right) || !std::isfinite(p.mass) || p.mass < 0.0 ||
        p.right < p.left)
      throw std::invalid_argument("measure: invalid piece");
    if (p.mass < kDropMass) continue;
    total += p.mass;
    xs.push_back(p.left);
    xs.push_back(p.right);
  }
  if (xs.empty()) throw std::invalid_argument("measure: no mass");
  if (std::abs(total - 1.0) > kMassTolerance)
    throw std::invalid_argument("measure: masses sum to " + std::to_string(total) + ", expected 1");
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  const Index k = static_cast<Index>(xs.size());

  // Atom mass per knot and density per gap, accumulated with difference arrays.
  Eigen::VectorXd atom = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd slope_delta = Eigen::VectorXd::Zero(k);
  auto index_of = [&](double v) {
    return static_cast<Index>(std::lower_bound(xs.begin(), xs.end(), v) - xs.begin());
  };
  for (const Piece& p : pieces) {
    if (p.mass < kDropMass) continue;
    const Index a = index_of(p.left);
    if (p.left == p.right) {
      atom(a) += p.mass;
    } else {
      const double density = p.mass / (p.right - p.left);
      slope_delta(a) += density;
      slope_delta(index_of(p.right)) -= density;
    }
  }

  Measure1D m;
  m.x_ = Eigen::Map<const Eigen::VectorXd>(xs.data(), k);
  m.lo_.resize(k);
  m.hi_.resize(k);
  double f = 0.0;
  double slope = 0.0;
  for (Index i = 0; i < k; ++i) {
    if (i > 0) f += std::max(0.0, slope) * (xs[static_cast<std::size_t>(i)] - xs[static_cast<std::size_t>(i - 1)]);
    m.lo_(i) = f;
    f += atom(i);
    m.hi_(i) = f;
    slope += slope_delta(i);
  }
  m.lo_ /= f;
  m.hi_ /= f;
  m.canonicalize();
  return m;
}

Measure1D Measure1D::from_cdf(Eigen::VectorXd knots, Eigen::VectorXd left, Eigen::VectorXd right) {
  const Index k = knots.size();
  if (k == 0 || left.size() != k || right.size() != k)
    throw std::invalid_argument("measure: cdf arrays must be nonempty and of equal length");
  constexpr double tol = 1e-12;
  for (Index i = 0; i < k; ++i) {
    if (!std::isfinite(knots(i)) || !std::isfinite(left(i)) || !std::isfinite(right(i)))
      throw std::invalid_argument("measure: non-finite cdf data");
    if (i > 0 && !(knots(i) > knots(i - 1)))
      throw std::invalid_argument("measure: knots must be strictly increasing");
    if (right(i) < left(i) - tol || (i > 0 && left(i) < right(i - 1) - tol))
      throw std::invalid_argument("measure: cdf must be nondecreasing");
  }
  if (std::abs(left(0)) > kMassTolerance || std::abs(right(k - 1) - 1.0) > kMassTolerance)
    throw std::invalid_argument("measure: cdf must run from 0 to 1");
  Measure1D m;
  m.x_ = std::move(knots);
  m.lo_ = std::move(left);
  m.hi_ = std::move(right);
  m.canonicalize();
  return m;
}

void Measure1D::canonicalize() {
  // Monotone clean-up of rounding, then exact end values.
  Index k = x_.size();
  double run = 0.0;
  for (Index i = 0; i < k; ++i) {
    lo_(i) = std::clamp(std::max(lo_(i), run), 0.0, 1.0);
    hi_(i) = std::clamp(std::max(hi_(i), lo_(i)), 0.0, 1.0);
    run = hi_(i);
  }
  lo_(0) = 0.0;
  hi_(k - 1) = 1.0;

  std::vector<Index> keep;
  keep.reserve(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) {
    const bool flat_before = i == 0 || (lo_(i) <= 0.0 && hi_(i) <= 0.0);
    // Leading knot that carries nothing and starts a zero piece.
    if (i + 1 < k && hi_(i) <= 0.0 && lo_(i + 1) <= 0.0 && flat_before) continue;
    // Trailing knot after the CDF already reached 1.
    if (i > 0 && lo_(i) >= 1.0 && !keep.empty() && hi_(keep.back()) >= 1.0) continue;
    // Interior knot without an atom where the density does not change.
    if (!keep.empty() && i + 1 < k && hi_(i) - lo_(i) <= kDropMass) {
      const Index prev = keep.back();
      const double s0 = (lo_(i) - hi_(prev)) / (x_(i) - x_(prev));
      const double s1 = (lo_(i + 1) - hi_(i)) / (x_(i + 1) - x_(i));
      if (std::abs(s0 - s1) <= 1e-12 * std::max(std::abs(s0), std::abs(s1))) continue;
    }
    keep.push_back(i);
  }
  if (keep.size() != static_cast<std::size_t>(k)) {
    Eigen::VectorXd x(keep.size()), lo(keep.size()), hi(keep.size());
    for (std::size_t j = 0; j < keep.size(); ++j) {
      x(static_cast<Index>(j)) = x_(keep[j]);
      lo(static_cast<Index>(j)) = lo_(keep[j]);
      hi(static_cast<Index>(j)) = hi_(keep[j]);
    }
    x_ = std::move(x);
    lo_ = std::move(lo);
    hi_ = std::move(hi);
    k = x_.size();
    lo_(0) = 0.0;
    hi_(k - 1) = 1.0;
  }
}

// ---------------------------------------------------------------- queries

double Measure1D::cdf(double x) const {
  const Index k = x_.size();
  const auto* begin = x_.data();
  const Index i = static_cast<Index>(std::upper_bound(begin, begin + k, x) - begin) - 1;
  if (i < 0) return 0.0;
  if (i == k - 1) return 1.0;
  if (x == x_(i)) return hi_(i);
  const double s = (x - x_(i)) / (x_(i + 1) - x_(i));
  return hi_(i) + s * (lo_(i + 1) - hi_(i));
}

double Measure1D::cdf_before(double x) const {
  const Index k = x_.size();
  const auto* begin = x_.data();
  const Index i = static_cast<Index>(std::lower_bound(begin, begin + k, x) - begin);
  if (i == 0) return 0.0;
  if (i < k && x == x_(i)) return lo_(i);
  if (i == k) return 1.0;
  const double s = (x - x_(i - 1)) / (x_(i) - x_(i - 1));
  return hi_(i - 1) + s * (lo_(i) - hi_(i - 1));
}

double Measure1D::quantile(double t) const {
  const Index k = x_.size();
  if (t <= 0.0) return x_(0);
  const auto* begin = hi_.data();
  const Index i = static_cast<Index>(std::lower_bound(begin, begin + k, t) - begin);
  if (i >= k) return x_(k - 1);
  if (i > 0 && lo_(i) >= t && lo_(i) > hi_(i - 1)) {
    const double s = (t - hi_(i - 1)) / (lo_(i) - hi_(i - 1));
    return x_(i - 1) + std::clamp(s, 0.0, 1.0) * (x_(i) - x_(i - 1));
  }
  return x_(i);
}

double Measure1D::quantile_right(double t) const {
  const Index k = x_.size();
  if (t >= 1.0) return x_(k - 1);
  const auto* begin = hi_.data();
  const Index i = static_cast<Index>(std::upper_bound(begin, begin + k, t) - begin);
  if (i >= k) return x_(k - 1);
  if (i > 0 && lo_(i) > t) {
    const double s = (t - hi_(i - 1)) / (lo_(i) - hi_(i - 1));
    return x_(i - 1) + std::clamp(s, 0.0, 1.0) * (x_(i) - x_(i - 1));
  }
  return x_(i);
}

bool Measure1D::is_atomic() const {
  for (Index i = 0; i + 1 < x_.size(); ++i)
    if (lo_(i + 1) > hi_(i)) return false;
  return true;
}

Eigen::VectorXd Measure1D::atoms() const {
  std::vector<double> a;
  for (Index i = 0; i < x_.size(); ++i)
    if (hi_(i) > lo_(i)) a.push_back(x_(i));
  return Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Index>(a.size()));
}

Eigen::VectorXd Measure1D::masses() const {
  std::vector<double> a;
  for (Index i = 0; i < x_.size(); ++i)
    if (hi_(i) > lo_(i)) a.push_back(hi_(i) - lo_(i));
  return Eigen::Map<const Eigen::VectorXd>(a.data(), static_cast<Index>(a.size()));
}

std::vector<Piece> Measure1D::pieces() const {
  std::vector<Piece> out;
  for (Index i = 0; i < x_.size(); ++i) {
    if (hi_(i) > lo_(i)) out.push_back({x_(i), x_(i), hi_(i) - lo_(i)});
    if (i + 1 < x_.size() && lo_(i + 1) > hi_(i)) out.push_back({x_(i), x_(i + 1), lo_(i + 1) - hi_(i)});
  }
  return out;
}

double Measure1D::mean() const {
  double m = 0.0;
  for (const Piece& p : pieces()) m += p.mass * 0.5 * (p.left + p.right);
  return m;
}

Measure1D Measure1D::translated(double shift) const {
  Measure1D m = *this;
  m.x_.array() += shift;
  return m;
}

double Measure1D::density_lp_norm(double p) const {
  double acc = 0.0;
  double peak = 0.0;
  for (const Piece& piece : pieces()) {
    if (piece.left == piece.right) return std::numeric_limits<double>::infinity();
    const double len = piece.right - piece.left;
    const double d = piece.mass / len;
    peak = std::max(peak, d);
    if (std::isfinite(p)) acc += std::pow(d, p) * len;
  }
  return std::isfinite(p) ? std::pow(acc, 1.0 / p) : peak;
}

// ---------------------------------------------------------------- distances

double w1_1d(const Measure1D& mu, const Measure1D& nu) {
  const Measure1D both[] = {mu, nu};
  const std::vector<double> xs = merged_knots(both);
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < xs.size(); ++j) {
    const double a = mu.cdf(xs[j]) - nu.cdf(xs[j]);
    const double b = mu.cdf_before(xs[j + 1]) - nu.cdf_before(xs[j + 1]);
    total += abs_linear_integral(a, b, xs[j + 1] - xs[j]);
  }
  return total;
}

double dispersion(const Weights& lambda, std::span<const Measure1D> samples, const Measure1D& mu) {
  check_samples(lambda, samples);
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    total += lambda[static_cast<Index>(i)] * w1_1d(samples[i], mu);
  return total;
}

// ---------------------------------------------------------------- selections

Measure1D vertical_selection(const Weights& lambda, std::span<const Measure1D> samples,
                             double theta) {
  check_samples(lambda, samples);
  check_theta(theta);
  const Index n = lambda.size();
  const std::vector<double> xs = merged_knots(samples);

  std::vector<double> kx, klo, khi;
  Eigen::VectorXd left(n), right(n), a(n), b(n), v(n);
  for (std::size_t j = 0; j < xs.size(); ++j) {
    for (Index i = 0; i < n; ++i) {
      left(i) = samples[static_cast<std::size_t>(i)].cdf_before(xs[j]);
      right(i) = samples[static_cast<std::size_t>(i)].cdf(xs[j]);
    }
    kx.push_back(xs[j]);
    klo.push_back(weighted_median(left, lambda, theta));
    khi.push_back(weighted_median(right, lambda, theta));
    if (j + 1 == xs.size()) break;

    // Inside the gap every F_i is linear; the median of the values switches
    // index only where two of them cross.
    a = right;
    for (Index i = 0; i < n; ++i) b(i) = samples[static_cast<std::size_t>(i)].cdf_before(xs[j + 1]);
    const double len = xs[j + 1] - xs[j];
    for (double s : crossings(a, b)) {
      const double x = xs[j] + s * len;
      if (!(x > kx.back() && x < xs[j + 1])) continue;
      v = a + s * (b - a);
      const double f = weighted_median(v, lambda, theta);
      kx.push_back(x);
      klo.push_back(f);
      khi.push_back(f);
    }
  }
  const Index k = static_cast<Index>(kx.size());
  return Measure1D::from_cdf(Eigen::Map<Eigen::VectorXd>(kx.data(), k),
                             Eigen::Map<Eigen::VectorXd>(klo.data(), k),
                             Eigen::Map<Eigen::VectorXd>(khi.data(), k));
}

Measure1D horizontal_selection(const Weights& lambda, std::span<const Measure1D> samples,
                               double theta) {
  check_samples(lambda, samples);
  check_theta(theta);
  const Index n = lambda.size();

  // Breakpoints of the quantile functions in (0, 1).
  std::vector<double> ts{0.0, 1.0};
  for (const auto& m : samples) {
    ts.insert(ts.end(), m.cdf_left().data(), m.cdf_left().data() + m.knot_count());
    ts.insert(ts.end(), m.cdf_right().data(), m.cdf_right().data() + m.knot_count());
  }
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

  std::vector<Piece> pieces;
  Eigen::VectorXd a(n), b(n), v(n);
  for (std::size_t j = 0; j + 1 < ts.size(); ++j) {
    const double t0 = ts[j];
    const double t1 = ts[j + 1];
    if (t0 < 0.0 || t1 > 1.0) continue;
    // On (t0, t1] each Q_i is affine from Q_i(t0+) to Q_i(t1).
    for (Index i = 0; i < n; ++i) {
      a(i) = samples[static_cast<std::size_t>(i)].quantile_right(t0);
      b(i) = samples[static_cast<std::size_t>(i)].quantile(t1);
    }
    std::vector<double> s = crossings(a, b);
    s.insert(s.begin(), 0.0);
    s.push_back(1.0);
    for (std::size_t k = 0; k + 1 < s.size(); ++k) {
      v = a + s[k] * (b - a);
      const double lo = weighted_median(v, lambda, theta);
      v = a + s[k + 1] * (b - a);
      const double hi = weighted_median(v, lambda, theta);
      pieces.push_back({lo, std::max(lo, hi), (t1 - t0) * (s[k + 1] - s[k])});
    }
  }
  return Measure1D::from_pieces(pieces);
}

bool verify_median_1d(const Weights& lambda, std::span<const Measure1D> samples,
                      const Measure1D& candidate, double tol) {
  check_samples(lambda, samples);
  const Index n = lambda.size();
  std::vector<Measure1D> all(samples.begin(), samples.end());
  all.push_back(candidate);
  const std::vector<double> xs = merged_knots(all);

  Eigen::VectorXd v(n), a(n), b(n);
  auto inside = [&](const Eigen::VectorXd& values, double f) {
    const MedianInterval m = weighted_median_interval(values, lambda);
    return f >= m.lower - tol && f <= m.upper + tol;
  };
  for (std::size_t j = 0; j < xs.size(); ++j) {
    for (Index i = 0; i < n; ++i) v(i) = samples[static_cast<std::size_t>(i)].cdf_before(xs[j]);
    if (!inside(v, candidate.cdf_before(xs[j]))) return false;
    for (Index i = 0; i < n; ++i) v(i) = samples[static_cast<std::size_t>(i)].cdf(xs[j]);
    if (!inside(v, candidate.cdf(xs[j]))) return false;
    if (j + 1 == xs.size()) break;

    // Between knots the candidate and the bounds are linear on each piece
    // delimited by crossings, so checking the piece ends suffices.
    a = v;
    for (Index i = 0; i < n; ++i) b(i) = samples[static_cast<std::size_t>(i)].cdf_before(xs[j + 1]);
    const double g0 = candidate.cdf(xs[j]);
    const double g1 = candidate.cdf_before(xs[j + 1]);
    for (double s : crossings(a, b)) {
      v = a + s * (b - a);
      if (!inside(v, g0 + s * (g1 - g0))) return false;
    }
  }
  return true;
}

bool selection_is_unique(const Weights& lambda) {
  const Index n = lambda.size();
  if (n > 44) throw std::length_error("selection_is_unique: more than 44 weights");
  // Split into halves, enumerate subset sums of each, and look for a pair
  // summing to 1/2.
  auto sums = [&](Index begin, Index end) {
    std::vector<double> s{0.0};
    for (Index i = begin; i < end; ++i) {
      const std::size_t m = s.size();
      for (std::size_t k = 0; k < m; ++k) s.push_back(s[k] + lambda[i]);
    }
    std::sort(s.begin(), s.end());
    return s;
  };
  const Index half = n / 2;
  const std::vector<double> left = sums(0, half);
  const std::vector<double> right = sums(half, n);
  for (double l : left) {
    const double want = 0.5 - l;
    const auto it = std::lower_bound(right.begin(), right.end(), want - kHalfTolerance);
    if (it != right.end() && *it <= want + kHalfTolerance) return false;
  }
  return true;
}

}  // namespace wmed
