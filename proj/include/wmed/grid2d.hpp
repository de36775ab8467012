#pragma once

// Discrete calculus on a square p x p grid with unit spacing.
//
// Fields are stored as Eigen arrays indexed (i, j); the x direction runs along
// i (rows) and the y direction along j (columns). The gradient uses forward
// differences with homogeneous Neumann boundary, and the divergence is its
// negative adjoint, so <grad u, s> = -<u, div s> holds exactly in exact
// arithmetic. Physical spacing h = 1/p is not applied anywhere: callers that
// need physical units rescale flows by h.

#include "wmed/common.hpp"

#include <Eigen/Core>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

namespace wmed {

template <class Scalar>
using Field = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using ScalarField = Field<double>;

/// Per-cell 2-vector field.
template <class Scalar>
struct Flow {
  Field<Scalar> x;
  Field<Scalar> y;

  static Flow zero(Index p) { return {Field<Scalar>::Zero(p, p), Field<Scalar>::Zero(p, p)}; }

  Index side() const noexcept { return x.rows(); }

  Flow& operator+=(const Flow& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  Flow& operator-=(const Flow& o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  Flow& operator*=(Scalar a) {
    x *= a;
    y *= a;
    return *this;
  }
  friend Flow operator+(Flow a, const Flow& b) { return a += b; }
  friend Flow operator-(Flow a, const Flow& b) { return a -= b; }
  friend Flow operator*(Scalar a, Flow b) { return b *= a; }
  friend Flow operator*(Flow b, Scalar a) { return b *= a; }

  /// Per-cell Euclidean norm.
  Field<Scalar> magnitude() const { return (x.square() + y.square()).sqrt(); }
};

using FlowField = Flow<double>;

/// Grid geometry. Operators work in index units; h is only for physical coordinates.
struct Grid {
  Index p = 0;

  explicit Grid(Index side) : p(side) {
    if (side < 2) throw std::invalid_argument("grid: need p >= 2");
  }
  double h() const noexcept { return 1.0 / static_cast<double>(p); }
  Index cells() const noexcept { return p * p; }
};

template <class Derived>
Flow<typename Derived::Scalar> grad(const Eigen::ArrayBase<Derived>& u) {
  using Scalar = typename Derived::Scalar;
  const Index p = u.rows();
  Flow<Scalar> g = Flow<Scalar>::zero(p);
  g.x.topRows(p - 1) = u.bottomRows(p - 1) - u.topRows(p - 1);
  g.y.leftCols(p - 1) = u.rightCols(p - 1) - u.leftCols(p - 1);
  return g;
}

template <class Scalar>
Field<Scalar> div(const Flow<Scalar>& s) {
  const Index p = s.side();
  Field<Scalar> d = Field<Scalar>::Zero(p, p);
  d.topRows(p - 1) += s.x.topRows(p - 1);
  d.bottomRows(p - 1) -= s.x.topRows(p - 1);
  d.leftCols(p - 1) += s.y.leftCols(p - 1);
  d.rightCols(p - 1) -= s.y.leftCols(p - 1);
  return d;
}

/// Five-point Neumann Laplacian, equal to div(grad(u)).
template <class Derived>
Field<typename Derived::Scalar> laplacian(const Eigen::ArrayBase<Derived>& u) {
  using Scalar = typename Derived::Scalar;
  const Index p = u.rows();
  Field<Scalar> out = Field<Scalar>::Zero(p, p);
  const Field<Scalar> dx = u.bottomRows(p - 1) - u.topRows(p - 1);
  const Field<Scalar> dy = u.rightCols(p - 1) - u.leftCols(p - 1);
  out.topRows(p - 1) += dx;
  out.bottomRows(p - 1) -= dx;
  out.leftCols(p - 1) += dy;
  out.rightCols(p - 1) -= dy;
  return out;
}

template <class Scalar>
Scalar inner(const Flow<Scalar>& a, const Flow<Scalar>& b) {
  return (a.x * b.x).sum() + (a.y * b.y).sum();
}

template <class Scalar>
Scalar squared_norm(const Flow<Scalar>& a) {
  return a.x.square().sum() + a.y.square().sum();
}

/// Discrete l_{1,2} norm: sum over cells of the Euclidean norm of the cell vector.
template <class Scalar>
Scalar group_norm(const Flow<Scalar>& a) {
  return a.magnitude().sum();
}

/// Mean-zero gauge: subtract the average.
template <class Derived>
Field<typename Derived::Scalar> remove_mean(const Eigen::ArrayBase<Derived>& u) {
  return u - u.mean();
}

/// True when every entry is >= 0 and the entries sum to 1 within tol.
bool is_grid_measure(const ScalarField& v, double tol = 1e-10);

struct CgOptions {
  double tol = 1e-10;  ///< relative residual target ||A x - b|| <= tol ||b||
  int max_iter = 10000;
};

struct CgReport {
  int iterations = 0;
  double relative_residual = 0.0;
};

/// Solves -Delta u = rhs with mean(u) = 0. The right-hand side is projected to
/// zero mean when |mean| <= 1e-9 and rejected with NonZeroMeanRHS above that.
/// `initial` is a warm start; it need not be mean-free.
ScalarField solve_neumann_poisson(const ScalarField& rhs, const CgOptions& opts,
                                  const ScalarField* initial = nullptr, CgReport* report = nullptr);

/// Solves (I - Delta / n) z = rhs. Symmetric positive definite for n >= 1.
ScalarField solve_shifted(const ScalarField& rhs, int n, const CgOptions& opts,
                          const ScalarField* initial = nullptr, CgReport* report = nullptr);

inline ScalarField solve_neumann_poisson(const ScalarField& rhs, double tol, int max_iter) {
  return solve_neumann_poisson(rhs, CgOptions{tol, max_iter});
}

inline ScalarField solve_shifted(const ScalarField& rhs, int n, double tol, int max_iter) {
  return solve_shifted(rhs, n, CgOptions{tol, max_iter});
}

enum class EllipticMethod {
  conjugate_gradient,
  cholesky,  ///< sparse factorization computed once per grid, CG refinement if needed
};

struct EllipticOptions {
  EllipticMethod method = EllipticMethod::cholesky;
  double tol = 1e-10;
  int max_iter = 20000;
};

/// Reusable solver for the two elliptic systems of the median iteration on one
/// grid size: -Delta u = f (mean-zero gauge) and (I - Delta/n) z = f. Both
/// honour the same residual contract as the CG entry points above.
/// Thread-safe; factorizations are built lazily.
class EllipticSolver {
 public:
  EllipticSolver(Index p, EllipticOptions opts = {});
  ~EllipticSolver();
  EllipticSolver(EllipticSolver&&) noexcept;
  EllipticSolver& operator=(EllipticSolver&&) noexcept;

  Index side() const noexcept { return p_; }
  const EllipticOptions& options() const noexcept { return opts_; }

  ScalarField poisson(const ScalarField& rhs, const ScalarField* initial = nullptr,
                      CgReport* report = nullptr) const;
  ScalarField shifted(const ScalarField& rhs, int n, const ScalarField* initial = nullptr,
                      CgReport* report = nullptr) const;

 private:
  struct Factorizations;
  Index p_;
  EllipticOptions opts_;
  std::unique_ptr<Factorizations> f_;
};

}  // namespace wmed
