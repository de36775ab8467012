#include "wmed/grid2d.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cmath>
#include <string>
#include <vector>

namespace wmed {

namespace {

// out = -Delta u + shift * u, written as raw loops over column-major storage.
void apply_operator(const ScalarField& u, double shift, ScalarField& out) {
  const Index p = u.rows();
  out.resize(p, p);
  const double* in = u.data();
  double* o = out.data();
  for (Index j = 0; j < p; ++j) {
    const double* col = in + j * p;
    const double* left = j > 0 ? col - p : nullptr;
    const double* right = j + 1 < p ? col + p : nullptr;
    double* oc = o + j * p;
    for (Index i = 0; i < p; ++i) {
      const double c = col[i];
      double acc = shift * c;
      if (i > 0) acc += c - col[i - 1];
      if (i + 1 < p) acc += c - col[i + 1];
      if (left) acc += c - left[i];
      if (right) acc += c - right[i];
      oc[i] = acc;
    }
  }
}

double dot(const ScalarField& a, const ScalarField& b) { return (a * b).sum(); }

// Plain conjugate gradient on the SPD (or PSD with consistent rhs) operator.
ScalarField conjugate_gradient(const ScalarField& rhs, double shift, bool project_mean,
                               const CgOptions& opts, const ScalarField* initial, CgReport* report,
                               const char* name) {
  const Index p = rhs.rows();
  const double rhs_norm = std::sqrt(dot(rhs, rhs));
  ScalarField x = ScalarField::Zero(p, p);
  if (rhs_norm == 0.0) {
    if (report) *report = {0, 0.0};
    return x;
  }
  if (initial && initial->rows() == p && initial->cols() == p) {
    x = *initial;
    if (project_mean) x -= x.mean();
  }

  ScalarField ax;
  apply_operator(x, shift, ax);
  ScalarField r = rhs - ax;
  if (project_mean) r -= r.mean();
  double rr = dot(r, r);
  const double target = opts.tol * rhs_norm;

  ScalarField d = r;
  ScalarField ad(p, p);
  int it = 0;
  while (std::sqrt(rr) > target) {
    if (it >= opts.max_iter) {
      throw NoConvergence(std::string(name) + ": conjugate gradient did not converge", it,
                          std::sqrt(rr) / rhs_norm);
    }
    apply_operator(d, shift, ad);
    const double dad = dot(d, ad);
    const double alpha = rr / dad;
    x += alpha * d;
    r -= alpha * ad;
    if (project_mean) r -= r.mean();
    const double rr_next = dot(r, r);
    d = r + (rr_next / rr) * d;
    rr = rr_next;
    ++it;
  }
  if (project_mean) x -= x.mean();
  if (report) *report = {it, std::sqrt(rr) / rhs_norm};
  return x;
}

using SparseMatrix = Eigen::SparseMatrix<double>;
using Factor = Eigen::SimplicialLDLT<SparseMatrix>;

// -Delta + shift I over the cells with linear index >= first (column-major).
// Dropping cell 0 pins the gauge of the singular Neumann operator.
SparseMatrix assemble(Index p, double shift, Index first) {
  const Index n = p * p - first;
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(5 * n));
  for (Index j = 0; j < p; ++j) {
    for (Index i = 0; i < p; ++i) {
      const Index k = i + j * p;
      if (k < first) continue;
      double diag = shift;
      auto link = [&](Index ni, Index nj) {
        diag += 1.0;
        const Index m = ni + nj * p;
        if (m >= first) entries.emplace_back(k - first, m - first, -1.0);
      };
      if (i > 0) link(i - 1, j);
      if (i + 1 < p) link(i + 1, j);
      if (j > 0) link(i, j - 1);
      if (j + 1 < p) link(i, j + 1);
      entries.emplace_back(k - first, k - first, diag);
    }
  }
  SparseMatrix a(n, n);
  a.setFromTriplets(entries.begin(), entries.end());
  return a;
}

void factorize(Factor& f, const SparseMatrix& a, const char* name) {
  f.compute(a);
  if (f.info() != Eigen::Success) throw Error(std::string(name) + ": factorization failed");
}

double relative_residual(const ScalarField& x, const ScalarField& rhs, double shift) {
  const double norm = std::sqrt(dot(rhs, rhs));
  if (norm == 0.0) return 0.0;
  ScalarField ax;
  apply_operator(x, shift, ax);
  return std::sqrt((ax - rhs).square().sum()) / norm;
}

}  // namespace

bool is_grid_measure(const ScalarField& v, double tol) {
  if (v.size() == 0 || !v.allFinite()) return false;
  return v.minCoeff() >= 0.0 && std::abs(v.sum() - 1.0) <= tol;
}

ScalarField solve_neumann_poisson(const ScalarField& rhs, const CgOptions& opts,
                                  const ScalarField* initial, CgReport* report) {
  const double mean = rhs.mean();
  if (std::abs(mean) > 1e-9)
    throw NonZeroMeanRHS("neumann poisson: right-hand side mean " + std::to_string(mean) +
                         " is outside the range of the Laplacian");
  const ScalarField centered = rhs - mean;
  return conjugate_gradient(centered, 0.0, true, opts, initial, report, "neumann poisson");
}

ScalarField solve_shifted(const ScalarField& rhs, int n, const CgOptions& opts,
                          const ScalarField* initial, CgReport* report) {
  if (n < 1) throw std::invalid_argument("shifted solve: need n >= 1");
  // (I - Delta/n) z = rhs  <=>  (-Delta + n I) z = n rhs
  const double shift = static_cast<double>(n);
  const ScalarField scaled = shift * rhs;
  return conjugate_gradient(scaled, shift, false, opts, initial, report, "shifted solve");
}

struct EllipticSolver::Factorizations {
  std::mutex lock;
  std::unique_ptr<Factor> poisson;
  std::map<int, std::unique_ptr<Factor>> shifted;
};

EllipticSolver::EllipticSolver(Index p, EllipticOptions opts)
    : p_(p), opts_(opts), f_(std::make_unique<Factorizations>()) {
  if (p < 2) throw std::invalid_argument("elliptic solver: need p >= 2");
}

EllipticSolver::~EllipticSolver() = default;
EllipticSolver::EllipticSolver(EllipticSolver&&) noexcept = default;
EllipticSolver& EllipticSolver::operator=(EllipticSolver&&) noexcept = default;

ScalarField EllipticSolver::poisson(const ScalarField& rhs, const ScalarField* initial,
                                    CgReport* report) const {
  const CgOptions cg{opts_.tol, opts_.max_iter};
  if (opts_.method == EllipticMethod::conjugate_gradient)
    return solve_neumann_poisson(rhs, cg, initial, report);

  const double mean = rhs.mean();
  if (std::abs(mean) > 1e-9)
    throw NonZeroMeanRHS("neumann poisson: right-hand side mean " + std::to_string(mean) +
                         " is outside the range of the Laplacian");
  const ScalarField centered = rhs - mean;
  const Factor* f = nullptr;
  {
    std::lock_guard guard(f_->lock);
    if (!f_->poisson) {
      f_->poisson = std::make_unique<Factor>();
      factorize(*f_->poisson, assemble(p_, 0.0, 1), "neumann poisson");
    }
    f = f_->poisson.get();
  }
  // The pinned system is consistent because the dropped equation is minus the
  // sum of the others for a mean-free right-hand side.
  const Index n = p_ * p_;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  x.tail(n - 1) = f->solve(Eigen::Map<const Eigen::VectorXd>(centered.data(), n).tail(n - 1));
  ScalarField u = Eigen::Map<const ScalarField>(x.data(), p_, p_);
  u -= u.mean();
  const double res = relative_residual(u, centered, 0.0);
  if (res > opts_.tol) return solve_neumann_poisson(centered, cg, &u, report);
  if (report) *report = {0, res};
  return u;
}

ScalarField EllipticSolver::shifted(const ScalarField& rhs, int n, const ScalarField* initial,
                                    CgReport* report) const {
  const CgOptions cg{opts_.tol, opts_.max_iter};
  if (opts_.method == EllipticMethod::conjugate_gradient)
    return solve_shifted(rhs, n, cg, initial, report);
  if (n < 1) throw std::invalid_argument("shifted solve: need n >= 1");

  const Factor* f = nullptr;
  {
    std::lock_guard guard(f_->lock);
    auto& slot = f_->shifted[n];
    if (!slot) {
      slot = std::make_unique<Factor>();
      factorize(*slot, assemble(p_, static_cast<double>(n), 0), "shifted solve");
    }
    f = slot.get();
  }
  const double shift = static_cast<double>(n);
  const ScalarField scaled = shift * rhs;
  const Eigen::VectorXd x = f->solve(Eigen::Map<const Eigen::VectorXd>(scaled.data(), p_ * p_));
  ScalarField z = Eigen::Map<const ScalarField>(x.data(), p_, p_);
  const double res = relative_residual(z, scaled, shift);
  if (res > opts_.tol) return solve_shifted(rhs, n, cg, &z, report);
  if (report) *report = {0, res};
  return z;
}

}  // namespace wmed
