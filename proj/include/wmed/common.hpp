#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace wmed {

using Eigen::Index;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative method hit its iteration cap before reaching the requested tolerance.
class NoConvergence : public Error {
 public:
  NoConvergence(const std::string& what, int iterations, double residual)
      : Error(what), iterations_(iterations), residual_(residual) {}

  int iterations() const noexcept { return iterations_; }
  double residual() const noexcept { return residual_; }

 private:
  int iterations_;
  double residual_;
};

/// Right-hand side of a pure Neumann problem is outside the range of the Laplacian.
class NonZeroMeanRHS : public Error {
 public:
  using Error::Error;
};

/// Sample masses are inconsistent with the unit-mass median slot.
class InfeasibleMass : public Error {
 public:
  using Error::Error;
};

/// Atomization would need more atoms than allowed.
class BudgetExceeded : public Error {
 public:
  using Error::Error;
};

/// Point of the probability simplex Delta_N.
class Weights {
 public:
  static constexpr double kSumTolerance = 1e-12;

  Weights() = default;
  explicit Weights(Eigen::VectorXd values);
  Weights(std::initializer_list<double> values);

  static Weights uniform(Index n);

  Index size() const noexcept { return values_.size(); }
  double operator[](Index i) const { return values_[i]; }
  const Eigen::VectorXd& values() const noexcept { return values_; }

  bool strictly_positive() const noexcept { return size() > 0 && values_.minCoeff() > 0.0; }

  /// Throws std::invalid_argument unless every entry is > 0.
  void require_strictly_positive() const;

 private:
  Eigen::VectorXd values_;
};

}  // namespace wmed
