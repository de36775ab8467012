#include "wmed/common.hpp"

#include <cmath>

namespace wmed {

Weights::Weights(Eigen::VectorXd values) : values_(std::move(values)) {
  if (values_.size() == 0) throw std::invalid_argument("weights: empty vector");
  for (Index i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i]) || values_[i] < 0.0)
      throw std::invalid_argument("weights: entries must be finite and nonnegative");
  }
  if (std::abs(values_.sum() - 1.0) > kSumTolerance)
    throw std::invalid_argument("weights: entries must sum to 1");
}

Weights::Weights(std::initializer_list<double> values)
    : Weights(Eigen::Map<const Eigen::VectorXd>(values.begin(), static_cast<Index>(values.size()))) {}

Weights Weights::uniform(Index n) {
  if (n <= 0) throw std::invalid_argument("weights: need at least one entry");
  return Weights(Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)));
}

void Weights::require_strictly_positive() const {
  if (!strictly_positive()) throw std::invalid_argument("weights: entries must be strictly positive");
}

}  // namespace wmed
