#pragma once

#include <cmath>

#include "evcog/errors.hpp"

namespace evcog {

template <typename Derived>
double cross_entropy(const Eigen::MatrixBase<Derived>& logits, std::span<const TokenId> targets, TokenId ignore) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw DimensionError("cross_entropy: " + std::to_string(logits.rows()) + " logit rows for " +
                         std::to_string(targets.size()) + " targets");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    TokenId t = targets[static_cast<std::size_t>(r)];
    if (t == ignore) continue;
    if (t < 0 || t >= logits.cols()) throw InvalidTokenError("cross_entropy: target id out of range");
    auto row = logits.row(r).template cast<double>();
    double m = row.maxCoeff();
    double lse = m + std::log((row.array() - m).exp().sum());
    sum += lse - row(t);
    ++count;
  }
  if (count == 0) throw UndefinedLossError("loss undefined: every target position is padding");
  return sum / static_cast<double>(count);
}

}  // namespace evcog
