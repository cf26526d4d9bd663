#pragma once

#include <cmath>
#include <string>

#include "lst/errors.hpp"
#include "lst/sparse_linear.hpp"

namespace lst {

/// Per-example loss and gradient w.r.t. the hidden vector, for upstream backprop.
struct StepResult {
  double loss = 0.0;
  DenseVec grad_h;
};

/// Minibatch counterpart: summed loss and one gradient column per example.
struct MinibatchResult {
  double loss_total = 0.0;
  DenseMat grad_H;
  // Set when Tr(M) was cross-checked against the alternative form of M.
  bool loss_matrix_trace_checked = false;
};

namespace detail {

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NonFiniteError(std::string(what) + " is not finite (diverged?)");
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (!m.allFinite()) throw NonFiniteError(std::string(what) + " has non-finite entries (diverged?)");
}

}  // namespace detail
}  // namespace lst
