#pragma once

// Dense d x d helpers shared by the online and minibatch update paths and by
// stabilization. LU factorizations come from Eigen (partial pivoting).

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "lst/errors.hpp"
#include "lst/sparse_linear.hpp"

namespace lst {

// Upper bound on the (1-norm) condition estimate of U before it is treated as singular.
inline constexpr double kMaxConditionEstimate = 1e14;

namespace detail {

inline double condition_estimate(const Eigen::PartialPivLU<Eigen::MatrixXd>& lu) {
  // rcond() is unreliable once a pivot is exactly zero.
  const auto pivots = lu.matrixLU().diagonal().cwiseAbs();
  if (!pivots.allFinite() || pivots.minCoeff() == 0.0) return std::numeric_limits<double>::infinity();
  const double rc = lu.rcond();
  return rc > 0.0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Solves U_new^T X = H for X, factorizing once and reusing it for all m columns.
/// Equivalent to U_new^{-T} H without ever forming the inverse.
inline DenseMat solve_inverse_transpose_apply(const DenseMat& u_new, const DenseMat& hidden,
                                              double max_condition = kMaxConditionEstimate) {
  detail::require_dims(u_new.rows() == u_new.cols(), "solve_inverse_transpose_apply: U not square");
  detail::require_dims(hidden.rows() == u_new.rows(), "solve_inverse_transpose_apply: H rows != d");
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(u_new.transpose());
  const double cond = detail::condition_estimate(lu);
  if (!(cond <= max_condition)) {
    throw SingularMatrix("solve_inverse_transpose_apply: U is numerically singular (cond est " +
                         std::to_string(cond) + ")");
  }
  return lu.solve(Eigen::MatrixXd(hidden));
}

/// Vector overload used by the online solve path.
inline DenseVec solve_inverse_transpose_apply(const DenseMat& u_new, const DenseVec& h,
                                              double max_condition = kMaxConditionEstimate) {
  detail::require_dims(h.size() == u_new.rows(), "solve_inverse_transpose_apply: h length != d");
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(u_new.transpose());
  const double cond = detail::condition_estimate(lu);
  if (!(cond <= max_condition)) {
    throw SingularMatrix("solve_inverse_transpose_apply: U is numerically singular (cond est " +
                         std::to_string(cond) + ")");
  }
  return lu.solve(h);
}

/// (U^{-1})^T from a fresh LU factorization of U.
inline DenseMat inverse_transpose(const DenseMat& u, double max_condition = kMaxConditionEstimate) {
  detail::require_dims(u.rows() == u.cols(), "inverse_transpose: U not square");
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(u);
  const double cond = detail::condition_estimate(lu);
  if (!(cond <= max_condition)) {
    throw SingularMatrix("inverse_transpose: U is numerically singular (cond est " + std::to_string(cond) +
                         ")");
  }
  return lu.inverse().transpose();
}

/// ||A^T B - I||_F; the identity residual used for U^{-T} bookkeeping checks.
inline double transpose_product_identity_residual(const DenseMat& a, const DenseMat& b) {
  const Eigen::MatrixXd prod = a.transpose() * b;
  return (prod - Eigen::MatrixXd::Identity(prod.rows(), prod.cols())).norm();
}

inline double relative_frobenius(const DenseMat& actual, const DenseMat& expected) {
  const double denom = expected.norm();
  const double diff = (actual - expected).norm();
  return denom > 0.0 ? diff / denom : diff;
}

}  // namespace lst
