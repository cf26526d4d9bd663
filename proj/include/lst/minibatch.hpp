#pragma once

// Minibatch form of the factored update. With m examples per batch the cost is
// O(m d^2 + m K d + m^2 d + m^3) and still independent of D.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lst/errors.hpp"
#include "lst/factored_layer.hpp"
#include "lst/linalg.hpp"
#include "lst/sparse_linear.hpp"
#include "lst/step_result.hpp"

namespace lst {

// Condition estimate of (H^T H - I/(2 eta)) above which the Woodbury update is refused.
inline constexpr double kMaxWoodburyCondition = 1e12;

namespace detail {

// Copies the upper triangle onto the lower one. Used where a product is
// symmetric in exact arithmetic and only the upper triangle was meant to be formed.
inline void mirror_upper(Eigen::MatrixXd& a) {
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = a(j, i);
  }
}

inline Eigen::PartialPivLU<Eigen::MatrixXd> factor_woodbury_core(const DenseMat& hidden, double eta) {
  const auto m = hidden.cols();
  Eigen::MatrixXd core = hidden.transpose() * hidden;
  core.diagonal().array() -= 1.0 / (2.0 * eta);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(core);
  const double cond = condition_estimate(lu);
  if (!(cond <= kMaxWoodburyCondition)) {
    throw SingularBatchUpdate("woodbury: (H^T H - I/(2 eta)) is numerically singular (m=" + std::to_string(m) +
                              ", cond est " + std::to_string(cond) + ")");
  }
  return lu;
}

// U^{-T} - (U^{-T} H) (core^{-1} H^T)
inline DenseMat apply_woodbury(const DenseMat& uinv_t, const DenseMat& hidden,
                               const Eigen::PartialPivLU<Eigen::MatrixXd>& core_lu) {
  const Eigen::MatrixXd right = core_lu.solve(Eigen::MatrixXd(hidden.transpose()));
  const Eigen::MatrixXd left = uinv_t * hidden;
  DenseMat out = uinv_t;
  out.noalias() -= left * right;
  return out;
}

}  // namespace detail

/// U^{-T} after U <- U - 2 eta (U H) H^T, via the Woodbury identity.
/// Throws SingularBatchUpdate when the m x m core system is numerically singular.
inline DenseMat woodbury_update_inverse(const DenseMat& uinv_t, const DenseMat& hidden, double eta) {
  detail::require_dims(uinv_t.rows() == uinv_t.cols(), "woodbury_update_inverse: U^{-T} not square");
  detail::require_dims(hidden.rows() == uinv_t.rows(), "woodbury_update_inverse: H rows != d");
  if (eta == 0.0 || hidden.cols() == 0) return uinv_t;
  return detail::apply_woodbury(uinv_t, hidden, detail::factor_woodbury_core(hidden, eta));
}

/// Y^T Y from pairwise merged-index dot products, O(m^2 K).
inline Eigen::MatrixXd sparse_gram(std::span<const SparseVec> targets) {
  const auto m = static_cast<Eigen::Index>(targets.size());
  Eigen::MatrixXd g(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i; j < m; ++j) {
      const double v = sparse_dot(targets[static_cast<std::size_t>(i)], targets[static_cast<std::size_t>(j)]);
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

struct MinibatchOptions {
  // Cross-check Tr(M) against M' = H^T Z - Y_hat^T H + Y^T Y (costs one extra m x m product).
  bool check_trace = false;
};

/// One SGD step on a minibatch: H holds the m hidden vectors as columns, Y the
/// m sparse targets. Loss is the sum over the batch, evaluated before the update.
inline MinibatchResult minibatch_step(FactoredOutputLayer& layer, const DenseMat& hidden,
                                      std::span<const SparseVec> targets, double eta, InverseStrategy strategy,
                                      MinibatchOptions options = {}) {
  using detail::LayerAccess;
  const auto d = static_cast<Eigen::Index>(layer.hidden_dim());
  const auto m = hidden.cols();
  detail::require_dims(m >= 1, "minibatch_step: m must be >= 1");
  detail::require_dims(hidden.rows() == d, "minibatch_step: H rows != d");
  detail::require_dims(static_cast<std::size_t>(m) == targets.size(), "minibatch_step: |Y| != m");
  for (const auto& y : targets) {
    detail::require_dims(y.dim() == layer.output_dim(), "minibatch_step: y dim != D");
  }

  DenseMat& v = LayerAccess::V(layer);
  DenseMat& u = LayerAccess::U(layer);
  DenseMat& q = LayerAccess::Q(layer);

  // 1: H_hat = Q H
  const Eigen::MatrixXd h_hat = q * hidden;
  // 2: Y_hat = U^T (V^T Y)
  Eigen::MatrixXd vty(d, m);
  for (Eigen::Index j = 0; j < m; ++j) vty.col(j) = gather_rows_weighted(v, targets[static_cast<std::size_t>(j)]);
  const Eigen::MatrixXd y_hat = u.transpose() * vty;
  // 3, 4
  const Eigen::MatrixXd z_hat = h_hat - y_hat;
  MinibatchResult out;
  out.grad_H = 2.0 * z_hat;
  // 5: M = H^T H_hat - (Y_hat^T H + H^T Y_hat) + Y^T Y, symmetric by construction
  const Eigen::MatrixXd yty = sparse_gram(targets);
  const Eigen::MatrixXd hty = hidden.transpose() * y_hat;
  Eigen::MatrixXd hth = hidden.transpose() * h_hat;
  detail::mirror_upper(hth);
  const Eigen::MatrixXd mmat = hth - (hty.transpose() + hty) + yty;
  // 6: L = Tr(M)
  out.loss_total = mmat.trace();
  detail::require_finite(out.loss_total, "minibatch_step: loss");
  detail::require_finite(out.grad_H, "minibatch_step: grad_H");

  if (options.check_trace) {
    const Eigen::MatrixXd alt = hidden.transpose() * z_hat - y_hat.transpose() * hidden + yty;
    const double alt_loss = alt.trace();
    const double scale = std::max(1.0, std::abs(out.loss_total));
    if (std::abs(alt_loss - out.loss_total) > 1e-8 * scale) {
      throw Error("minibatch_step: Tr(M) disagrees between the two forms of M (" + std::to_string(out.loss_total) +
                  " vs " + std::to_string(alt_loss) + ")");
    }
    out.loss_matrix_trace_checked = true;
  }

  if (eta == 0.0) return out;

  const bool woodbury = strategy.mode == InverseMode::woodbury;
  // Factor the m x m core before touching any state so a singular batch leaves the layer intact.
  std::optional<Eigen::PartialPivLU<Eigen::MatrixXd>> core_lu;
  if (woodbury) {
    core_lu.emplace(detail::factor_woodbury_core(hidden, eta));
    if (layer.inverse_is_stale()) layer.refresh_inverse_transpose();
  }

  const double two_eta = 2.0 * eta;
  // 7: U <- U - 2 eta (U H) H^T
  DenseMat u_new = u;
  u_new.noalias() -= two_eta * (u * hidden) * hidden.transpose();

  // 8: U^{-T} update, then X = U_new^{-T} H
  Eigen::MatrixXd x;
  if (woodbury) {
    DenseMat& uinv_t = LayerAccess::inverse_transpose(layer);
    uinv_t = detail::apply_woodbury(uinv_t, hidden, *core_lu);
    u = std::move(u_new);
    x = uinv_t * hidden;
  } else {
    x = solve_inverse_transpose_apply(u_new, hidden);
    u = std::move(u_new);
    LayerAccess::mark_inverse_stale(layer, true);
  }

  // 9: V <- V + 2 eta Y X^T, touching only the rows named in Y
  DenseVec col(d);
  for (Eigen::Index j = 0; j < m; ++j) {
    col = x.col(j);
    scatter_rank_one(v, targets[static_cast<std::size_t>(j)], col, two_eta);
  }

  // 10: Q <- Q - 2 eta (H Z^T + Z H^T) + 4 eta^2 (H M) H^T
  const Eigen::MatrixXd hz = hidden * z_hat.transpose();
  Eigen::MatrixXd hmh = (hidden * mmat) * hidden.transpose();
  detail::mirror_upper(hmh);
  q.noalias() -= two_eta * (hz + hz.transpose());
  q.noalias() += (two_eta * two_eta) * hmh;

  LayerAccess::count_update(layer);
  return out;
}

}  // namespace lst
