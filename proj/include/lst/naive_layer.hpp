#pragma once

// Explicit D x d output layer. Every operation is O(Dd) per example; this is
// the reference the factored layer is checked against and the timing baseline.

#include <cstddef>
#include <span>
#include <vector>

#include "lst/sparse_linear.hpp"
#include "lst/step_result.hpp"

namespace lst {

class NaiveOutputLayer {
 public:
  NaiveOutputLayer(std::size_t output_dim, std::size_t hidden_dim)
      : w_(DenseMat::Zero(static_cast<Eigen::Index>(output_dim), static_cast<Eigen::Index>(hidden_dim))) {}

  explicit NaiveOutputLayer(DenseMat w) : w_(std::move(w)) {
    detail::require_finite(w_, "NaiveOutputLayer: W");
  }

  std::size_t output_dim() const noexcept { return static_cast<std::size_t>(w_.rows()); }
  std::size_t hidden_dim() const noexcept { return static_cast<std::size_t>(w_.cols()); }
  const DenseMat& weights() const noexcept { return w_; }

  /// o = W h
  DenseVec forward(const DenseVec& h) const {
    detail::require_dims(h.size() == w_.cols(), "naive_forward: h length != d");
    return w_ * h;
  }

  /// Loss and gradient against the current W, then W <- W - 2 eta (Wh - y) h^T.
  StepResult step(const DenseVec& h, const SparseVec& y, double eta) {
    detail::require_dims(h.size() == w_.cols(), "naive_step: h length != d");
    detail::require_dims(y.dim() == output_dim(), "naive_step: y dim != D");

    DenseVec residual = w_ * h;
    for (const auto& e : y) residual[static_cast<Eigen::Index>(e.index)] -= e.value;

    StepResult out;
    out.loss = residual.squaredNorm();
    out.grad_h = 2.0 * (w_.transpose() * residual);
    detail::require_finite(out.loss, "naive_step: loss");
    detail::require_finite(out.grad_h, "naive_step: grad_h");

    if (eta != 0.0) w_.noalias() -= (2.0 * eta) * residual * h.transpose();
    return out;
  }

  /// Batched step W <- W - 2 eta (WH - Y) H^T; loss is summed over the m columns.
  MinibatchResult step_minibatch(const DenseMat& hidden, std::span<const SparseVec> targets, double eta) {
    detail::require_dims(hidden.rows() == w_.cols(), "naive_step_minibatch: H rows != d");
    detail::require_dims(static_cast<std::size_t>(hidden.cols()) == targets.size(),
                         "naive_step_minibatch: |Y| != m");

    Eigen::MatrixXd residual = w_ * hidden;
    for (Eigen::Index j = 0; j < hidden.cols(); ++j) {
      const auto& y = targets[static_cast<std::size_t>(j)];
      detail::require_dims(y.dim() == output_dim(), "naive_step_minibatch: y dim != D");
      for (const auto& e : y) residual(static_cast<Eigen::Index>(e.index), j) -= e.value;
    }

    MinibatchResult out;
    out.loss_total = residual.squaredNorm();
    out.grad_H = 2.0 * (w_.transpose() * residual);
    detail::require_finite(out.loss_total, "naive_step_minibatch: loss");
    detail::require_finite(out.grad_H, "naive_step_minibatch: grad_H");

    if (eta != 0.0) w_.noalias() -= (2.0 * eta) * residual * hidden.transpose();
    return out;
  }

 private:
  DenseMat w_;
};

}  // namespace lst
