#pragma once

// Linear output layer with squared-error loss against K-sparse targets, trained
// with exact SGD in O(d^2 + Kd) per example.
//
// W (D x d) is never formed. It is kept implicitly as W = V U with
//   V       : D x d, only K rows touched per example
//   U       : d x d
//   Uinv_t  : d x d, maintained U^{-T}
//   Q       : d x d, maintained W^T W
// Loss and grad_h come from Q and U^T V^T y; the update W <- W - 2 eta (Wh - y) h^T
// is realised as a rank-one change to U plus a K-row change to V.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lst/errors.hpp"
#include "lst/linalg.hpp"
#include "lst/sparse_linear.hpp"
#include "lst/step_result.hpp"

namespace lst {

// |1 - 2 eta |h|^2| at or below this makes the implicit update singular.
inline constexpr double kSingularUpdateEps = 1e-8;

enum class InverseMode {
  woodbury,          // Sherman-Morrison (m = 1) / Woodbury (m > 1) update of U^{-T}
  solve_each_batch,  // solve U_new^T X = H from scratch; U^{-T} goes stale
};

struct InverseStrategy {
  InverseMode mode = InverseMode::woodbury;
  // Advisory batch size above which solving from scratch is expected to win.
  std::size_t crossover = 0;

  /// woodbury for m <= d/4, otherwise solve_each_batch.
  static InverseStrategy default_for(std::size_t hidden_dim, std::size_t batch_size) {
    const std::size_t crossover = hidden_dim / 4;
    return {batch_size <= std::max<std::size_t>(crossover, 1) ? InverseMode::woodbury
                                                              : InverseMode::solve_each_batch,
            crossover};
  }
};

struct RandomInit {
  std::uint64_t seed = 0;
  double scale = 0.01;  // entries of V are N(0, scale^2)
};

class FactoredOutputLayer;

namespace detail {
struct LayerAccess;
}

class FactoredOutputLayer {
 public:
  /// Pristine layer with V = 0, so Q = 0 without an O(Dd^2) product.
  static FactoredOutputLayer zeros(std::size_t output_dim, std::size_t hidden_dim) {
    detail::require_dims(output_dim >= 1 && hidden_dim >= 1, "factored_new: D and d must be >= 1");
    const auto D = static_cast<Eigen::Index>(output_dim);
    const auto d = static_cast<Eigen::Index>(hidden_dim);
    return FactoredOutputLayer(DenseMat::Zero(D, d), DenseMat::Identity(d, d), DenseMat::Identity(d, d),
                               DenseMat::Zero(d, d));
  }

  /// V with i.i.d. N(0, scale^2) entries drawn from a seeded stream; Q = V^T V.
  static FactoredOutputLayer random(std::size_t output_dim, std::size_t hidden_dim, RandomInit init) {
    detail::require_dims(output_dim >= 1 && hidden_dim >= 1, "factored_new: D and d must be >= 1");
    std::mt19937_64 rng(init.seed);
    std::normal_distribution<double> normal(0.0, init.scale);
    DenseMat v(static_cast<Eigen::Index>(output_dim), static_cast<Eigen::Index>(hidden_dim));
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = normal(rng);
    return from_weights(std::move(v));
  }

  /// Pristine layer representing an explicit W (V = W, U = I).
  static FactoredOutputLayer from_weights(DenseMat w) {
    detail::require_dims(w.rows() >= 1 && w.cols() >= 1, "factored_new: D and d must be >= 1");
    detail::require_finite(w, "factored_new: W");
    const auto d = w.cols();
    DenseMat q = w.transpose() * w;
    return FactoredOutputLayer(std::move(w), DenseMat::Identity(d, d), DenseMat::Identity(d, d), std::move(q));
  }

  std::size_t output_dim() const noexcept { return static_cast<std::size_t>(v_.rows()); }
  std::size_t hidden_dim() const noexcept { return static_cast<std::size_t>(u_.rows()); }

  const DenseMat& V() const noexcept { return v_; }
  const DenseMat& U() const noexcept { return u_; }
  const DenseMat& Q() const noexcept { return q_; }
  /// Stored U^{-T}. Only meaningful when !inverse_is_stale().
  const DenseMat& inverse_transpose() const noexcept { return uinv_t_; }
  bool inverse_is_stale() const noexcept { return inverse_stale_; }

  std::size_t steps_since_check() const noexcept { return steps_since_check_; }
  std::uint64_t total_updates() const noexcept { return total_updates_; }
  /// Multiply-adds performed by the most recent online step, tallied per kernel.
  std::uint64_t last_step_multiply_adds() const noexcept { return last_step_madds_; }

  /// Online step. Loss and grad_h use the current W; with apply_update the
  /// parameters then move exactly as naive SGD would move W.
  StepResult step(const DenseVec& h, const SparseVec& y, double eta, bool apply_update = true,
                  InverseMode mode = InverseMode::woodbury) {
    const auto d = u_.rows();
    detail::require_dims(h.size() == d, "factored_step: h length != d");
    detail::require_dims(y.dim() == output_dim(), "factored_step: y dim != D");
    const auto dd = static_cast<std::uint64_t>(d);
    const auto kk = static_cast<std::uint64_t>(y.nnz());

    const bool updating = apply_update && eta != 0.0;
    const double h_sq = h.squaredNorm();
    const double denom = 1.0 - 2.0 * eta * h_sq;
    if (updating && std::abs(denom) <= kSingularUpdateEps) {
      throw SingularUpdate("factored_step: |1 - 2 eta |h|^2| = " + std::to_string(std::abs(denom)) +
                           " <= 1e-8; reduce the learning rate");
    }

    std::uint64_t madds = 0;

    // 1: h_hat = Q h
    const DenseVec h_hat = q_ * h;
    madds += dd * dd;
    // 2: y_hat = U^T (V^T y)
    const DenseVec vty = gather_rows_weighted(v_, y);
    const DenseVec y_hat = u_.transpose() * vty;
    madds += kk * dd + dd * dd;
    // 3: z_hat = h_hat - y_hat
    const DenseVec z_hat = h_hat - y_hat;
    madds += dd;
    // 4: grad_h = 2 z_hat
    StepResult out;
    out.grad_h = 2.0 * z_hat;
    madds += dd;
    // 5: L = h^T h_hat - 2 h^T y_hat + y^T y
    out.loss = h.dot(h_hat) - 2.0 * h.dot(y_hat) + sparse_sq_norm(y);
    madds += 2 * dd + kk + 1;

    detail::require_finite(out.loss, "factored_step: loss");
    detail::require_finite(out.grad_h, "factored_step: grad_h");
    if (!updating) {
      last_step_madds_ = madds;
      return out;
    }

    if (mode == InverseMode::woodbury && inverse_stale_) refresh_inverse_transpose();

    const double two_eta = 2.0 * eta;
    // 6: U <- U - 2 eta (U h) h^T
    const DenseVec uh_scaled = two_eta * (u_ * h);
    if (mode == InverseMode::solve_each_batch) {
      // Solve against U_new before committing it, so a singular U_new leaves the layer intact.
      DenseMat u_new = u_;
      u_new.noalias() -= uh_scaled * h.transpose();
      const DenseVec w = solve_inverse_transpose_apply(u_new, h);
      u_ = std::move(u_new);
      inverse_stale_ = true;
      madds += 2 * dd * dd + dd + dd * dd * dd / 3 + dd * dd;
      finish_update(h, y, w, z_hat, out.loss, two_eta, dd, kk, madds);
      return out;
    }
    u_.noalias() -= uh_scaled * h.transpose();
    madds += 2 * dd * dd + dd;

    // 7: U^{-T} <- U^{-T} + (2 eta / (1 - 2 eta |h|^2)) (U^{-T} h) h^T
    const double coef = two_eta / denom;
    const DenseVec ih_scaled = coef * (uinv_t_ * h);
    uinv_t_.noalias() += ih_scaled * h.transpose();
    madds += 2 * dd * dd + 2 * dd + 3;
    // 8 (first half): U_new^{-T} h, tallied under step 8
    const DenseVec w = uinv_t_ * h;
    madds += dd * dd;
    finish_update(h, y, w, z_hat, out.loss, two_eta, dd, kk, madds);
    return out;
  }

  /// o_c = V[c,:] (U h) for each requested c; O(d^2 + |indices| d).
  std::vector<double> selected_outputs(const DenseVec& h, std::span<const std::size_t> indices) const {
    detail::require_dims(h.size() == u_.cols(), "selected_outputs: h length != d");
    for (const auto c : indices) {
      if (c >= output_dim()) throw DimensionMismatch("selected_outputs: index " + std::to_string(c) + " >= D");
    }
    const DenseVec uh = u_ * h;
    std::vector<double> out;
    out.reserve(indices.size());
    for (const auto c : indices) out.push_back(v_.row(static_cast<Eigen::Index>(c)).dot(uh));
    return out;
  }

  /// ||o||^2 = h^T Q h in O(d^2), clamped at zero.
  double output_sq_norm(const DenseVec& h) const {
    detail::require_dims(h.size() == q_.cols(), "output_sq_norm: h length != d");
    return std::max(0.0, h.dot(q_ * h));
  }

  /// log(o_c^2 / ||o||^2), the spherical-softmax log-probability with epsilon = 0.
  double spherical_softmax_value(const DenseVec& h, std::size_t c) const {
    const std::size_t idx[] = {c};
    const double oc = selected_outputs(h, idx).front();
    const double norm_sq = output_sq_norm(h);
    if (oc == 0.0 || norm_sq == 0.0) {
      throw DegenerateOutput("spherical_softmax_value: o_c = 0 or ||o|| = 0");
    }
    return std::min(0.0, std::log(oc * oc / norm_sq));
  }

  /// Explicit W = V U. O(Dd^2).
  DenseMat materialize() const { return v_ * u_; }

  /// V <- V U, U <- I, U^{-T} <- I. W and Q are unchanged.
  void restore_pristine() {
    const auto d = u_.rows();
    if (u_.isIdentity(0.0) && uinv_t_.isIdentity(0.0) && !inverse_stale_) return;
    v_ = v_ * u_;
    u_.setIdentity(d, d);
    uinv_t_.setIdentity(d, d);
    inverse_stale_ = false;
  }

  /// Recomputes U^{-T} from scratch by LU. Throws SingularMatrix if U is numerically singular.
  void refresh_inverse_transpose() {
    uinv_t_ = lst::inverse_transpose(u_);
    inverse_stale_ = false;
  }

  /// ||Uinv_t^T U - I||_F.
  double inverse_residual() const { return transpose_product_identity_residual(uinv_t_, u_); }

  /// ||Q - (VU)^T (VU)||_F / ||Q||_F. O(Dd^2); for tests and checkpoint validation.
  double gram_residual() const {
    const DenseMat w = materialize();
    const DenseMat gram = w.transpose() * w;
    return relative_frobenius(q_, gram);
  }

  void reset_check_counter() noexcept { steps_since_check_ = 0; }

 private:
  friend struct detail::LayerAccess;

  FactoredOutputLayer(DenseMat v, DenseMat u, DenseMat uinv_t, DenseMat q)
      : v_(std::move(v)), u_(std::move(u)), uinv_t_(std::move(uinv_t)), q_(std::move(q)) {}

  // Steps 8 (V scatter) and 9 (Q) once U_new^{-T} h is known.
  void finish_update(const DenseVec& h, const SparseVec& y, const DenseVec& w, const DenseVec& z_hat, double loss,
                     double two_eta, std::uint64_t dd, std::uint64_t kk, std::uint64_t madds) {
    // 8: V <- V + 2 eta y (U_new^{-T} h)^T, only the K rows of y
    scatter_rank_one(v_, y, w, two_eta);
    madds += kk + kk * dd;

    // 9: Q <- Q - 2 eta (h z^T + z h^T) + (4 eta^2 L) h h^T
    apply_q_update(h, two_eta * z_hat, two_eta * two_eta * loss);
    madds += 4 + 2 * dd + 3 * dd * dd;

    last_step_madds_ = madds;
    ++steps_since_check_;
    ++total_updates_;
  }

  // Q(i,j) += -h_i a_j - a_i h_j + c (h_i h_j). Written so that (i,j) and (j,i)
  // evaluate identical products; a symmetric Q stays bitwise symmetric.
  void apply_q_update(const DenseVec& h, const DenseVec& a, double c) {
    const auto d = q_.rows();
    for (Eigen::Index i = 0; i < d; ++i) {
      const double hi = h[i];
      const double ai = a[i];
      double* row = q_.row(i).data();
      for (Eigen::Index j = 0; j < d; ++j) {
        row[j] += -(hi * a[j] + ai * h[j]) + c * (hi * h[j]);
      }
    }
  }

  DenseMat v_;
  DenseMat u_;
  DenseMat uinv_t_;
  DenseMat q_;
  std::size_t steps_since_check_ = 0;
  std::uint64_t total_updates_ = 0;
  std::uint64_t last_step_madds_ = 0;
  bool inverse_stale_ = false;
};

namespace detail {

// Internal mutable view for the minibatch, stabilization and checkpoint code.
struct LayerAccess {
  static DenseMat& V(FactoredOutputLayer& l) noexcept { return l.v_; }
  static DenseMat& U(FactoredOutputLayer& l) noexcept { return l.u_; }
  static DenseMat& inverse_transpose(FactoredOutputLayer& l) noexcept { return l.uinv_t_; }
  static DenseMat& Q(FactoredOutputLayer& l) noexcept { return l.q_; }
  static void mark_inverse_stale(FactoredOutputLayer& l, bool stale) noexcept { l.inverse_stale_ = stale; }
  static void count_update(FactoredOutputLayer& l) noexcept {
    ++l.steps_since_check_;
    ++l.total_updates_;
  }
  static FactoredOutputLayer assemble(DenseMat v, DenseMat u, DenseMat uinv_t, DenseMat q) {
    return FactoredOutputLayer(std::move(v), std::move(u), std::move(uinv_t), std::move(q));
  }
};

}  // namespace detail
}  // namespace lst
