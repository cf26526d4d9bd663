#pragma once

// Keeps U well conditioned during long training runs.
//
// Every n_check updates U^{-T} is recomputed from scratch, then any singular
// value of U outside [sigma_low, sigma_high] is moved back to 1 by a rank-one
// change to U paired with a rank-one change to V that leaves W = VU intact.
// Extremes are found either by a full SVD or by power iteration on U and U^{-1}.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "lst/errors.hpp"
#include "lst/factored_layer.hpp"
#include "lst/linalg.hpp"
#include "lst/sparse_linear.hpp"

namespace lst {

enum class SingularDetector {
  automatic,  // full_svd for d <= 64, power_iteration above
  full_svd,
  power_iteration,
};

inline constexpr std::size_t kFullSvdMaxDim = 64;

struct StabilizationConfig {
  double sigma_low = 0.001;
  double sigma_high = 100.0;
  std::size_t n_check = 100;
  std::size_t power_iters = 100;
  SingularDetector detector = SingularDetector::automatic;

  void validate() const {
    if (!(sigma_low > 0.0 && sigma_low < 1.0 && 1.0 <= sigma_high)) {
      throw Error("StabilizationConfig: need 0 < sigma_low < 1 <= sigma_high");
    }
    if (n_check < 1) throw Error("StabilizationConfig: n_check must be >= 1");
    if (power_iters < 1) throw Error("StabilizationConfig: power_iters must be >= 1");
  }

  SingularDetector resolve_detector(std::size_t hidden_dim) const noexcept {
    if (detector != SingularDetector::automatic) return detector;
    return hidden_dim <= kFullSvdMaxDim ? SingularDetector::full_svd : SingularDetector::power_iteration;
  }
};

struct SingularTriplet {
  double sigma = 0.0;
  DenseVec left_vector;  // unit norm
};

enum class ExtremeSingular { largest, smallest };

/// One entry of the stabilization log.
struct StabilizationEvent {
  enum class Kind { recompute_inverse, fix_singular_value, loop_cap_reached };
  Kind kind = Kind::fix_singular_value;
  std::uint64_t step = 0;
  double sigma_before = 0.0;
  double sigma_after = 0.0;
  std::string which;  // "smallest", "largest" or "sv[k]"
};

inline const char* to_string(StabilizationEvent::Kind k) noexcept {
  switch (k) {
    case StabilizationEvent::Kind::recompute_inverse: return "recompute_inverse";
    case StabilizationEvent::Kind::fix_singular_value: return "fix_singular_value";
    case StabilizationEvent::Kind::loop_cap_reached: return "loop_cap_reached";
  }
  return "unknown";
}

using StabilizationSink = std::function<void(const StabilizationEvent&)>;

struct StabilizationReport {
  std::size_t fixes = 0;
  bool loop_cap_reached = false;
  // Extreme singular values of U after the check (exact for full_svd, estimated otherwise).
  double sigma_max_after = 0.0;
  double sigma_min_after = 0.0;
  double condition_after() const noexcept {
    return sigma_min_after > 0.0 ? sigma_max_after / sigma_min_after : std::numeric_limits<double>::infinity();
  }
};

namespace detail {

inline DenseVec power_start_vector(Eigen::Index d) {
  // Fixed seed keeps stabilization deterministic across runs.
  std::mt19937_64 rng(0x5eed5eedULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseVec v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = normal(rng);
  return v.normalized();
}

// Power iteration for the dominant left singular vector of A: u <- A (A^T u).
inline DenseVec dominant_left_vector(const DenseMat& a, std::size_t iters) {
  DenseVec u = power_start_vector(a.rows());
  DenseVec tmp(a.cols());
  for (std::size_t it = 0; it < iters; ++it) {
    tmp.noalias() = a.transpose() * u;
    u.noalias() = a * tmp;
    const double n = u.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw ConvergenceError("power iteration: iterate collapsed to zero or overflowed");
    }
    u /= n;
  }
  return u;
}

}  // namespace detail

/// Largest singular value of U with its left singular vector, or the smallest one
/// using the supplied U^{-T} (the dominant left vector of U^{-T} is U's weakest direction).
inline SingularTriplet power_extreme_singular(const DenseMat& u, const DenseMat& uinv_t, ExtremeSingular which,
                                              std::size_t iters) {
  detail::require_dims(u.rows() == u.cols(), "power_extreme_singular: U not square");
  if (which == ExtremeSingular::largest) {
    DenseVec vec = detail::dominant_left_vector(u, iters);
    const double sigma = (u.transpose() * vec).norm();
    return {sigma, std::move(vec)};
  }
  detail::require_dims(uinv_t.rows() == u.rows() && uinv_t.cols() == u.cols(),
                       "power_extreme_singular: U^{-T} shape != U shape");
  DenseVec vec = detail::dominant_left_vector(uinv_t, iters);
  // |U^{-1} u| = 1 / sigma_min for the left singular vector u of U.
  const double inv = (uinv_t.transpose() * vec).norm();
  if (!(inv > 0.0)) throw ConvergenceError("power_extreme_singular: zero inverse image");
  return {1.0 / inv, std::move(vec)};
}

/// Convenience overload that factorizes U itself for the smallest path.
inline SingularTriplet power_extreme_singular(const DenseMat& u, ExtremeSingular which, std::size_t iters) {
  if (which == ExtremeSingular::largest) return power_extreme_singular(u, DenseMat(), which, iters);
  return power_extreme_singular(u, inverse_transpose(u), which, iters);
}

/// U^{-T} <- (U^{-1})^T from a fresh LU factorization. Throws SingularMatrix when
/// U is numerically singular; the layer is then unusable until restored.
inline void recompute_inverse_transpose(FactoredOutputLayer& layer) { layer.refresh_inverse_transpose(); }

/// Moves the singular value `sigma` of U (left vector `u`) to `sigma_star` while
/// keeping W = VU unchanged. Costs O(Dd) because every row of V moves.
inline StabilizationEvent fix_singular_value(FactoredOutputLayer& layer, double sigma, const DenseVec& u,
                                             double sigma_star) {
  using detail::LayerAccess;
  if (!(sigma > 0.0) || !(sigma_star > 0.0)) {
    throw Error("fix_singular_value: sigma and sigma_star must be positive");
  }
  detail::require_dims(u.size() == static_cast<Eigen::Index>(layer.hidden_dim()),
                       "fix_singular_value: u length != d");
  const double n = u.norm();
  if (!(n > 0.0)) throw Error("fix_singular_value: u must be non-zero");
  const DenseVec dir = u / n;

  if (layer.inverse_is_stale()) layer.refresh_inverse_transpose();

  const double alpha = (sigma_star - sigma) / sigma;
  const double beta = -alpha / (1.0 + alpha);

  DenseMat& um = LayerAccess::U(layer);
  DenseMat& vm = LayerAccess::V(layer);
  DenseMat& uinv_t = LayerAccess::inverse_transpose(layer);

  if (alpha != 0.0) {
    // U^{-1} u with the pre-update inverse; U^{-1} = (U^{-T})^T.
    const DenseVec uinv_dir = uinv_t.transpose() * dir;
    const DenseVec ut_dir = um.transpose() * dir;
    um.noalias() += alpha * dir * ut_dir.transpose();
    const DenseVec v_dir = vm * dir;
    vm.noalias() += beta * v_dir * dir.transpose();
    uinv_t.noalias() += beta * dir * uinv_dir.transpose();
  }

  StabilizationEvent ev;
  ev.kind = StabilizationEvent::Kind::fix_singular_value;
  ev.step = layer.total_updates();
  ev.sigma_before = sigma;
  ev.sigma_after = sigma_star;
  return ev;
}

/// Full stabilization check: recompute U^{-T}, then repair every out-of-range
/// singular value of U. VU is preserved.
inline StabilizationReport singular_stabilize(FactoredOutputLayer& layer, const StabilizationConfig& config,
                                              const StabilizationSink& sink = {}) {
  config.validate();
  const auto emit = [&](StabilizationEvent ev) {
    if (sink) sink(ev);
  };

  recompute_inverse_transpose(layer);
  {
    StabilizationEvent ev;
    ev.kind = StabilizationEvent::Kind::recompute_inverse;
    ev.step = layer.total_updates();
    emit(ev);
  }

  const auto in_range = [&](double s) { return s >= config.sigma_low && s <= config.sigma_high; };
  StabilizationReport report;
  const std::size_t d = layer.hidden_dim();

  if (config.resolve_detector(d) == SingularDetector::full_svd) {
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(layer.U()), Eigen::ComputeFullU};
    if (svd.info() != Eigen::Success) throw ConvergenceError("singular_stabilize: SVD failed");
    const DenseVec sigmas = svd.singularValues();
    const Eigen::MatrixXd left = svd.matrixU();
    DenseVec after = sigmas;
    for (Eigen::Index k = 0; k < sigmas.size(); ++k) {
      if (in_range(sigmas[k])) continue;
      // The singular vectors are shared by every fix, so the original SVD stays valid.
      auto ev = fix_singular_value(layer, sigmas[k], left.col(k), 1.0);
      ev.which = "sv[" + std::to_string(k) + "]";
      emit(ev);
      after[k] = 1.0;
      ++report.fixes;
    }
    if (report.fixes > 0) recompute_inverse_transpose(layer);
    report.sigma_max_after = after.maxCoeff();
    report.sigma_min_after = after.minCoeff();
    return report;
  }

  // Power-iteration detector. Each side loops until its extreme is in range,
  // capped at d repairs per side.
  const auto repair_side = [&](ExtremeSingular side) -> double {
    const char* label = side == ExtremeSingular::smallest ? "smallest" : "largest";
    for (std::size_t round = 0;; ++round) {
      const SingularTriplet t =
          power_extreme_singular(layer.U(), layer.inverse_transpose(), side, config.power_iters);
      const bool bad = side == ExtremeSingular::smallest ? t.sigma < config.sigma_low : t.sigma > config.sigma_high;
      if (!bad) return t.sigma;
      if (round >= d) {
        report.loop_cap_reached = true;
        StabilizationEvent ev;
        ev.kind = StabilizationEvent::Kind::loop_cap_reached;
        ev.step = layer.total_updates();
        ev.sigma_before = t.sigma;
        ev.sigma_after = t.sigma;
        ev.which = label;
        emit(ev);
        return t.sigma;
      }
      auto ev = fix_singular_value(layer, t.sigma, t.left_vector, 1.0);
      ev.which = label;
      emit(ev);
      ++report.fixes;
    }
  };
  report.sigma_min_after = repair_side(ExtremeSingular::smallest);
  report.sigma_max_after = repair_side(ExtremeSingular::largest);
  if (report.fixes > 0) recompute_inverse_transpose(layer);
  return report;
}

/// Runs singular_stabilize once at least n_check updates have happened since the last check.
inline std::optional<StabilizationReport> maybe_stabilize(FactoredOutputLayer& layer,
                                                          const StabilizationConfig& config,
                                                          const StabilizationSink& sink = {}) {
  if (layer.steps_since_check() < config.n_check) return std::nullopt;
  auto report = singular_stabilize(layer, config, sink);
  layer.reset_check_counter();
  return report;
}

/// Exact extreme singular values of U (full SVD); used for reporting and tests.
inline std::pair<double, double> singular_range(const DenseMat& u) {
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(u)};
  const DenseVec s = svd.singularValues();
  return {s.minCoeff(), s.maxCoeff()};
}

}  // namespace lst
