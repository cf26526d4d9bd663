#pragma once

// Lockstep equivalence check: the factored layer and the naive D x d layer see
// identical (h, y) streams from the same starting W. Per-step losses, and at
// sampled steps the materialized weights and both bookkeeping invariants, must
// agree within tolerance.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "lst/factored_layer.hpp"
#include "lst/harness/log.hpp"
#include "lst/harness/synthetic.hpp"
#include "lst/linalg.hpp"
#include "lst/minibatch.hpp"
#include "lst/naive_layer.hpp"
#include "lst/stabilization.hpp"

namespace lst::harness {

enum class VerifyPath { online, minibatch };

struct VerifyRunSpec {
  VerifyPath path = VerifyPath::online;
  InverseMode mode = InverseMode::woodbury;
};

struct VerifyConfig {
  std::size_t D = 1000;
  std::size_t d = 32;
  std::size_t K = 8;
  std::size_t m = 16;
  std::size_t steps = 500;   // online steps
  std::size_t batches = 50;  // minibatch steps
  double eta = 0.01;
  std::uint64_t seed = 1;
  double init_scale = 0.1;

  double loss_tol = 1e-8;       // per-step relative loss discrepancy
  double weight_tol = 1e-6;     // relative Frobenius ||VU - W|| / ||W||
  double invariant_tol = 1e-8;  // Q and U^{-T} bookkeeping
  std::size_t check_every = 10;

  // Test-only negative control: the factored path uses eta * eta_mismatch.
  double eta_mismatch = 1.0;
  bool stabilize = false;
  StabilizationConfig stabilization{};

  // Empty means all four combinations of {online, minibatch} x {woodbury, solve}.
  std::vector<VerifyRunSpec> runs;
};

struct VerifyRunReport {
  std::string name;
  std::size_t steps = 0;
  double max_loss_rel = 0.0;
  double max_grad_rel = 0.0;
  double final_weight_rel = 0.0;
  double max_weight_rel = 0.0;
  double max_gram_residual = 0.0;
  // NaN when U^{-T} is not maintained (solve_each_batch).
  double max_inverse_residual = std::numeric_limits<double>::quiet_NaN();
  std::size_t invariant_checks = 0;
  std::size_t first_failure_step = 0;  // 1-based, 0 = none
  std::string failure;
  double seconds = 0.0;
  bool passed() const noexcept { return first_failure_step == 0; }
};

struct VerifyReport {
  std::vector<VerifyRunReport> runs;
  bool passed() const noexcept {
    return std::all_of(runs.begin(), runs.end(), [](const auto& r) { return r.passed(); });
  }
};

inline std::string run_name(const VerifyRunSpec& spec) {
  std::string s = spec.path == VerifyPath::online ? "online" : "minibatch";
  s += spec.mode == InverseMode::woodbury ? "/woodbury" : "/solve";
  return s;
}

namespace detail {

inline double rel_diff(double a, double b) {
  const double denom = std::max(std::abs(b), std::numeric_limits<double>::min());
  return std::abs(a - b) / denom;
}

template <typename A, typename B>
double rel_norm_diff(const A& a, const B& b) {
  const double denom = b.norm();
  const double diff = (a - b).norm();
  return denom > 0.0 ? diff / denom : diff;
}

}  // namespace detail

inline VerifyRunReport verify_run(const VerifyConfig& cfg, const VerifyRunSpec& spec) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  VerifyRunReport rep;
  rep.name = run_name(spec);

  Rng rng(cfg.seed);
  const DenseMat w0 = random_gaussian(rng, cfg.D, cfg.d, cfg.init_scale);
  NaiveOutputLayer naive(w0);
  FactoredOutputLayer fact = FactoredOutputLayer::from_weights(w0);
  const double eta_f = cfg.eta * cfg.eta_mismatch;
  const auto sink = stabilization_log_sink("verify:" + rep.name);
  const bool online = spec.path == VerifyPath::online;
  const std::size_t total = online ? cfg.steps : cfg.batches;

  const auto fail = [&](std::size_t step, std::string why) {
    if (rep.first_failure_step == 0) {
      rep.first_failure_step = step;
      rep.failure = std::move(why);
    }
  };

  for (std::size_t step = 1; step <= total && rep.passed(); ++step) {
    double loss_n = 0.0;
    double loss_f = 0.0;
    double grad_rel = 0.0;
    if (online) {
      const DenseVec h = random_hidden(rng, cfg.d);
      const SparseVec y = random_sparse(rng, cfg.D, cfg.K);
      const StepResult rn = naive.step(h, y, cfg.eta);
      const StepResult rf = fact.step(h, y, eta_f, true, spec.mode);
      loss_n = rn.loss;
      loss_f = rf.loss;
      grad_rel = detail::rel_norm_diff(rf.grad_h, rn.grad_h);
    } else {
      const DenseMat hb = random_hidden_batch(rng, cfg.d, cfg.m);
      std::vector<SparseVec> ys;
      ys.reserve(cfg.m);
      for (std::size_t j = 0; j < cfg.m; ++j) ys.push_back(random_sparse(rng, cfg.D, cfg.K));
      const MinibatchResult rn = naive.step_minibatch(hb, ys, cfg.eta);
      const MinibatchResult rf = minibatch_step(fact, hb, ys, eta_f, InverseStrategy{spec.mode, cfg.d / 4});
      loss_n = rn.loss_total;
      loss_f = rf.loss_total;
      grad_rel = detail::rel_norm_diff(rf.grad_H, rn.grad_H);
    }
    if (cfg.stabilize) maybe_stabilize(fact, cfg.stabilization, sink);
    rep.steps = step;

    const double loss_rel = detail::rel_diff(loss_f, loss_n);
    rep.max_loss_rel = std::max(rep.max_loss_rel, loss_rel);
    rep.max_grad_rel = std::max(rep.max_grad_rel, grad_rel);
    if (!(loss_rel <= cfg.loss_tol)) {
      fail(step, "loss discrepancy " + std::to_string(loss_rel) + " > " + std::to_string(cfg.loss_tol));
      break;
    }

    const bool sampled = step == 1 || step == total || (cfg.check_every > 0 && step % cfg.check_every == 0);
    if (!sampled) continue;
    ++rep.invariant_checks;
    const DenseMat w_f = fact.materialize();
    const double w_rel = relative_frobenius(w_f, naive.weights());
    rep.max_weight_rel = std::max(rep.max_weight_rel, w_rel);
    if (step == total) rep.final_weight_rel = w_rel;
    if (!(w_rel <= cfg.weight_tol)) {
      fail(step, "weight discrepancy " + std::to_string(w_rel) + " > " + std::to_string(cfg.weight_tol));
      break;
    }
    const double gram = relative_frobenius(fact.Q(), DenseMat(w_f.transpose() * w_f));
    rep.max_gram_residual = std::max(rep.max_gram_residual, gram);
    if (!(gram <= cfg.invariant_tol)) {
      fail(step, "Q bookkeeping residual " + std::to_string(gram) + " > " + std::to_string(cfg.invariant_tol));
      break;
    }
    if (!fact.inverse_is_stale()) {
      const double inv = fact.inverse_residual();
      rep.max_inverse_residual = std::isnan(rep.max_inverse_residual) ? inv : std::max(rep.max_inverse_residual, inv);
      if (!(inv <= cfg.invariant_tol)) {
        fail(step, "U^{-T} residual " + std::to_string(inv) + " > " + std::to_string(cfg.invariant_tol));
        break;
      }
    }
  }
  rep.seconds = std::chrono::duration<double>(clock::now() - t0).count();
  return rep;
}

inline VerifyReport cmd_verify(const VerifyConfig& cfg) {
  if (cfg.D == 0 || cfg.d == 0 || cfg.m == 0) throw Error("verify: dimensions must be positive");
  if (static_cast<double>(cfg.D) * static_cast<double>(cfg.d) > 1e8) {
    throw Error("verify: D*d exceeds 1e8, too large for the naive oracle");
  }
  if (cfg.eta < 0.0) throw Error("verify: eta must be >= 0");
  std::vector<VerifyRunSpec> specs = cfg.runs;
  if (specs.empty()) {
    specs = {{VerifyPath::online, InverseMode::woodbury},
             {VerifyPath::online, InverseMode::solve_each_batch},
             {VerifyPath::minibatch, InverseMode::woodbury},
             {VerifyPath::minibatch, InverseMode::solve_each_batch}};
  }
  VerifyReport report;
  for (const auto& spec : specs) {
    report.runs.push_back(verify_run(cfg, spec));
    const auto& r = report.runs.back();
    log_json(LogLevel::info, {{"event", "verify_run"},
                              {"run", r.name},
                              {"passed", r.passed()},
                              {"max_loss_rel", r.max_loss_rel},
                              {"final_weight_rel", r.final_weight_rel}});
  }
  return report;
}

inline void print_verify_report(std::ostream& os, const VerifyReport& report) {
  for (const auto& r : report.runs) {
    os << (r.passed() ? "PASS " : "FAIL ") << r.name << " steps=" << r.steps << " max_loss_rel=" << r.max_loss_rel
       << " max_grad_rel=" << r.max_grad_rel << " final_weight_rel=" << r.final_weight_rel
       << " max_gram_residual=" << r.max_gram_residual << " max_inverse_residual=";
    if (std::isnan(r.max_inverse_residual)) {
      os << "n/a";
    } else {
      os << r.max_inverse_residual;
    }
    os << " seconds=" << r.seconds;
    if (!r.passed()) os << " first_failure_step=" << r.first_failure_step << " reason=\"" << r.failure << '"';
    os << '\n';
  }
  os << (report.passed() ? "VERIFY PASS" : "VERIFY FAIL") << '\n';
}

}  // namespace lst::harness
