#pragma once

// Per-batch timing of the naive and factored output layers over a sweep of D.
// Each point discards warm-up batches, then takes the median over `reps`
// timed batches drawn cyclically from a small pre-generated pool.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lst/factored_layer.hpp"
#include "lst/harness/log.hpp"
#include "lst/harness/synthetic.hpp"
#include "lst/minibatch.hpp"
#include "lst/naive_layer.hpp"

namespace lst::harness {

enum class Impl { naive, factored, both };

struct BenchRecord {
  std::string impl;  // "naive" | "factored"
  std::size_t D = 0;
  std::size_t d = 0;
  std::size_t K = 0;
  std::size_t m = 0;
  double seconds_per_batch = 0.0;
  double speedup_vs_naive = std::numeric_limits<double>::quiet_NaN();
  double theoretical_speedup = 0.0;
};

/// D / (4d): roughly 3Dd naive operations against 12d^2 factored ones.
inline double theoretical_speedup(std::size_t output_dim, std::size_t hidden_dim) {
  return static_cast<double>(output_dim) / (4.0 * static_cast<double>(hidden_dim));
}

inline BenchRecord make_bench_record(std::string impl, std::size_t D, std::size_t d, std::size_t K, std::size_t m,
                                     double seconds_per_batch) {
  BenchRecord r;
  r.impl = std::move(impl);
  r.D = D;
  r.d = d;
  r.K = K;
  r.m = m;
  r.seconds_per_batch = seconds_per_batch;
  r.theoretical_speedup = theoretical_speedup(D, d);
  if (r.impl == "naive") r.speedup_vs_naive = 1.0;
  return r;
}

inline constexpr const char* kBenchCsvHeader = "impl,D,d,K,m,seconds_per_batch,speedup_vs_naive,theoretical_speedup";

/// Shortest round-trip decimal; integral values keep a trailing ".0".
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  std::string s(buf, ptr);
  if (std::isfinite(v) && s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

inline std::string format_bench_row(const BenchRecord& r) {
  return r.impl + ',' + std::to_string(r.D) + ',' + std::to_string(r.d) + ',' + std::to_string(r.K) + ',' +
         std::to_string(r.m) + ',' + format_real(r.seconds_per_batch) + ',' + format_real(r.speedup_vs_naive) + ',' +
         format_real(r.theoretical_speedup);
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRecord>& records, bool with_header) {
  if (with_header) os << kBenchCsvHeader << '\n';
  for (const auto& r : records) os << format_bench_row(r) << '\n';
}

struct BenchConfig {
  std::vector<std::size_t> D_sweep = {10000, 100000};
  std::size_t d = 128;
  std::size_t K = 16;
  std::size_t m = 128;
  std::size_t reps = 20;
  std::size_t warmup = 2;
  double min_warmup_seconds = 0.2;
  std::size_t pool = 4;
  double eta = 1e-4;
  std::uint64_t seed = 1;
  Impl impl = Impl::both;
  std::optional<InverseMode> strategy;  // default: InverseStrategy::default_for(d, m)
};

namespace detail {

struct BenchBatch {
  DenseMat hidden;  // d x m
  std::vector<SparseVec> targets;
};

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Warm-up runs at least `warmup` batches and at least `min_warmup_seconds`.
template <typename StepFn>
double time_batches(const std::vector<BenchBatch>& pool, std::size_t warmup, double min_warmup_seconds,
                    std::size_t reps, StepFn&& step) {
  using clock = std::chrono::steady_clock;
  std::size_t i = 0;
  const auto w0 = clock::now();
  while (i < warmup || std::chrono::duration<double>(clock::now() - w0).count() < min_warmup_seconds) {
    step(pool[i++ % pool.size()]);
  }
  std::vector<double> samples;
  samples.reserve(reps);
  for (std::size_t r = 0; r < reps; ++r, ++i) {
    const auto& b = pool[i % pool.size()];
    const auto t0 = clock::now();
    step(b);
    samples.push_back(std::chrono::duration<double>(clock::now() - t0).count());
  }
  return median(std::move(samples));
}

}  // namespace detail

inline std::vector<BenchRecord> cmd_bench(const BenchConfig& cfg) {
  if (cfg.d == 0 || cfg.m == 0 || cfg.reps == 0 || cfg.pool == 0) throw Error("bench: d, m, reps, pool must be > 0");
  std::vector<BenchRecord> out;
  const InverseStrategy strategy =
      cfg.strategy ? InverseStrategy{*cfg.strategy, cfg.d / 4} : InverseStrategy::default_for(cfg.d, cfg.m);

  for (const std::size_t D : cfg.D_sweep) {
    Rng rng(cfg.seed);
    std::vector<detail::BenchBatch> pool(cfg.pool);
    for (auto& b : pool) {
      b.hidden = random_hidden_batch(rng, cfg.d, cfg.m);
      for (std::size_t j = 0; j < cfg.m; ++j) b.targets.push_back(random_sparse(rng, D, cfg.K));
    }
    const double init_scale = 0.01 / std::sqrt(static_cast<double>(cfg.d));

    std::optional<double> naive_seconds;
    if (cfg.impl != Impl::factored) {
      NaiveOutputLayer naive(random_gaussian(rng, D, cfg.d, init_scale));
      const double s = detail::time_batches(pool, cfg.warmup, cfg.min_warmup_seconds, cfg.reps, [&](const detail::BenchBatch& b) {
        if (cfg.m == 1) {
          naive.step(b.hidden.col(0), b.targets[0], cfg.eta);
        } else {
          naive.step_minibatch(b.hidden, b.targets, cfg.eta);
        }
      });
      naive_seconds = s;
      out.push_back(make_bench_record("naive", D, cfg.d, cfg.K, cfg.m, s));
      log_json(LogLevel::info, {{"event", "bench"}, {"impl", "naive"}, {"D", D}, {"seconds_per_batch", s}});
    }
    if (cfg.impl != Impl::naive) {
      auto fact = FactoredOutputLayer::random(D, cfg.d, {cfg.seed + 1, init_scale});
      const double s = detail::time_batches(pool, cfg.warmup, cfg.min_warmup_seconds, cfg.reps, [&](const detail::BenchBatch& b) {
        if (cfg.m == 1) {
          fact.step(b.hidden.col(0), b.targets[0], cfg.eta, true, strategy.mode);
        } else {
          minibatch_step(fact, b.hidden, b.targets, cfg.eta, strategy);
        }
      });
      auto rec = make_bench_record("factored", D, cfg.d, cfg.K, cfg.m, s);
      if (naive_seconds) rec.speedup_vs_naive = *naive_seconds / s;
      out.push_back(rec);
      log_json(LogLevel::info, {{"event", "bench"}, {"impl", "factored"}, {"D", D}, {"seconds_per_batch", s}});
    }
  }
  return out;
}

}  // namespace lst::harness
