#pragma once

// Demo trainer: sparse input -> (optional tanh, d units) -> large sparse-target
// linear output layer, plain SGD. The output layer is naive, factored, or both
// in lockstep with identical initial weights.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "lst/factored_layer.hpp"
#include "lst/harness/bench.hpp"
#include "lst/harness/log.hpp"
#include "lst/harness/synthetic.hpp"
#include "lst/minibatch.hpp"
#include "lst/naive_layer.hpp"
#include "lst/sparse_linear.hpp"
#include "lst/stabilization.hpp"

namespace lst::harness {

enum class Nonlinearity { none, tanh };

struct TrainConfig {
  std::size_t D_in = 1000;
  std::size_t D = 1000;
  std::size_t d = 32;
  std::size_t K_in = 8;
  std::size_t K = 8;
  std::size_t m = 1;
  double eta = 0.01;
  std::size_t steps = 1000;
  std::uint64_t seed = 1;
  Impl impl = Impl::factored;
  bool stabilize = true;
  StabilizationConfig stabilization{};
  Nonlinearity nonlinearity = Nonlinearity::tanh;
  std::optional<InverseMode> strategy;
  double both_tol = 1e-6;
  // Zero selects the defaults 1/sqrt(K_in) and 0.01/sqrt(d).
  double input_init_scale = 0.0;
  double output_init_scale = 0.0;

  void validate() const {
    if (D_in == 0 || D == 0 || d == 0 || m == 0) throw Error("train: dimensions must be positive");
    if (eta < 0.0) throw Error("train: eta must be >= 0");
    if (stabilize) stabilization.validate();
  }
};

struct TrainResult {
  std::vector<double> loss_naive;     // per step, summed over the batch
  std::vector<double> loss_factored;
  std::size_t stabilization_fixes = 0;
  double max_curve_rel_diff = 0.0;  // impl == both only
};

namespace detail {

struct InputLayer {
  DenseMat w1;  // D_in x d
  Nonlinearity act;

  DenseVec activate(const DenseVec& a1) const {
    return act == Nonlinearity::tanh ? DenseVec(a1.array().tanh()) : a1;
  }
  // dL/da1 from dL/dh and h = act(a1).
  DenseVec backprop(const DenseVec& grad_h, const DenseVec& h) const {
    return act == Nonlinearity::tanh ? DenseVec(grad_h.array() * (1.0 - h.array().square())) : grad_h;
  }
};

struct NaiveModel {
  InputLayer input;
  NaiveOutputLayer output;
};

struct FactoredModel {
  InputLayer input;
  FactoredOutputLayer output;
};

inline DenseMat forward_batch(const InputLayer& in, std::span<const SparseExample* const> batch) {
  DenseMat hidden(in.w1.cols(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    hidden.col(static_cast<Eigen::Index>(j)) = in.activate(input_forward(in.w1, batch[j]->input));
  }
  return hidden;
}

inline void backprop_batch(InputLayer& in, std::span<const SparseExample* const> batch, const DenseMat& hidden,
                           const DenseMat& grad_hidden, double eta) {
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    const DenseVec g = in.backprop(grad_hidden.col(col), hidden.col(col));
    input_update(in.w1, batch[j]->input, g, eta);
  }
}

inline double train_step(NaiveModel& model, std::span<const SparseExample* const> batch, double eta) {
  const DenseMat hidden = forward_batch(model.input, batch);
  if (batch.size() == 1) {
    const DenseVec h = hidden.col(0);
    const StepResult r = model.output.step(h, batch[0]->target, eta);
    DenseMat g(r.grad_h.size(), 1);
    g.col(0) = r.grad_h;
    backprop_batch(model.input, batch, hidden, g, eta);
    return r.loss;
  }
  std::vector<SparseVec> targets;
  for (const auto* ex : batch) targets.push_back(ex->target);
  const MinibatchResult r = model.output.step_minibatch(hidden, targets, eta);
  backprop_batch(model.input, batch, hidden, r.grad_H, eta);
  return r.loss_total;
}

inline double train_step(FactoredModel& model, std::span<const SparseExample* const> batch, double eta,
                         InverseStrategy strategy) {
  const DenseMat hidden = forward_batch(model.input, batch);
  if (batch.size() == 1) {
    const DenseVec h = hidden.col(0);
    const StepResult r = model.output.step(h, batch[0]->target, eta, true, strategy.mode);
    DenseMat g(r.grad_h.size(), 1);
    g.col(0) = r.grad_h;
    backprop_batch(model.input, batch, hidden, g, eta);
    return r.loss;
  }
  std::vector<SparseVec> targets;
  for (const auto* ex : batch) targets.push_back(ex->target);
  const MinibatchResult r = minibatch_step(model.output, hidden, targets, eta, strategy);
  backprop_batch(model.input, batch, hidden, r.grad_H, eta);
  return r.loss_total;
}

}  // namespace detail

/// Trains on `data` (cycled in order) for cfg.steps minibatches of size cfg.m.
inline TrainResult cmd_train(const TrainConfig& cfg, const SparseDataset& data) {
  cfg.validate();
  if (data.examples.empty()) throw Error("train: dataset has no examples");
  if (data.header.input_dim != cfg.D_in || data.header.output_dim != cfg.D) {
    throw Error("train: dataset dimensions (" + std::to_string(data.header.input_dim) + ", " +
                std::to_string(data.header.output_dim) + ") do not match --Din/--D");
  }

  Rng rng(cfg.seed);
  const double in_scale = cfg.input_init_scale > 0.0
                              ? cfg.input_init_scale
                              : 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(cfg.K_in, 1)));
  const double out_scale =
      cfg.output_init_scale > 0.0 ? cfg.output_init_scale : 0.01 / std::sqrt(static_cast<double>(cfg.d));
  const DenseMat w1 = random_gaussian(rng, cfg.D_in, cfg.d, in_scale);
  const DenseMat w0 = random_gaussian(rng, cfg.D, cfg.d, out_scale);
  const InverseStrategy strategy =
      cfg.strategy ? InverseStrategy{*cfg.strategy, cfg.d / 4} : InverseStrategy::default_for(cfg.d, cfg.m);

  std::optional<detail::NaiveModel> naive;
  std::optional<detail::FactoredModel> fact;
  if (cfg.impl != Impl::factored) naive.emplace(detail::NaiveModel{{w1, cfg.nonlinearity}, NaiveOutputLayer(w0)});
  if (cfg.impl != Impl::naive) {
    fact.emplace(detail::FactoredModel{{w1, cfg.nonlinearity}, FactoredOutputLayer::from_weights(w0)});
  }

  TrainResult result;
  const auto sink = stabilization_log_sink("train");
  std::vector<const SparseExample*> batch(cfg.m);
  std::size_t cursor = 0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (auto& ex : batch) {
      ex = &data.examples[cursor];
      cursor = (cursor + 1) % data.examples.size();
    }
    try {
      if (naive) result.loss_naive.push_back(detail::train_step(*naive, batch, cfg.eta));
      if (fact) {
        result.loss_factored.push_back(detail::train_step(*fact, batch, cfg.eta, strategy));
        if (cfg.stabilize) {
          if (auto rep = maybe_stabilize(fact->output, cfg.stabilization, sink)) {
            result.stabilization_fixes += rep->fixes;
          }
        }
      }
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("train: diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (naive && fact) {
      const double ln = result.loss_naive.back();
      const double lf = result.loss_factored.back();
      const double rel = std::abs(lf - ln) / std::max(std::abs(ln), std::numeric_limits<double>::min());
      result.max_curve_rel_diff = std::max(result.max_curve_rel_diff, rel);
      if (!(rel <= cfg.both_tol)) {
        throw Error("train: naive and factored loss curves differ at step " + std::to_string(step) +
                    " (relative " + std::to_string(rel) + ")");
      }
    }
  }
  return result;
}

/// Synthetic variant: draws a dataset in memory from the generator, then trains.
inline TrainResult cmd_train_synthetic(const TrainConfig& cfg, std::size_t n_examples, bool planted = true) {
  GenDataConfig gen;
  gen.input_dim = cfg.D_in;
  gen.output_dim = cfg.D;
  gen.input_nnz = cfg.K_in;
  gen.output_nnz = cfg.K;
  gen.n_examples = n_examples;
  gen.seed = cfg.seed + 1000;
  gen.planted = planted;
  return cmd_train(cfg, generate_examples(gen));
}

/// `step,loss` for a single implementation; `step,loss_naive,loss_factored` for both.
inline void write_loss_csv(std::ostream& os, const TrainResult& r) {
  if (!r.loss_naive.empty() && !r.loss_factored.empty()) {
    os << "step,loss_naive,loss_factored\n";
    for (std::size_t i = 0; i < r.loss_naive.size(); ++i) {
      os << (i + 1) << ',' << format_real(r.loss_naive[i]) << ',' << format_real(r.loss_factored[i]) << '\n';
    }
    return;
  }
  const auto& losses = r.loss_factored.empty() ? r.loss_naive : r.loss_factored;
  os << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) os << (i + 1) << ',' << format_real(losses[i]) << '\n';
}

}  // namespace lst::harness
