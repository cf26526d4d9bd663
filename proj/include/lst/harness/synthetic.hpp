#pragma once

// Seeded random streams for hidden vectors, sparse targets and planted
// sparse regression datasets.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <unordered_set>
#include <vector>

#include "lst/errors.hpp"
#include "lst/sparse_linear.hpp"

namespace lst::harness {

using Rng = std::mt19937_64;

/// K distinct indices in [0, dim), returned sorted. Floyd's algorithm, O(K).
inline std::vector<std::size_t> sample_distinct(Rng& rng, std::size_t dim, std::size_t k) {
  k = std::min(k, dim);
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(k * 2);
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t j = dim - k; j < dim; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    const std::size_t t = pick(rng);
    if (chosen.insert(t).second) {
      out.push_back(t);
    } else {
      chosen.insert(j);
      out.push_back(j);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// K-sparse vector with N(0,1) values at K distinct random positions.
inline SparseVec random_sparse(Rng& rng, std::size_t dim, std::size_t k) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<SparseEntry> entries;
  for (const auto idx : sample_distinct(rng, dim, k)) {
    double v = 0.0;
    while (v == 0.0) v = normal(rng);
    entries.push_back({idx, v});
  }
  return SparseVec::from_entries(dim, std::move(entries));
}

/// Hidden vector with entries uniform in [-1, 1] (the range of a tanh unit).
inline DenseVec random_hidden(Rng& rng, std::size_t d) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  DenseVec h(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < h.size(); ++i) h[i] = unif(rng);
  return h;
}

inline DenseMat random_hidden_batch(Rng& rng, std::size_t d, std::size_t m) {
  DenseMat hb(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(m));
  for (Eigen::Index j = 0; j < hb.cols(); ++j) hb.col(j) = random_hidden(rng, d);
  return hb;
}

inline DenseMat random_gaussian(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  DenseMat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

/// Keeps the K largest-magnitude entries of a dense vector.
inline SparseVec sparsify_top_k(const DenseVec& dense, std::size_t k) {
  const auto dim = static_cast<std::size_t>(dense.size());
  k = std::min(k, dim);
  std::vector<std::size_t> order(dim);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto mag = [&](std::size_t i) { return std::abs(dense[static_cast<Eigen::Index>(i)]); };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                   [&](std::size_t a, std::size_t b) { return mag(a) > mag(b) || (mag(a) == mag(b) && a < b); });
  std::vector<SparseEntry> entries;
  entries.reserve(k);
  for (std::size_t i = 0; i < k; ++i) entries.push_back({order[i], dense[static_cast<Eigen::Index>(order[i])]});
  return SparseVec::from_entries(dim, std::move(entries));
}

struct GenDataConfig {
  std::size_t input_dim = 1000;   // D_in
  std::size_t output_dim = 1000;  // D
  std::size_t input_nnz = 8;      // K_in
  std::size_t output_nnz = 8;     // K
  std::size_t n_examples = 1000;
  std::uint64_t seed = 1;
  bool planted = true;
  double noise = 1e-3;
};

/// Hidden planted map: column j of W* has max(1, K / K_in) non-zero N(0,1) rows,
/// so W* x is roughly K-sparse and y = top_K(W* x + noise) is learnable.
class PlantedModel {
 public:
  PlantedModel(Rng& rng, std::size_t input_dim, std::size_t output_dim, std::size_t input_nnz,
               std::size_t output_nnz)
      : output_dim_(output_dim), columns_(input_dim) {
    const std::size_t per_col = std::max<std::size_t>(1, output_nnz / std::max<std::size_t>(1, input_nnz));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& col : columns_) {
      for (const auto r : sample_distinct(rng, output_dim, per_col)) col.push_back({r, normal(rng)});
    }
  }

  DenseVec apply(const SparseVec& x) const {
    DenseVec out = DenseVec::Zero(static_cast<Eigen::Index>(output_dim_));
    for (const auto& e : x) {
      for (const auto& w : columns_[e.index]) out[static_cast<Eigen::Index>(w.index)] += w.value * e.value;
    }
    return out;
  }

 private:
  std::size_t output_dim_;
  std::vector<std::vector<SparseEntry>> columns_;
};

/// Calls fn(const SparseExample&) for each generated example; deterministic for a given seed.
template <typename Fn>
void for_each_generated_example(const GenDataConfig& cfg, Fn&& fn) {
  if (cfg.input_dim == 0 || cfg.output_dim == 0) throw Error("gen-data: dimensions must be positive");
  Rng rng(cfg.seed);
  std::optional<PlantedModel> model;
  if (cfg.planted) model.emplace(rng, cfg.input_dim, cfg.output_dim, cfg.input_nnz, cfg.output_nnz);
  std::normal_distribution<double> noise(0.0, cfg.noise > 0.0 ? cfg.noise : 1.0);
  for (std::size_t n = 0; n < cfg.n_examples; ++n) {
    SparseExample ex;
    ex.input = random_sparse(rng, cfg.input_dim, cfg.input_nnz);
    if (model) {
      DenseVec response = model->apply(ex.input);
      if (cfg.noise > 0.0) {
        for (Eigen::Index i = 0; i < response.size(); ++i) response[i] += noise(rng);
      }
      ex.target = sparsify_top_k(response, cfg.output_nnz);
    } else {
      ex.target = random_sparse(rng, cfg.output_dim, cfg.output_nnz);
    }
    fn(ex);
  }
}

inline SparseDatasetHeader generated_header(const GenDataConfig& cfg) {
  return {cfg.input_dim, cfg.output_dim, cfg.input_nnz, cfg.output_nnz};
}

/// Streams a dataset in the sparse example file format.
inline void generate_dataset(std::ostream& os, const GenDataConfig& cfg) {
  write_dataset_header(os, generated_header(cfg));
  for_each_generated_example(cfg, [&](const SparseExample& ex) { write_example(os, ex); });
  if (!os) throw Error("gen-data: write failed");
}

/// In-memory counterpart of generate_dataset, with identical examples.
inline SparseDataset generate_examples(const GenDataConfig& cfg) {
  SparseDataset ds;
  ds.header = generated_header(cfg);
  ds.examples.reserve(cfg.n_examples);
  for_each_generated_example(cfg, [&](const SparseExample& ex) { ds.examples.push_back(ex); });
  return ds;
}

}  // namespace lst::harness
