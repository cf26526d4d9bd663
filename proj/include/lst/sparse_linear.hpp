#pragma once

// Sparse-vector primitives and the O(Kd) gather/scatter kernels used by the
// sparse input layer and by the V-side of the factored output layer.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lst/errors.hpp"

namespace lst {

using DenseVec = Eigen::VectorXd;
using DenseMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SparseEntry {
  std::size_t index = 0;
  double value = 0.0;

  friend bool operator==(const SparseEntry&, const SparseEntry&) = default;
};

/// K-sparse vector of dimension `dim`. Entries are kept sorted by index,
/// unique, finite and non-zero, so `nnz()` is the K every cost bound refers to.
class SparseVec {
 public:
  SparseVec() = default;
  explicit SparseVec(std::size_t dim) : dim_(dim) {}

  /// Builds a canonical vector from arbitrary-order entries. Zeros are dropped;
  /// duplicates, out-of-range indices and non-finite values throw.
  static SparseVec from_entries(std::size_t dim, std::vector<SparseEntry> entries) {
    std::sort(entries.begin(), entries.end(),
              [](const SparseEntry& a, const SparseEntry& b) { return a.index < b.index; });
    SparseVec out(dim);
    out.entries_.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (e.index >= dim) {
        throw ParseError("sparse index " + std::to_string(e.index) + " out of range for dim " +
                         std::to_string(dim));
      }
      if (i > 0 && entries[i - 1].index == e.index) {
        throw ParseError("duplicate sparse index " + std::to_string(e.index));
      }
      if (!std::isfinite(e.value)) {
        throw ParseError("non-finite value at sparse index " + std::to_string(e.index));
      }
      if (e.value != 0.0) out.entries_.push_back(e);
    }
    return out;
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t nnz() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::span<const SparseEntry> entries() const noexcept { return entries_; }

  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  DenseVec to_dense() const {
    DenseVec out = DenseVec::Zero(static_cast<Eigen::Index>(dim_));
    for (const auto& e : entries_) out[static_cast<Eigen::Index>(e.index)] = e.value;
    return out;
  }

  friend bool operator==(const SparseVec&, const SparseVec&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<SparseEntry> entries_;
};

/// Parses whitespace-separated `index:value` tokens into a canonical SparseVec.
inline SparseVec parse_sparse_line(std::string_view text, std::size_t dim) {
  std::vector<SparseEntry> entries;
  std::size_t pos = 0;
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (pos < text.size()) {
    while (pos < text.size() && is_space(text[pos])) ++pos;
    if (pos >= text.size()) break;
    std::size_t end = pos;
    while (end < text.size() && !is_space(text[end])) ++end;
    const std::string_view token = text.substr(pos, end - pos);
    pos = end;

    const auto colon = token.find(':');
    if (colon == std::string_view::npos || colon == 0 || colon + 1 == token.size()) {
      throw ParseError("malformed sparse token '" + std::string(token) + "'");
    }
    std::uint64_t index = 0;
    const char* ibeg = token.data();
    const char* iend = token.data() + colon;
    auto [iptr, iec] = std::from_chars(ibeg, iend, index);
    if (iec != std::errc() || iptr != iend) {
      throw ParseError("malformed sparse index in '" + std::string(token) + "'");
    }
    double value = 0.0;
    const char* vbeg = token.data() + colon + 1;
    const char* vend = token.data() + token.size();
    auto [vptr, vec] = std::from_chars(vbeg, vend, value);
    if (vec != std::errc() || vptr != vend) {
      throw ParseError("malformed sparse value in '" + std::string(token) + "'");
    }
    entries.push_back({static_cast<std::size_t>(index), value});
  }
  return SparseVec::from_entries(dim, std::move(entries));
}

/// Inverse of parse_sparse_line; 17 significant digits makes the round trip exact.
inline std::string serialize_sparse(const SparseVec& s) {
  std::string out;
  char buf[64];
  bool first = true;
  for (const auto& e : s) {
    if (!first) out.push_back(' ');
    first = false;
    out += std::to_string(e.index);
    out.push_back(':');
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), e.value, std::chars_format::general, 17);
    (void)ec;
    out.append(buf, ptr);
  }
  return out;
}

/// y^T y in O(K).
inline double sparse_sq_norm(const SparseVec& s) noexcept {
  double acc = 0.0;
  for (const auto& e : s) acc += e.value * e.value;
  return acc;
}

/// Dot product of two sparse vectors by merging their sorted index lists.
inline double sparse_dot(const SparseVec& a, const SparseVec& b) {
  detail::require_dims(a.dim() == b.dim(), "sparse_dot: dimension mismatch");
  double acc = 0.0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (ia->index < ib->index) {
      ++ia;
    } else if (ib->index < ia->index) {
      ++ib;
    } else {
      acc += ia->value * ib->value;
      ++ia;
      ++ib;
    }
  }
  return acc;
}

/// M^T s = sum_k v_k M[u_k, :]; touches only the K rows named by s.
inline DenseVec gather_rows_weighted(const DenseMat& m, const SparseVec& s) {
  detail::require_dims(s.dim() == static_cast<std::size_t>(m.rows()),
                       "gather_rows_weighted: sparse dim " + std::to_string(s.dim()) +
                           " != matrix rows " + std::to_string(m.rows()));
  DenseVec out = DenseVec::Zero(m.cols());
  for (const auto& e : s) out.noalias() += e.value * m.row(static_cast<Eigen::Index>(e.index)).transpose();
  return out;
}

/// M[u_k, :] += scale * v_k * g for every stored (u_k, v_k).
inline void scatter_rank_one(DenseMat& m, const SparseVec& s, const DenseVec& g, double scale) {
  detail::require_dims(s.dim() == static_cast<std::size_t>(m.rows()),
                       "scatter_rank_one: sparse dim != matrix rows");
  detail::require_dims(g.size() == m.cols(), "scatter_rank_one: vector length != matrix cols");
  if (scale == 0.0) return;
  for (const auto& e : s) {
    m.row(static_cast<Eigen::Index>(e.index)) += (scale * e.value) * g.transpose();
  }
}

/// First-layer forward pass a = W1^T x for a sparse input x.
inline DenseVec input_forward(const DenseMat& w1, const SparseVec& x) {
  return gather_rows_weighted(w1, x);
}

/// SGD step on the input layer: W1 -= eta * x grad_a^T, only K_in rows touched.
inline void input_update(DenseMat& w1, const SparseVec& x, const DenseVec& grad_a1, double eta) {
  scatter_rank_one(w1, x, grad_a1, -eta);
}

// ---------------------------------------------------------------------------
// Sparse example files
//
//   D_in D K_in K
//   <input pairs>\t<target pairs>
//   ...
// ---------------------------------------------------------------------------

struct SparseDatasetHeader {
  std::size_t input_dim = 0;   // D_in
  std::size_t output_dim = 0;  // D
  std::size_t input_nnz = 0;   // K_in
  std::size_t output_nnz = 0;  // K

  friend bool operator==(const SparseDatasetHeader&, const SparseDatasetHeader&) = default;
};

struct SparseExample {
  SparseVec input;
  SparseVec target;

  friend bool operator==(const SparseExample&, const SparseExample&) = default;
};

struct SparseDataset {
  SparseDatasetHeader header;
  std::vector<SparseExample> examples;
};

inline void write_dataset_header(std::ostream& os, const SparseDatasetHeader& h) {
  os << h.input_dim << ' ' << h.output_dim << ' ' << h.input_nnz << ' ' << h.output_nnz << '\n';
}

inline void write_example(std::ostream& os, const SparseExample& ex) {
  os << serialize_sparse(ex.input) << '\t' << serialize_sparse(ex.target) << '\n';
}

inline SparseExample parse_example_line(std::string_view line, const SparseDatasetHeader& h) {
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos) throw ParseError("example line has no TAB separator");
  return {parse_sparse_line(line.substr(0, tab), h.input_dim),
          parse_sparse_line(line.substr(tab + 1), h.output_dim)};
}

inline SparseDataset read_dataset(std::istream& is) {
  SparseDataset ds;
  std::string line;
  if (!std::getline(is, line)) throw ParseError("dataset: missing header line");
  {
    std::istringstream hs(line);
    auto& h = ds.header;
    if (!(hs >> h.input_dim >> h.output_dim >> h.input_nnz >> h.output_nnz)) {
      throw ParseError("dataset: header must be 'D_in D K_in K'");
    }
    if (h.input_dim == 0 || h.output_dim == 0) throw ParseError("dataset: dimensions must be positive");
  }
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      ds.examples.push_back(parse_example_line(line, ds.header));
    } catch (const ParseError& e) {
      throw ParseError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return ds;
}

inline void write_dataset(std::ostream& os, const SparseDataset& ds) {
  write_dataset_header(os, ds.header);
  for (const auto& ex : ds.examples) write_example(os, ex);
}

}  // namespace lst
