#pragma once

// Binary checkpoint for FactoredOutputLayer.
//
//   offset  size  field
//   0       8     magic "LSTCKPT\0"
//   8       4     format version (uint32, currently 1)
//   12      8     D (uint64)
//   20      8     d (uint64)
//   28      ...   V (D*d), U (d*d), U^{-T} (d*d), Q (d*d) as float64, row-major
//
// All integers and floats are little-endian. Loading re-checks that U^{-T}
// inverts U and that Q matches (VU)^T (VU) before returning the layer.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "lst/errors.hpp"
#include "lst/factored_layer.hpp"
#include "lst/linalg.hpp"

namespace lst {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::array<char, 8> kCheckpointMagic = {'L', 'S', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
// Relative tolerance for both bookkeeping invariants on load.
inline constexpr double kCheckpointInvariantTol = 1e-6;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("checkpoint: truncated header");
  return v;
}

inline void write_matrix(std::ostream& os, const DenseMat& m) {
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

inline DenseMat read_matrix(std::istream& is, Eigen::Index rows, Eigen::Index cols, const char* name) {
  DenseMat m(rows, cols);
  if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
    throw CheckpointError(std::string("checkpoint: truncated ") + name);
  }
  if (!m.allFinite()) throw CheckpointError(std::string("checkpoint: non-finite values in ") + name);
  return m;
}

}  // namespace detail

/// Writes the layer. A stale U^{-T} is refreshed first so the file is self-consistent.
inline void save_checkpoint(std::ostream& os, FactoredOutputLayer& layer) {
  if (layer.inverse_is_stale()) layer.refresh_inverse_transpose();
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::write_pod(os, kCheckpointVersion);
  detail::write_pod(os, static_cast<std::uint64_t>(layer.output_dim()));
  detail::write_pod(os, static_cast<std::uint64_t>(layer.hidden_dim()));
  detail::write_matrix(os, layer.V());
  detail::write_matrix(os, layer.U());
  detail::write_matrix(os, layer.inverse_transpose());
  detail::write_matrix(os, layer.Q());
  if (!os) throw CheckpointError("checkpoint: write failed");
}

inline FactoredOutputLayer load_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw CheckpointError("checkpoint: bad magic");
  }
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto D = detail::read_pod<std::uint64_t>(is);
  const auto d = detail::read_pod<std::uint64_t>(is);
  if (D == 0 || d == 0) throw CheckpointError("checkpoint: zero dimension");
  const auto Di = static_cast<Eigen::Index>(D);
  const auto di = static_cast<Eigen::Index>(d);

  DenseMat v = detail::read_matrix(is, Di, di, "V");
  DenseMat u = detail::read_matrix(is, di, di, "U");
  DenseMat uinv_t = detail::read_matrix(is, di, di, "U^{-T}");
  DenseMat q = detail::read_matrix(is, di, di, "Q");

  auto layer = detail::LayerAccess::assemble(std::move(v), std::move(u), std::move(uinv_t), std::move(q));
  const double inv_rel = layer.inverse_residual() / std::sqrt(static_cast<double>(d));
  if (!(inv_rel < kCheckpointInvariantTol)) {
    throw CheckpointError("checkpoint: U^{-T} does not invert U (relative residual " + std::to_string(inv_rel) + ")");
  }
  const double gram_rel = layer.gram_residual();
  if (!(gram_rel < kCheckpointInvariantTol)) {
    throw CheckpointError("checkpoint: Q does not match (VU)^T (VU) (relative residual " + std::to_string(gram_rel) +
                          ")");
  }
  return layer;
}

inline void save_checkpoint_file(const std::string& path, FactoredOutputLayer& layer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  save_checkpoint(os, layer);
}

inline FactoredOutputLayer load_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path);
  return load_checkpoint(is);
}

}  // namespace lst
