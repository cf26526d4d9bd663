#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "lst/harness/synthetic.hpp"
#include "lst/sparse_linear.hpp"
#include "oracles.hpp"

using namespace lst;

namespace {

DenseMat small_m() {
  DenseMat m(3, 2);
  m << 1, 2, 3, 4, 5, 6;
  return m;
}

}  // namespace

TEST(ParseSparseLine, SortsIntoCanonicalOrder) {
  const SparseVec s = parse_sparse_line("4:-4.0 1:3.0", 6);
  ASSERT_EQ(s.nnz(), 2u);
  EXPECT_EQ(s.entries()[0], (SparseEntry{1, 3.0}));
  EXPECT_EQ(s.entries()[1], (SparseEntry{4, -4.0}));
  EXPECT_EQ(s.dim(), 6u);
}

TEST(ParseSparseLine, EmptyLineIsZeroVector) {
  EXPECT_TRUE(parse_sparse_line("", 6).empty());
  EXPECT_TRUE(parse_sparse_line("   \t ", 6).empty());
}

TEST(ParseSparseLine, DropsExplicitZeros) {
  const SparseVec s = parse_sparse_line("2:0.0 5:1.0", 6);
  ASSERT_EQ(s.nnz(), 1u);
  EXPECT_EQ(s.entries()[0], (SparseEntry{5, 1.0}));
}

TEST(ParseSparseLine, RejectsBadInput) {
  EXPECT_THROW(parse_sparse_line("1:2:3", 6), ParseError);
  EXPECT_THROW(parse_sparse_line("abc", 6), ParseError);
  EXPECT_THROW(parse_sparse_line(":1.0", 6), ParseError);
  EXPECT_THROW(parse_sparse_line("1:", 6), ParseError);
  EXPECT_THROW(parse_sparse_line("-1:1.0", 6), ParseError);
  EXPECT_THROW(parse_sparse_line("6:1.0", 6), ParseError);
  EXPECT_THROW(parse_sparse_line("1:1.0 1:2.0", 6), ParseError);
  EXPECT_THROW(parse_sparse_line("1:inf", 6), ParseError);
  EXPECT_THROW(parse_sparse_line("1:nan", 6), ParseError);
}

TEST(ParseSparseLine, DuplicateIsErrorEvenWhenOneIsZero) {
  EXPECT_THROW(parse_sparse_line("3:0 3:1.5", 6), ParseError);
}

TEST(SerializeSparse, RoundTripsRandomCanonicalVectors) {
  harness::Rng rng(7);
  std::uniform_real_distribution<double> wide(-1e6, 1e6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t dim = 1 + static_cast<std::size_t>(rng() % 5000);
    const std::size_t k = static_cast<std::size_t>(rng() % 20);
    std::vector<SparseEntry> entries;
    for (const auto idx : harness::sample_distinct(rng, dim, k)) {
      // Mix of magnitudes, including subnormal-adjacent and non-representable decimals.
      double v = wide(rng) * std::pow(10.0, static_cast<double>(rng() % 40) - 20.0);
      if (v == 0.0) v = 1.0 / 3.0;
      entries.push_back({idx, v});
    }
    const SparseVec s = SparseVec::from_entries(dim, entries);
    EXPECT_EQ(parse_sparse_line(serialize_sparse(s), dim), s);
  }
}

TEST(SparseSqNorm, Examples) {
  EXPECT_DOUBLE_EQ(sparse_sq_norm(parse_sparse_line("4:-4.0 1:3.0", 6)), 25.0);
  EXPECT_DOUBLE_EQ(sparse_sq_norm(SparseVec(6)), 0.0);
}

TEST(SparseSqNorm, MatchesDenseSum) {
  harness::Rng rng(11);
  const SparseVec s = harness::random_sparse(rng, 1000, 8);
  double dense = 0.0;
  for (double v : oracle::densify(s)) dense += v * v;
  EXPECT_NEAR(sparse_sq_norm(s), dense, 1e-12 * dense);
}

TEST(SparseDot, MatchesDenseDot) {
  harness::Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    const SparseVec a = harness::random_sparse(rng, 40, 10);
    const SparseVec b = harness::random_sparse(rng, 40, 10);
    EXPECT_NEAR(sparse_dot(a, b), oracle::dot(oracle::densify(a), oracle::densify(b)), 1e-12);
  }
  EXPECT_THROW(sparse_dot(SparseVec(3), SparseVec(4)), DimensionMismatch);
}

TEST(GatherRowsWeighted, SmallExample) {
  // Dense oracle: M^T [2, 0, -1] = [1*2 - 5, 2*2 - 6] = [-3, -2]
  const DenseVec r = gather_rows_weighted(small_m(), parse_sparse_line("0:2.0 2:-1.0", 3));
  EXPECT_DOUBLE_EQ(r[0], -3.0);
  EXPECT_DOUBLE_EQ(r[1], -2.0);
}

TEST(GatherRowsWeighted, EmptySparseGivesZero) {
  const DenseVec r = gather_rows_weighted(small_m(), SparseVec(3));
  EXPECT_TRUE(r.isZero(0.0));
  EXPECT_EQ(r.size(), 2);
}

TEST(GatherRowsWeighted, MatchesDenseMatvec) {
  harness::Rng rng(3);
  const DenseMat m = harness::random_gaussian(rng, 1000, 16, 1.0);
  for (int t = 0; t < 10; ++t) {
    const SparseVec s = harness::random_sparse(rng, 1000, 8);
    const oracle::Vec expected = oracle::matvec_t(oracle::to_mat(m), oracle::densify(s));
    const DenseVec got = gather_rows_weighted(m, s);
    for (std::size_t j = 0; j < expected.size(); ++j) EXPECT_NEAR(got[j], expected[j], 1e-12);
  }
}

TEST(GatherRowsWeighted, DimensionMismatch) {
  EXPECT_THROW(gather_rows_weighted(small_m(), SparseVec(4)), DimensionMismatch);
}

TEST(ScatterRankOne, SingleRow) {
  DenseMat m = DenseMat::Zero(3, 2);
  scatter_rank_one(m, parse_sparse_line("1:2.0", 3), DenseVec::Ones(2), 0.5);
  EXPECT_DOUBLE_EQ(m(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(m(1, 1), 1.0);
  EXPECT_TRUE(m.row(0).isZero(0.0));
  EXPECT_TRUE(m.row(2).isZero(0.0));
}

TEST(ScatterRankOne, ZeroScaleIsNoop) {
  DenseMat m = small_m();
  scatter_rank_one(m, parse_sparse_line("0:5 2:1", 3), DenseVec::Ones(2), 0.0);
  EXPECT_EQ(m, small_m());
}

TEST(ScatterRankOne, MatchesDenseOuterProductAndLeavesOtherRowsUntouched) {
  harness::Rng rng(5);
  const DenseMat before = harness::random_gaussian(rng, 500, 12, 1.0);
  const SparseVec s = harness::random_sparse(rng, 500, 7);
  const DenseVec g = harness::random_hidden(rng, 12);
  const double scale = -0.37;
  DenseMat after = before;
  scatter_rank_one(after, s, g, scale);

  const oracle::Vec ys = oracle::densify(s);
  for (Eigen::Index i = 0; i < before.rows(); ++i) {
    if (ys[i] == 0.0) {
      // Rows outside the support are bit-identical.
      for (Eigen::Index j = 0; j < before.cols(); ++j) ASSERT_EQ(after(i, j), before(i, j));
    } else {
      for (Eigen::Index j = 0; j < before.cols(); ++j) {
        EXPECT_NEAR(after(i, j), before(i, j) + scale * ys[i] * g[j], 1e-12);
      }
    }
  }
}

TEST(ScatterRankOne, DimensionMismatch) {
  DenseMat m = small_m();
  EXPECT_THROW(scatter_rank_one(m, SparseVec(4), DenseVec::Ones(2), 1.0), DimensionMismatch);
  EXPECT_THROW(scatter_rank_one(m, SparseVec(3), DenseVec::Ones(3), 1.0), DimensionMismatch);
}

TEST(InputLayer, ForwardAndUpdateAreGatherAndNegativeScatter) {
  harness::Rng rng(9);
  DenseMat w1 = harness::random_gaussian(rng, 200, 6, 1.0);
  const SparseVec x = harness::random_sparse(rng, 200, 4);
  EXPECT_EQ(input_forward(w1, x), gather_rows_weighted(w1, x));

  const DenseVec g = harness::random_hidden(rng, 6);
  DenseMat expected = w1;
  scatter_rank_one(expected, x, g, -0.1);
  input_update(w1, x, g, 0.1);
  EXPECT_EQ(w1, expected);
}

TEST(Dataset, ReadWriteRoundTrip) {
  harness::GenDataConfig cfg;
  cfg.input_dim = 50;
  cfg.output_dim = 70;
  cfg.input_nnz = 3;
  cfg.output_nnz = 5;
  cfg.n_examples = 20;
  const SparseDataset ds = harness::generate_examples(cfg);

  std::stringstream ss;
  write_dataset(ss, ds);
  const SparseDataset back = read_dataset(ss);
  EXPECT_EQ(back.header, ds.header);
  EXPECT_EQ(back.examples, ds.examples);
}

TEST(Dataset, ParsesHandWrittenFile) {
  std::istringstream in("5 6 2 2\n0:1 3:2.5\t1:1 4:-1\n\t\n2:1\t5:3\n");
  const SparseDataset ds = read_dataset(in);
  EXPECT_EQ(ds.header, (SparseDatasetHeader{5, 6, 2, 2}));
  ASSERT_EQ(ds.examples.size(), 3u);
  EXPECT_EQ(ds.examples[0].input.nnz(), 2u);
  EXPECT_EQ(ds.examples[0].target.entries()[1], (SparseEntry{4, -1.0}));
  EXPECT_TRUE(ds.examples[1].input.empty());
  EXPECT_TRUE(ds.examples[1].target.empty());
}

TEST(Dataset, ReportsErrorsWithLineNumber) {
  std::istringstream missing_tab("5 6 2 2\n0:1 3:2.5\n");
  EXPECT_THROW(read_dataset(missing_tab), ParseError);
  std::istringstream bad_header("5 x\n");
  EXPECT_THROW(read_dataset(bad_header), ParseError);
  std::istringstream out_of_range("5 6 2 2\n0:1\t6:1\n");
  try {
    read_dataset(out_of_range);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}
