#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "clustergnn/grad_check.h"
#include "clustergnn/kernels.h"
#include "clustergnn/matcher.h"
#include "test_util.h"

namespace clustergnn {
namespace {

using testing::random_matrix;

TEST(Confidence, OrthonormalRowsGiveIdentity) {
  const MatrixD f{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  EXPECT_EQ(confidence(f, f), f);
}

TEST(Confidence, Bilinear) {
  std::mt19937_64 rng(1);
  const MatrixD a = random_matrix<double>(4, 5, rng);
  MatrixD b = random_matrix<double>(3, 5, rng);
  const MatrixD c = confidence(a, b);
  for (auto& v : b.storage()) v *= 2.0;
  const MatrixD c2 = confidence(a, b);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_DOUBLE_EQ(c2.data()[i], 2.0 * c.data()[i]);
  }
}

TEST(Confidence, HandComputedThreeByTwo) {
  const MatrixD a{{1, 2}, {0, -1}, {3, 0.5}};
  const MatrixD b{{2, 1}, {-1, 4}};
  EXPECT_EQ(confidence(a, b), (MatrixD{{4, 7}, {-1, -4}, {6.5, -1}}));
}

TEST(AddDustbin, ZeroBorder) {
  const MatrixD c{{1, 2}, {3, 4}};
  EXPECT_EQ(add_dustbin(c, 0.0), (MatrixD{{1, 2, 0}, {3, 4, 0}, {0, 0, 0}}));
  const MatrixD c23(2, 3, 1.0);
  const MatrixD t = add_dustbin(c23, 0.7);
  EXPECT_EQ(t.rows(), 3u);
  EXPECT_EQ(t.cols(), 4u);
  EXPECT_EQ(t(2, 3), 0.7);
}

TEST(DualSoftmax, OneByOneZeros) {
  const auto p = dual_softmax(add_dustbin(MatrixD{{0.0}}, 0.0));
  for (const double v : p.log_p.storage()) {
    EXPECT_NEAR(v, -2.0 * std::numbers::ln2, 1e-15);
  }
}

TEST(DualSoftmax, GlobalShiftInvariantAndNonPositive) {
  std::mt19937_64 rng(2);
  const MatrixD c = random_matrix<double>(6, 5, rng, 3.0);
  const auto p = dual_softmax(c);
  MatrixD shifted = c;
  for (auto& v : shifted.storage()) v += 17.25;
  EXPECT_LE(max_abs_diff(dual_softmax(shifted).log_p, p.log_p), 1e-12);
  for (const double v : p.log_p.storage()) EXPECT_LE(v, 0.0);
}

TEST(Sinkhorn, ZeroItersIsAnError) {
  EXPECT_THROW(sinkhorn(MatrixD(3, 3), 0), NumericError);
}

TEST(Sinkhorn, ColumnMarginalsExactRowsConverge) {
  std::mt19937_64 rng(3);
  const MatrixD ct = add_dustbin(random_matrix<double>(5, 4, rng), 0.3);
  const auto mg = SinkhornMarginals::standard(5, 4);
  const auto p = sinkhorn(ct, 200);
  for (std::size_t j = 0; j < 5; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < 6; ++i) s += std::exp(p.log_p(i, j));
    EXPECT_NEAR(s, std::exp(mg.log_nu[j]), 1e-9);
  }
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += std::exp(p.log_p(i, j));
    EXPECT_NEAR(s, std::exp(mg.log_mu[i]), 1e-6);
  }
}

TEST(Sinkhorn, SymmetricInputGivesSymmetricP) {
  std::mt19937_64 rng(4);
  MatrixD c = random_matrix<double>(6, 6, rng);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < i; ++j) c(i, j) = c(j, i);
  }
  const auto p = sinkhorn(add_dustbin(c, -0.5), 100);
  EXPECT_LE(max_abs_diff(p.log_p, transpose(p.log_p)), 1e-6);
}

TEST(Sinkhorn, NonFiniteNamesIteration) {
  MatrixD c(3, 3);
  c(1, 1) = NAN;
  try {
    sinkhorn(c, 5);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 1"), std::string::npos);
  }
}

MatchProbabilities<double> probs(const MatrixD& log_p) {
  return {log_p, log_p.rows() - 1, log_p.cols() - 1};
}

TEST(ExtractMatches, DominantDiagonal) {
  MatrixD lp(4, 4, -5.0);
  for (std::size_t i = 0; i < 3; ++i) lp(i, i) = -0.1;
  const MatchResult r = extract_matches(probs(lp), 0.2);
  ASSERT_EQ(r.pairs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.pairs[i].i, i);
    EXPECT_EQ(r.pairs[i].j, i);
    EXPECT_DOUBLE_EQ(r.pairs[i].score, std::exp(-0.1));
  }
  EXPECT_TRUE(r.unmatched_a.empty());
  EXPECT_TRUE(r.unmatched_b.empty());
}

TEST(ExtractMatches, DustbinPreferenceLeavesRowUnmatched) {
  MatrixD lp(3, 3, -5.0);
  lp(0, 0) = -0.5;
  lp(0, 2) = -0.1;  // row 0 prefers the dustbin
  lp(1, 1) = -0.1;
  const MatchResult r = extract_matches(probs(lp), 0.0);
  ASSERT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.pairs[0].i, 1u);
  EXPECT_EQ(r.unmatched_a, (std::vector<std::size_t>{0}));
  EXPECT_EQ(r.unmatched_b, (std::vector<std::size_t>{0}));
}

TEST(ExtractMatches, ThresholdDropsWeakPairs) {
  MatrixD lp(3, 3, -9.0);
  lp(0, 0) = std::log(0.5);
  lp(1, 1) = std::log(0.1);
  EXPECT_EQ(extract_matches(probs(lp), 0.2).pairs.size(), 1u);
  EXPECT_EQ(extract_matches(probs(lp), 0.0).pairs.size(), 2u);
}

TEST(ExtractMatches, MatchesBruteForceMutualArgmax) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const MatrixD lp = random_matrix<double>(5, 5, rng);  // 4x4 + dustbin
    std::set<std::pair<std::size_t, std::size_t>> oracle;
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        bool row_max = true, col_max = true;
        for (std::size_t jj = 0; jj < 5; ++jj) row_max &= lp(i, jj) <= lp(i, j);
        for (std::size_t ii = 0; ii < 5; ++ii) col_max &= lp(ii, j) <= lp(i, j);
        if (row_max && col_max) oracle.insert({i, j});
      }
    }
    std::set<std::pair<std::size_t, std::size_t>> got;
    for (const Match& m : extract_matches(probs(lp), 0.0).pairs) {
      got.insert({m.i, m.j});
    }
    EXPECT_EQ(got, oracle);
  }
}

TEST(ExtractMatches, AlwaysInjectiveAndBounded) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> dim(1, 12);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = dim(rng), m = dim(rng);
    // Coarse values force ties.
    MatrixD lp = random_matrix<double>(n + 1, m + 1, rng);
    for (auto& v : lp.storage()) v = std::round(v * 2.0) - 3.0;
    const MatchResult r = extract_matches(probs(lp), 0.0);
    std::set<std::size_t> is, js;
    for (const Match& x : r.pairs) {
      EXPECT_TRUE(is.insert(x.i).second);
      EXPECT_TRUE(js.insert(x.j).second);
    }
    EXPECT_LE(r.pairs.size(), std::min(n, m));
    EXPECT_EQ(r.pairs.size() + r.unmatched_a.size(), n);
    EXPECT_EQ(r.pairs.size() + r.unmatched_b.size(), m);
  }
}

// Loss = <R, head(C~)> checked against finite differences.
double check_head(bool use_sinkhorn) {
  std::mt19937_64 rng(use_sinkhorn ? 8 : 7);
  const MatrixD c = random_matrix<double>(4, 3, rng);
  const MatrixD r = random_matrix<double>(5, 4, rng);
  const double z = 0.4;
  auto head = [&](const MatrixD& ct, SinkhornCache<double>* cache) {
    return use_sinkhorn ? sinkhorn(ct, 10, nullptr, cache) : dual_softmax(ct);
  };
  auto loss = [&](std::span<const double> x) {
    const MatrixD cc(4, 3, std::vector<double>(x.begin(), x.end() - 1));
    const auto p = head(add_dustbin(cc, x.back()), nullptr);
    double s = 0;
    for (std::size_t i = 0; i < r.size(); ++i) s += p.log_p.data()[i] * r.data()[i];
    return s;
  };
  const MatrixD ct = add_dustbin(c, z);
  SinkhornCache<double> cache;
  const auto p = head(ct, &cache);
  const MatrixD dct = use_sinkhorn ? sinkhorn_backward(ct, cache, r)
                                   : dual_softmax_backward(p, ct, r);
  const auto [dc, dz] = add_dustbin_backward(dct);
  std::vector<double> x(c.storage()), g(dc.storage());
  x.push_back(z);
  g.push_back(dz);
  return grad_check(loss, x, g, 1e-5);
}

TEST(MatchHeads, DualSoftmaxBackwardMatchesFiniteDifferences) {
  EXPECT_LT(check_head(false), 1e-4);
}

TEST(MatchHeads, SinkhornBackwardMatchesFiniteDifferences) {
  EXPECT_LT(check_head(true), 1e-4);
}

}  // namespace
}  // namespace clustergnn
