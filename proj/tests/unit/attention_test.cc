#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "clustergnn/attention.h"
#include "clustergnn/grad_check.h"
#include "clustergnn/kernels.h"
#include "test_util.h"

namespace clustergnn {
namespace {

using testing::random_matrix;

TEST(Attention, SingleSourceBroadcastsItsValue) {
  std::mt19937_64 rng(1);
  const auto w = AttentionWeights<float>::init(8, 2, rng);
  const MatrixF tgt = random_matrix<float>(5, 8, rng);
  const MatrixF src = random_matrix<float>(1, 8, rng);
  const MatrixF msg = attention(tgt, src, w);
  const MatrixF expect = w.merge.forward(w.value.forward(src));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(msg(i, j), expect(0, j), 1e-6);
  }
}

TEST(Attention, DuplicatedSourceRowsDoNotMatter) {
  std::mt19937_64 rng(2);
  const auto w = AttentionWeights<float>::init(8, 4, rng);
  const MatrixF tgt = random_matrix<float>(4, 8, rng);
  const MatrixF row = random_matrix<float>(1, 8, rng);
  const MatrixF once = attention(tgt, row, w);
  MatrixF many = row;
  for (int copies = 2; copies <= 7; ++copies) {
    many = concat_rows(many, row);
    EXPECT_LE(max_abs_diff(attention(tgt, many, w), once), 1e-6);
  }
}

TEST(Attention, HandComputedThreeByThree) {
  std::mt19937_64 rng(3);
  auto w = AttentionWeights<double>::init(3, 1, rng);
  const MatrixD eye{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  w.query.weight = eye;
  w.query.bias = MatrixD(1, 3);
  w.key.weight = MatrixD{{2, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  w.value.weight = MatrixD{{1, 1, 0}, {0, 1, 0}, {0, 0, 1}};
  w.merge.weight = eye;
  const MatrixD tgt{{1, 0, 0}, {0, 1, 0}, {0.5, 0.5, 0.5}};
  const MatrixD src{{0, 1, 2}, {1, 0, 0}, {-1, 1, 0}};
  // Step by step in long double.
  long double k[3][3], v[3][3];
  for (int j = 0; j < 3; ++j) {
    k[j][0] = 2.0L * src(j, 0);
    k[j][1] = src(j, 1);
    k[j][2] = src(j, 2);
    v[j][0] = src(j, 0);
    v[j][1] = src(j, 0) + src(j, 1);
    v[j][2] = src(j, 2);
  }
  const MatrixD msg = attention(tgt, src, w);
  for (int i = 0; i < 3; ++i) {
    long double s[3], mx = -1e30L, z = 0.0L;
    for (int j = 0; j < 3; ++j) {
      s[j] = (tgt(i, 0) * k[j][0] + tgt(i, 1) * k[j][1] + tgt(i, 2) * k[j][2]) /
             std::sqrt(3.0L);
      mx = std::max(mx, s[j]);
    }
    for (int j = 0; j < 3; ++j) z += std::exp(s[j] - mx);
    for (int c = 0; c < 3; ++c) {
      long double o = 0.0L;
      for (int j = 0; j < 3; ++j) o += std::exp(s[j] - mx) / z * v[j][c];
      EXPECT_NEAR(msg(i, c), static_cast<double>(o), 1e-12);
    }
  }
}

TEST(Attention, EmptySourceIsAnError) {
  std::mt19937_64 rng(4);
  const auto w = AttentionWeights<float>::init(8, 2, rng);
  EXPECT_THROW(attention(random_matrix<float>(3, 8, rng), MatrixF(0, 8), w),
               NumericError);
}

TEST(GnnLayer, ZeroedUpdateIsResidualIdentity) {
  std::mt19937_64 rng(5);
  auto w = AttentionWeights<float>::init(8, 2, rng);
  w.mlp.zero_output();
  const MatrixF tgt = random_matrix<float>(6, 8, rng);
  EXPECT_EQ(gnn_layer(tgt, random_matrix<float>(4, 8, rng), w), tgt);
}

TEST(GnnLayer, SelfAttentionIsCrossAttentionWithItself) {
  std::mt19937_64 rng(6);
  const auto w = AttentionWeights<float>::init(8, 2, rng);
  const MatrixF f = random_matrix<float>(6, 8, rng);
  const MatrixF copy = f;
  EXPECT_EQ(gnn_layer(f, f, w), gnn_layer(f, copy, w));
}

TEST(GnnLayer, OutputShapeFollowsTarget) {
  std::mt19937_64 rng(7);
  const auto w = AttentionWeights<float>::init(8, 4, rng);
  const MatrixF y = gnn_layer(random_matrix<float>(7, 8, rng),
                              random_matrix<float>(5, 8, rng), w);
  EXPECT_EQ(y.rows(), 7u);
  EXPECT_EQ(y.cols(), 8u);
}

TEST(GnnLayer, ChunkedQueriesMatchUnchunked) {
  std::mt19937_64 rng(8);
  const auto w = AttentionWeights<float>::init(16, 4, rng);
  const MatrixF tgt = random_matrix<float>(37, 16, rng);
  const MatrixF src = random_matrix<float>(29, 16, rng);
  EXPECT_LE(max_abs_diff(gnn_layer<float>(tgt, src, w, nullptr, 1),
                         gnn_layer<float>(tgt, src, w, nullptr, 4)),
            1e-6);
}

// Loss = <R, layer(tgt, src)> for a fixed random R.
TEST(GnnLayer, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  auto w = AttentionWeights<double>::init(8, 2, rng);
  // Move norms away from their identity init so every path is exercised.
  w.visit("", [&](const std::string&, MatrixD& m) {
    for (auto& v : m.storage()) v += 0.1 * std::normal_distribution<double>()(rng);
  });
  MatrixD tgt = random_matrix<double>(5, 8, rng);
  MatrixD src = random_matrix<double>(6, 8, rng);
  const MatrixD r = random_matrix<double>(5, 8, rng);
  auto loss = [&] {
    const MatrixD y = gnn_layer(tgt, src, w);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * r.data()[i];
    return s;
  };
  GnnLayerCache<double> cache;
  gnn_layer(tgt, src, w, &cache);
  AttentionWeights<double> grad = w;
  grad.visit("", [](const std::string&, MatrixD& m) { m.set_zero(); });
  MatrixD dtgt(5, 8), dsrc(6, 8);
  gnn_layer_backward(tgt, src, w, cache, r, grad, dtgt, dsrc);

  auto check = [&](MatrixD& x, const MatrixD& g) {
    const std::vector<double> x0(x.storage().begin(), x.storage().end());
    const double err = grad_check(
        [&](std::span<const double> v) {
          std::copy(v.begin(), v.end(), x.storage().begin());
          const double l = loss();
          std::copy(x0.begin(), x0.end(), x.storage().begin());
          return l;
        },
        x0, std::vector<double>(g.storage().begin(), g.storage().end()), 1e-5);
    return err;
  };
  EXPECT_LT(check(tgt, dtgt), 1e-4);
  EXPECT_LT(check(src, dsrc), 1e-4);
  std::vector<MatrixD*> params, grads;
  w.visit("", [&](const std::string&, MatrixD& m) { params.push_back(&m); });
  grad.visit("", [&](const std::string&, MatrixD& m) { grads.push_back(&m); });
  for (std::size_t p = 0; p < params.size(); ++p) {
    EXPECT_LT(check(*params[p], *grads[p]), 1e-4) << "parameter " << p;
  }
}

}  // namespace
}  // namespace clustergnn
