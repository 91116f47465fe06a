#include <gtest/gtest.h>

#include <random>

#include "blockunfold/operators.hpp"
#include "test_util.hpp"

using namespace blockunfold;

namespace {

BlockVector random_block_vector(Index n, Index d, std::mt19937_64& eng) {
  return BlockVector(testutil::gaussian(n * d, 1, eng).col(0), n, d);
}

}  // namespace

TEST(SoftThreshold, ZeroAlphaIsIdentity) {
  std::mt19937_64 eng(1);
  const BlockVector z = random_block_vector(5, 3, eng);
  EXPECT_EQ(block_soft_threshold(z, 0.0).output.data(), z.data());
}

TEST(SoftThreshold, ShrinksActiveBlock) {
  const auto r = block_soft_threshold(BlockVector(Vector{{1.2, 1.6}}, 1, 2), 0.5);
  EXPECT_NEAR(r.output.data()(0), 0.9, 1e-15);
  EXPECT_NEAR(r.output.data()(1), 1.2, 1e-15);
  EXPECT_TRUE(r.active[0]);
  EXPECT_DOUBLE_EQ(r.block_norms[0], 2.0);
}

TEST(SoftThreshold, KillsSubThresholdBlock) {
  const auto r = block_soft_threshold(BlockVector(Vector{{0.24, 0.32}}, 1, 2), 0.5);
  EXPECT_EQ(r.output.data().norm(), 0.0);
  EXPECT_FALSE(r.active[0]);
}

TEST(SoftThreshold, ZeroBlockStaysZero) {
  EXPECT_EQ(block_soft_threshold(BlockVector::zeros({2, 2}), 0.0).output.data().norm(), 0.0);
}

TEST(SoftThreshold, NegativeAlphaRejected) {
  EXPECT_THROW(block_soft_threshold(BlockVector::zeros({1, 1}), -1e-3), Error);
}

TEST(SoftThreshold, NonExpansive) {
  std::mt19937_64 eng(2);
  std::uniform_real_distribution<double> U(0.0, 3.0);
  for (int t = 0; t < 200; ++t) {
    const BlockVector a = random_block_vector(6, 2, eng);
    const BlockVector b = random_block_vector(6, 2, eng);
    const double alpha = U(eng);
    const double lhs = (block_soft_threshold(a, alpha).output.data() - block_soft_threshold(b, alpha).output.data()).norm();
    EXPECT_LE(lhs, (a.data() - b.data()).norm() + 1e-14);
  }
}

TEST(SoftThreshold, IsProximalMapOnGrid) {
  // minimize 1/2 (u - z)^2 + alpha |u| per coordinate for d = 1, n = 2 by dense grid search
  std::mt19937_64 eng(3);
  for (int t = 0; t < 10; ++t) {
    const BlockVector z = random_block_vector(2, 1, eng);
    const double alpha = 0.3 + 0.1 * t;
    Vector best(2);
    double best_val = std::numeric_limits<double>::infinity();
    for (int i = -400; i <= 400; ++i)
      for (int j = -400; j <= 400; ++j) {
        const double u0 = i * 0.01, u1 = j * 0.01;
        const double v = 0.5 * ((u0 - z.data()(0)) * (u0 - z.data()(0)) + (u1 - z.data()(1)) * (u1 - z.data()(1))) +
                         alpha * (std::abs(u0) + std::abs(u1));
        if (v < best_val) best_val = v, best = Vector{{u0, u1}};
      }
    EXPECT_LT((block_soft_threshold(z, alpha).output.data() - best).cwiseAbs().maxCoeff(), 0.0051);
  }
}

TEST(Jacobian, ZeroAlphaIsIdentity) {
  std::mt19937_64 eng(4);
  const BlockVector z = random_block_vector(4, 3, eng);
  const BlockVector v = random_block_vector(4, 3, eng);
  EXPECT_LT((threshold_jvp(z, 0.0, v).data() - v.data()).norm(), 1e-14);
}

TEST(Jacobian, InactiveBlockHasZeroOutput) {
  const BlockVector z(Vector{{0.1, 0.1, 3.0, 0.0}}, 2, 2);
  const BlockVector v(Vector{{1.0, 1.0, 1.0, 1.0}}, 2, 2);
  const BlockVector out = threshold_jvp(z, 0.5, v);
  EXPECT_EQ(out.block(0).norm(), 0.0);
  EXPECT_GT(out.block(1).norm(), 0.0);
}

TEST(Jacobian, MatchesCentralDifferences) {
  std::mt19937_64 eng(5);
  const double h = 1e-6;
  int checked = 0;
  for (int t = 0; t < 30; ++t) {
    const BlockVector z = random_block_vector(5, 3, eng);
    const BlockVector v = random_block_vector(5, 3, eng);
    const double alpha = 0.8;
    bool near_kink = false;
    for (double r : block_norms(z)) near_kink |= std::abs(r - alpha) < 1e-3;
    if (near_kink) continue;
    const Vector fd = (block_soft_threshold(BlockVector(z.data() + h * v.data(), z.shape()), alpha).output.data() -
                       block_soft_threshold(BlockVector(z.data() - h * v.data(), z.shape()), alpha).output.data()) /
                      (2 * h);
    const Vector an = threshold_jvp(z, alpha, v).data();
    EXPECT_LT((fd - an).norm() / std::max(an.norm(), 1e-12), 1e-5);
    EXPECT_EQ(threshold_vjp(z, alpha, v).data(), an);
    // alpha derivative
    const double fda = (block_soft_threshold(z, alpha + h).output.data() - block_soft_threshold(z, alpha - h).output.data())
                           .dot(v.data()) / (2 * h);
    EXPECT_NEAR(threshold_alpha_pairing(z, alpha, v), fda, 1e-5 * std::max(1.0, std::abs(fda)));
    ++checked;
  }
  EXPECT_GT(checked, 10);
}

TEST(Onsager, ZeroInputGivesZero) { EXPECT_EQ(onsager_trace(BlockVector::zeros({4, 2}), 0.3, 5), 0.0); }

TEST(Onsager, ZeroAlphaGivesDimensionRatio) {
  std::mt19937_64 eng(6);
  EXPECT_NEAR(onsager_trace(random_block_vector(6, 3, eng), 0.0, 9), 18.0 / 9.0, 1e-15);
}

TEST(Onsager, ScalarBlocksContributeOne) {
  const BlockVector z(Vector{{2.0, -3.0, 0.1}}, 3, 1);
  EXPECT_DOUBLE_EQ(onsager_trace(z, 0.5, 1), 2.0);
}

TEST(Onsager, MatchesNumericalDivergence) {
  std::mt19937_64 eng(7);
  const double eps = 1e-6;
  for (int t = 0; t < 20; ++t) {
    const BlockVector z = random_block_vector(8, 3, eng);
    const double alpha = 1.0;
    const Index n_y = 11;
    double div = 0.0;
    for (Index j = 0; j < z.size(); ++j) {
      Vector p = z.data(), m = z.data();
      p(j) += eps;
      m(j) -= eps;
      div += (block_soft_threshold(BlockVector(p, z.shape()), alpha).output.data()(j) -
              block_soft_threshold(BlockVector(m, z.shape()), alpha).output.data()(j)) / (2 * eps);
    }
    div /= static_cast<double>(n_y);
    const double an = onsager_trace(z, alpha, n_y);
    EXPECT_NEAR(an, div, 1e-5 * std::max(1.0, std::abs(div)));
  }
}

TEST(BatchedShrink, MatchesPerColumnThreshold) {
  std::mt19937_64 eng(8);
  const Matrix Z = testutil::gaussian(12, 5, eng);
  const Matrix X = detail::shrink_columns(Z, {4, 3}, 0.7);
  for (Index c = 0; c < 5; ++c)
    EXPECT_EQ(Vector(X.col(c)), block_soft_threshold(BlockVector(Vector(Z.col(c)), 4, 3), 0.7).output.data());
}
