#include <gtest/gtest.h>

#include <random>

#include "blockunfold/datagen.hpp"
#include "blockunfold/weights.hpp"
#include "test_util.hpp"

using namespace blockunfold;

namespace {

/// Residuals of [2DD^T, D_i; D_i^T, 0][B_i; L] = [0; I].
std::pair<double, double> kkt_residuals(const BlockDictionary& D, Index i, const KktSolution& s) {
  const Matrix G = 2.0 * D.data() * D.data().transpose();
  const double r1 = (G * s.block + D.block(i) * s.multiplier).norm();
  const double r2 = (D.block(i).transpose() * s.block - Matrix::Identity(D.d(), D.d())).norm();
  return {r1, r2};
}

/// Nearest point to P with P^T D_i = I for an orthonormal block D_i.
Matrix project_feasible(const Matrix& P, const Matrix& Di) {
  return P - Di * (Di.transpose() * P - Matrix::Identity(Di.cols(), Di.cols()));
}

}  // namespace

TEST(Kkt, OrthogonalSquareDictionaryReturnsItself) {
  const BlockDictionary D(testutil::random_orthogonal(6, 1), 6, 1, true);
  for (Index i = 0; i < 6; ++i) EXPECT_LT((solve_kkt_oracle(D, i).block - D.block(i)).norm(), 1e-10);
}

TEST(Kkt, SolutionSatisfiesBothRows) {
  const BlockDictionary D = testutil::random_orthonormal_blocks(12, 6, 2, 1);
  for (Index i = 0; i < 6; ++i) {
    const auto [r1, r2] = kkt_residuals(D, i, solve_kkt_oracle(D, i));
    EXPECT_LT(r1, 1e-8);
    EXPECT_LT(r2, 1e-8);
  }
}

TEST(Kkt, NoWorseThanDictionaryItself) {
  const BlockDictionary D = testutil::random_orthonormal_blocks(12, 6, 2, 2);
  const AnalyticWeights w = kkt_weights(D);
  EXPECT_LE((w.B.data().transpose() * D.data()).squaredNorm(), (D.data().transpose() * D.data()).squaredNorm() + 1e-10);
}

TEST(ClosedForm, MatchesKktOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const BlockDictionary D = testutil::random_orthonormal_blocks(8, 6, 2, 10 + seed);
    const AnalyticWeights cf = closed_form_weights(D);
    for (Index i = 0; i < D.n(); ++i)
      EXPECT_LT(testutil::rel_fro(Matrix(cf.B.block(i)), solve_kkt_oracle(D, i).block), 1e-8);
    EXPECT_LT(cf.feasibility_residual, 1e-8);
    EXPECT_NEAR(cf.cross_coherence, cross_block_coherence(cf.B, D), 1e-15);
  }
}

TEST(ClosedForm, LocallyOptimalUnderFeasiblePerturbations) {
  const BlockDictionary D = testutil::random_orthonormal_blocks(8, 6, 2, 3);
  const AnalyticWeights cf = closed_form_weights(D);
  const double best = (cf.B.data().transpose() * D.data()).squaredNorm();
  std::mt19937_64 eng(3);
  for (int t = 0; t < 100; ++t) {
    Matrix Bt = cf.B.data() + 1e-2 * testutil::gaussian(D.rows(), D.cols(), eng);
    for (Index i = 0; i < D.n(); ++i) Bt.middleCols(i * 2, 2) = project_feasible(Bt.middleCols(i * 2, 2), D.block(i));
    EXPECT_LE(best, (Bt.transpose() * D.data()).squaredNorm() * (1.0 + 1e-12));
  }
}

TEST(ClosedForm, RequiresOrthonormalBlocks) {
  EXPECT_THROW(closed_form_weights(BlockDictionary(Matrix::Random(6, 4), 2, 2)), Error);
}

TEST(SvdWeights, OrthogonalSquareDictionaryReturnsItself) {
  const Matrix Q = testutil::random_orthogonal(5, 4);
  EXPECT_LT((svd_weights_d1(BlockDictionary(Q, 5, 1, true)).B.data() - Q).norm(), 1e-10);
}

TEST(SvdWeights, FeasibleAndAgreesWithClosedFormObjective) {
  const BlockDictionary D(gen_gaussian_K(8, 16, 5), 16, 1, true);
  const AnalyticWeights s = svd_weights_d1(D);
  const AnalyticWeights c = closed_form_weights(D);
  EXPECT_LT(s.feasibility_residual, 1e-8);
  EXPECT_NEAR((s.B.data().transpose() * D.data()).squaredNorm(), (c.B.data().transpose() * D.data()).squaredNorm(), 1e-6);
}

TEST(SvdWeights, CrossCoherenceNotAboveMutualCoherence) {
  // holds on near-square Gaussian K; see the next test for wide ones
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Matrix K = gen_gaussian_K(28, 32, 100 + seed);
    const AnalyticWeights s = svd_weights_d1(BlockDictionary(K, 32, 1, true));
    EXPECT_LE(s.cross_coherence, mutual_coherence(K) + 1e-12) << "seed " << seed;
  }
}

TEST(SvdWeights, WideDictionariesCanExceedMutualCoherence) {
  // Frobenius optimality does not control the max entry; at 8 x 16 roughly half the draws exceed mu(K)
  int above = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Matrix K = gen_gaussian_K(8, 16, 100 + seed);
    above += svd_weights_d1(BlockDictionary(K, 16, 1, true)).cross_coherence > mutual_coherence(K) ? 1 : 0;
  }
  EXPECT_GT(above, 0);
  EXPECT_LT(above, 50);
}

TEST(SvdWeights, RejectsBlockWidthAboveOne) {
  EXPECT_THROW(svd_weights_d1(kron_lift({gen_gaussian_K(4, 6, 1), 2})), Error);
}

TEST(Kronecker, SingleChannelReturnsBase) {
  const MMVProblem P{gen_gaussian_K(6, 10, 7), 1};
  const AnalyticWeights base = closed_form_weights(BlockDictionary(P.K, 10, 1, true));
  EXPECT_EQ(kron_weights(P, base).B.data(), base.B.data());
}

TEST(Kronecker, MatchesLiftedClosedForm) {
  const MMVProblem P{gen_gaussian_K(6, 10, 8), 3};
  const AnalyticWeights base = closed_form_weights(BlockDictionary(P.K, 10, 1, true));
  const AnalyticWeights lifted = closed_form_weights(kron_lift(P));
  const AnalyticWeights kw = kron_weights(P, base);
  EXPECT_LT(testutil::rel_fro(kw.B.data(), lifted.B.data()), 1e-6);
  EXPECT_NEAR(cross_block_coherence(kw.B, kron_lift(P)), cross_coherence(base.B.data(), P.K) / 3.0, 1e-12);
}

TEST(Kronecker, RejectsInfeasibleBase) {
  const MMVProblem P{gen_gaussian_K(6, 10, 9), 2};
  AnalyticWeights base = closed_form_weights(BlockDictionary(P.K, 10, 1, true));
  base.B = BlockDictionary(2.0 * base.B.data(), 10, 1);
  EXPECT_THROW(kron_weights(P, base), Error);
}

TEST(Circulant, ImpulseKernelGivesImpulse) {
  Vector e = Vector::Zero(8);
  e(0) = 1.0;
  const AnalyticWeights w = circulant_weights_fft(e);
  EXPECT_LT((*w.kernel - e).norm(), 1e-14);
  EXPECT_LT((w.B.data() - Matrix::Identity(8, 8)).norm(), 1e-14);
}

TEST(Circulant, FullRankKernelInvertsAndSolvesKkt) {
  std::mt19937_64 eng(11);
  const Vector k = testutil::gaussian(16, 1, eng).col(0);
  const AnalyticWeights w = circulant_weights_fft(k);
  const Matrix K = circulant(k);
  EXPECT_EQ(w.rank, 16);
  EXPECT_LT((w.B.data().transpose() * K - Matrix::Identity(16, 16)).cwiseAbs().maxCoeff(), 1e-8);
  const MultiplierCheck mc = circulant_multipliers(K, w.B.data());
  EXPECT_LT(mc.spread(), 1e-10);
  EXPECT_LT(mc.max_residual, 1e-8);
  // lambda = -2 k^T K K^T b
  EXPECT_NEAR(mc.lambda[0], -2.0 * k.dot(K * K.transpose() * *w.kernel) / k.squaredNorm(), 1e-10);
}

TEST(Circulant, RankDeficientScaling) {
  std::mt19937_64 eng(12);
  std::vector<std::complex<double>> spec(16);
  std::normal_distribution<double> N;
  spec[0] = N(eng);
  spec[8] = N(eng);
  for (int j = 1; j < 8; ++j) spec[j] = {N(eng), N(eng)}, spec[16 - j] = std::conj(spec[j]);
  for (int j : {3, 5}) spec[j] = spec[16 - j] = 0.0;  // 4 of 16 bins removed
  const Vector k = ifft_real(spec);
  const CirculantSolution sol = circulant_kernel_weights(k);
  EXPECT_EQ(sol.rank, 12);
  EXPECT_NEAR(sol.unscaled.dot(k), 0.75, 1e-12);
  EXPECT_NEAR(sol.b.dot(k), 1.0, 1e-12);
}

TEST(Circulant, MatchesClosedFormForFullRank) {
  std::mt19937_64 eng(13);
  Vector k = testutil::gaussian(12, 1, eng).col(0);
  k.normalize();
  const AnalyticWeights fft_w = circulant_weights_fft(k);
  const AnalyticWeights cf = closed_form_weights(BlockDictionary(circulant(k), 12, 1, true));
  EXPECT_LT(testutil::rel_fro(fft_w.B.data(), cf.B.data()), 1e-6);
}

TEST(Circulant, ZeroKernelRejected) { EXPECT_THROW(circulant_weights_fft(Vector::Zero(8)), Error); }

TEST(Circulant, ConvolutionMatchesMatrix) {
  std::mt19937_64 eng(14);
  const Vector a = testutil::gaussian(9, 1, eng).col(0), b = testutil::gaussian(9, 1, eng).col(0);
  EXPECT_LT((circular_convolve(a, b) - circulant(a) * b).norm(), 1e-12);
}

TEST(Toeplitz, ScalarKernel) {
  const AnalyticWeights w = toeplitz_weights_extend(Vector::Constant(1, 2.5), 6);
  EXPECT_LT((w.B.data() - Matrix::Identity(6, 6) / 2.5).norm(), 1e-14);
  EXPECT_LT(w.feasibility_residual, 1e-15);
}

TEST(Toeplitz, CoherenceBoundedByCirculantExtension) {
  std::mt19937_64 eng(15);
  const Vector k = testutil::gaussian(4, 1, eng).col(0);
  const Index n = 16;
  const AnalyticWeights w = toeplitz_weights_extend(k, n);
  const Matrix K = toeplitz_matrix(k, n);
  Vector padded = Vector::Zero(K.rows());
  padded.head(4) = k;
  const Matrix Kc = circulant(padded);
  const Matrix Bc = circulant(circulant_kernel_weights(padded).b);
  Matrix Gc = (Bc.transpose() * Kc).cwiseAbs();
  Gc.diagonal().setZero();
  EXPECT_LT(Gc.maxCoeff(), 1e-10);
  EXPECT_LE(cross_coherence(w.B.data(), K), Gc.maxCoeff() + 1e-10);
  EXPECT_LT(((w.B.data().transpose() * K).diagonal().array() - 1.0).abs().maxCoeff(), 1e-8);
}

TEST(Toeplitz, SameModeIsCircularBoundary) {
  std::mt19937_64 eng(16);
  const Vector k = testutil::gaussian(3, 1, eng).col(0);
  Vector padded = Vector::Zero(10);
  padded.head(3) = k;
  EXPECT_EQ(toeplitz_matrix(k, 10, ToeplitzMode::Same), circulant(padded));
  EXPECT_LT(toeplitz_weights_extend(k, 10, ToeplitzMode::Same).feasibility_residual, 1e-8);
}

TEST(Toeplitz, RankDeficientExtensionRejected) {
  // (1, 1) padded to even length has a spectral zero at the Nyquist bin
  EXPECT_THROW(toeplitz_weights_extend(Vector::Ones(2), 5), Error);
}

TEST(UpperBound, OrthogonalSquareGivesN) {
  const Matrix Q = testutil::random_orthogonal(7, 2);
  const BlockDictionary D(Q, 7, 1, true);
  EXPECT_NEAR(upper_bound_objective(D, D).value, 7.0, 1e-12);
}

TEST(UpperBound, ChainAndImprovementOverD) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const BlockDictionary D = testutil::random_orthonormal_blocks(10, 6, 2, 200 + seed);
    const AnalyticWeights w = closed_form_weights(D);
    const UpperBoundReport r = upper_bound_objective(w.B, D);
    EXPECT_LE(r.max_spectral_sq, r.max_frobenius_sq + 1e-12);
    EXPECT_LE(r.max_frobenius_sq, r.value + 1e-12);
    EXPECT_LE(r.value, upper_bound_objective(D, D).value + 1e-10);
  }
}

TEST(AllMethods, FeasibleAndBelowBlockCoherence) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const MMVProblem P{gen_gaussian_K(28, 32, 300 + seed), 2};
    const BlockDictionary D = kron_lift(P);
    const BlockDictionary K1(P.K, 32, 1, true);
    const double mub = block_coherence(D);
    for (const AnalyticWeights& w : {kkt_weights(D), closed_form_weights(D), kron_weights(P, closed_form_weights(K1)),
                                      kron_weights(P, svd_weights_d1(K1))}) {
      EXPECT_LT(w.feasibility_residual, 1e-8);
      EXPECT_LE(cross_block_coherence(w.B, D), mub + 1e-8) << to_string(w.method);
    }
  }
}

TEST(WeightMethod, NamesRoundTrip) {
  for (auto m : {WeightMethod::KKT, WeightMethod::ClosedForm, WeightMethod::SVD_d1, WeightMethod::Kronecker,
                 WeightMethod::CirculantFFT, WeightMethod::ToeplitzExt})
    EXPECT_EQ(parse_weight_method(to_string(m)), m);
  EXPECT_THROW(parse_weight_method("cvx"), Error);
}
