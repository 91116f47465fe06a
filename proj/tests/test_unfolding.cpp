#include <gtest/gtest.h>

#include <random>

#include "blockunfold/datagen.hpp"
#include "blockunfold/unfolding.hpp"
#include "blockunfold/weights.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace blockunfold;
using namespace gradcheck;

TEST(Variant, NamesRoundTrip) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("lista"), Error);
}

TEST(Params, TrainableCounts) {
  const Toy t = toy(1);
  const Index K = 4, nx = t.D.cols(), ny = t.D.rows();
  EXPECT_EQ(trainable_parameter_count(init_from_bista(Variant::TiedLBISTA, t.D, K)), K + nx * nx + ny * nx);
  EXPECT_EQ(trainable_parameter_count(init_from_bista(Variant::TiedLBISTA_CP, t.D, K)), 2 * K + ny * nx);
  EXPECT_EQ(trainable_parameter_count(init_from_bista(Variant::UntiedLBISTA, t.D, K)), K * (1 + nx * nx + ny * nx));
  EXPECT_EQ(trainable_parameter_count(init_from_bista(Variant::UntiedLBISTA_CP, t.D, K)), K * (1 + ny * nx));
  EXPECT_EQ(trainable_parameter_count(init_from_bista(Variant::ALBISTA, t.D, K, t.Bt)), 2 * K);
}

TEST(Params, ValidateCatchesShapes) {
  const Toy t = toy(2);
  NetworkParams p = init_from_bista(Variant::UntiedLBISTA, t.D, 3);
  EXPECT_NO_THROW(p.validate());
  p.S.pop_back();
  EXPECT_THROW(p.validate(), Error);
  EXPECT_THROW(init_from_bista(Variant::ALBISTA, t.D, 3), Error);
}

TEST(Forward, ZeroLayersReturnsInitialState) {
  const Toy t = toy(3);
  const ForwardPass f = forward(init_from_bista(Variant::ALBISTA, t.D, 0, t.Bt), t.Y, 0);
  ASSERT_EQ(f.x.size(), 1u);
  EXPECT_EQ(f.output().norm(), 0.0);
}

TEST(Forward, WrongMeasurementLengthRejected) {
  const Toy t = toy(4);
  EXPECT_THROW(forward(init_from_bista(Variant::ALBISTA, t.D, 2, t.Bt), Matrix::Zero(3, 1), 2), Error);
}

TEST(Forward, NonFiniteReportsLayer) {
  const Toy t = toy(5);
  NetworkParams p = init_from_bista(Variant::TiedLBISTA_CP, t.D, 3);
  p.gamma[1] = std::numeric_limits<double>::infinity();
  try {
    forward(p, t.Y, 3);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.iteration(), 2);
  }
}

TEST(Forward, AllVariantsAgreeAtBistaInit) {
  const Toy t = toy(6);
  const Matrix ref = forward(init_from_bista(Variant::TiedLBISTA, t.D, 6), t.Y, 6).output();
  for (Variant v : {Variant::TiedLBISTA_CP, Variant::UntiedLBISTA, Variant::UntiedLBISTA_CP})
    EXPECT_LT((forward(init_from_bista(v, t.D, 6), t.Y, 6).output() - ref).norm(), 1e-12) << to_string(v);
}

TEST(Forward, TiedAndUntiedCoincideForEqualLayers) {
  const Toy t = toy(7);
  std::mt19937_64 eng(7);
  const NetworkParams tied = random_params(Variant::TiedLBISTA, t, 4, eng);
  NetworkParams un = init_from_bista(Variant::UntiedLBISTA, t.D, 4);
  un.alpha = tied.alpha;
  un.S.assign(4, tied.S[0]);
  un.B.assign(4, tied.B[0]);
  EXPECT_EQ(forward(tied, t.Y, 4).output(), forward(un, t.Y, 4).output());
}

TEST(Forward, CpAndSFormsAgree) {
  // x - g B^T(Dx - y) = (I - g B^T D) x + (g B)^T y
  const Toy t = toy(8);
  std::mt19937_64 eng(8);
  const NetworkParams cp = random_params(Variant::UntiedLBISTA_CP, t, 3, eng);
  NetworkParams s = init_from_bista(Variant::UntiedLBISTA, t.D, 3);
  s.alpha = cp.alpha;
  for (size_t k = 0; k < 3; ++k) {
    s.S[k] = Matrix::Identity(t.D.cols(), t.D.cols()) - cp.gamma[k] * cp.B[k].transpose() * t.D.data();
    s.B[k] = cp.gamma[k] * cp.B[k];
  }
  EXPECT_LT((forward(cp, t.Y, 3).output() - forward(s, t.Y, 3).output()).norm(), 1e-12);
}

TEST(Forward, RangeResumesFromPrefix) {
  const Toy t = toy(9);
  std::mt19937_64 eng(9);
  const NetworkParams p = random_params(Variant::ALBISTA, t, 5, eng);
  const Matrix mid = forward(p, t.Y, 2).output();
  EXPECT_EQ(forward_range(p, t.Y, mid, 2, 5).output(), forward(p, t.Y, 5).output());
}

TEST(Gradient, EveryVariantMatchesFiniteDifferences) {
  for (Variant v : kAllVariants) {
    int checked = 0;
    for (std::uint64_t seed = 0; checked < 20 && seed < 200; ++seed) {
      const Toy t = toy(500 + seed);
      std::mt19937_64 eng(seed);
      const NetworkParams p = random_params(v, t, 3, eng);
      if (min_kink_margin(p, t, 3) < kKinkMargin) continue;
      EXPECT_LT(gradient_check(p, t, 3, std::nullopt), 1e-5) << to_string(v) << " seed " << seed;
      ++checked;
    }
    EXPECT_EQ(checked, 20) << to_string(v);
  }
}

TEST(Gradient, SingleLayerRestrictionMatchesFiniteDifferences) {
  for (Variant v : kAllVariants) {
    const Toy t = toy(42);
    std::mt19937_64 eng(42);
    const NetworkParams p = random_params(v, t, 3, eng);
    ASSERT_GT(min_kink_margin(p, t, 3), kKinkMargin);
    for (Index k = 0; k < 3; ++k) EXPECT_LT(gradient_check(p, t, 3, k), 1e-5) << to_string(v) << " layer " << k;
  }
}

TEST(Gradient, RestrictedLayerLeavesOthersZero) {
  const Toy t = toy(43);
  std::mt19937_64 eng(43);
  const NetworkParams p = random_params(Variant::UntiedLBISTA_CP, t, 3, eng);
  const Gradients g = backward(p, t.Y, t.X, forward(p, t.Y, 3), Index{1});
  EXPECT_EQ(g.alpha[0], 0.0);
  EXPECT_EQ(g.alpha[2], 0.0);
  EXPECT_EQ(g.B[0].norm(), 0.0);
  EXPECT_EQ(g.B[2].norm(), 0.0);
  EXPECT_NE(g.B[1].norm(), 0.0);
}

TEST(Gradient, PartialPassMatchesFullPassForLastLayer) {
  const Toy t = toy(44);
  std::mt19937_64 eng(44);
  const NetworkParams p = random_params(Variant::ALBISTA, t, 4, eng);
  const Gradients full = backward(p, t.Y, t.X, forward(p, t.Y, 4), Index{3});
  const ForwardPass tail = forward_range(p, t.Y, forward(p, t.Y, 3).output(), 3, 4);
  const Gradients part = backward(p, t.Y, t.X, tail, Index{3});
  EXPECT_NEAR(full.alpha[3], part.alpha[3], 1e-12);
  EXPECT_NEAR(full.gamma[3], part.gamma[3], 1e-12);
}

TEST(ConvForm, DenseConvAndFftAgree) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 eng(seed);
    const Index n = 16;
    const Vector k = testutil::gaussian(n, 1, eng).col(0);
    const Vector x = testutil::gaussian(n, 1, eng).col(0);
    const Vector y = testutil::gaussian(n, 1, eng).col(0);
    const Vector b = circulant_kernel_weights(k).b;
    const double gamma = 0.3 + 0.05 * static_cast<double>(seed);
    // circ(b)^T plays B^T: back-projection kernel is the adjoint of b
    const Matrix Kc = circulant(k), Bc = circulant(b);
    const Vector dense = x - gamma * Bc.transpose() * (Kc * x - y);
    const Vector bt = adjoint_kernel(b);
    const Vector conv = apply_conv_layer(conv_layer_form(bt, k, gamma), bt, gamma, x, y);
    const Vector spec = conv_layer_fft_step(bt, k, gamma, x, y);
    EXPECT_LT((dense - conv).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((dense - spec).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(ConvForm, AdjointKernelTransposes) {
  std::mt19937_64 eng(3);
  const Vector b = testutil::gaussian(7, 1, eng).col(0);
  EXPECT_EQ(circulant(adjoint_kernel(b)), Matrix(circulant(b).transpose()));
}

TEST(ConvForm, LengthMismatchRejected) {
  EXPECT_THROW(conv_layer_form(Vector::Zero(4), Vector::Zero(5), 1.0), Error);
}
