#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "blockcore.hpp"
#include "weights.hpp"

namespace blockunfold {

enum class Scenario { Gaussian, CirculantRankDeficient };

inline std::string to_string(Scenario s) { return s == Scenario::Gaussian ? "gaussian" : "circulant"; }

inline Scenario parse_scenario(const std::string& s) {
  if (s == "gaussian") return Scenario::Gaussian;
  if (s == "circulant") return Scenario::CirculantRankDeficient;
  throw Error("unknown scenario '" + s + "' (expected gaussian or circulant)");
}

struct ScenarioConfig {
  Index m = 32;
  Index n = 128;
  Index d = 15;
  double pnz = 0.1;
  double snr_db = std::numeric_limits<double>::infinity();
  Scenario scenario = Scenario::Gaussian;
  Index rank = 32;  // circulant only; m = n there
  std::uint64_t seed = 0;

  void validate() const {
    if (m < 1 || n < 1 || d < 1) throw Error("ScenarioConfig: m, n, d must be >= 1");
    if (!(pnz >= 0.0 && pnz <= 1.0)) throw Error("ScenarioConfig: pnz must lie in [0, 1]");
    if (std::isnan(snr_db)) throw Error("ScenarioConfig: snr_db is NaN");
    if (scenario == Scenario::CirculantRankDeficient) {
      if (rank < 1 || rank > n) throw Error("ScenarioConfig: circulant rank must lie in [1, n]");
      if (m != n) throw Error("ScenarioConfig: circulant scenario requires m = n");
    }
  }
};

/// Independent random streams derived from one user seed.
namespace stream {
inline constexpr std::uint64_t kMatrix = 1;
inline constexpr std::uint64_t kTrain = 2;
inline constexpr std::uint64_t kValidation = 3;
inline constexpr std::uint64_t kTest = 4;
inline constexpr std::uint64_t kVerify = 5;
inline constexpr std::uint64_t kBatches = 6;
}  // namespace stream

/// Engine for (seed, stream, index); the counter-based seeding keeps every sample reproducible on its own.
inline std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t index = 0) {
  auto split = [](std::uint64_t v) {
    return std::array<std::uint32_t, 2>{static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(v >> 32)};
  };
  std::vector<std::uint32_t> words;
  for (std::uint64_t v : {seed, stream_id, index})
    for (std::uint32_t w : split(v)) words.push_back(w);
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

/// m x n matrix with iid N(0,1) entries and unit-norm columns.
inline Matrix gen_gaussian_K(Index m, Index n, std::uint64_t seed) {
  if (m < 1 || n < 1) throw Error("gen_gaussian_K: m, n must be >= 1");
  auto eng = make_engine(seed, stream::kMatrix);
  std::normal_distribution<double> N01;
  Matrix K(m, n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < m; ++i) K(i, j) = N01(eng);
    const double norm = K.col(j).norm();
    if (norm == 0.0) throw Error("gen_gaussian_K: drew a zero column");
    K.col(j) /= norm;
  }
  return K;
}

struct CirculantDraw {
  Vector k;     // unit-norm kernel, K = circ(k)
  Matrix K;
  Index rank = 0;                                 // number of nonzero spectrum bins
  std::vector<std::complex<double>> spectrum;     // FFT of the unnormalized kernel
};

/// Random real unit-norm kernel whose Hermitian spectrum keeps exactly r bins: uniformly
/// chosen conjugate pairs plus the DC bin for odd r, or DC and Nyquist for even r and even n.
/// DC is dropped only when no other single bin can balance the parity (even r, odd n).
inline CirculantDraw gen_circulant_K(Index n, Index r, std::uint64_t seed) {
  if (n < 1 || r < 1 || r > n) throw Error("gen_circulant_K: need 1 <= r <= n");
  auto eng = make_engine(seed, stream::kMatrix);
  std::normal_distribution<double> N01;
  const bool has_nyquist = n % 2 == 0;
  const Index pairs = (n - 1) / 2;

  bool keep_dc = false;
  bool keep_nyquist = false;
  Index keep_pairs = r / 2;
  if (r % 2 == 1) {
    keep_dc = true;
  } else if (has_nyquist) {
    keep_dc = keep_nyquist = true;
    keep_pairs = (r - 2) / 2;
  }

  std::vector<Index> order(static_cast<size_t>(pairs));
  for (Index j = 0; j < pairs; ++j) order[static_cast<size_t>(j)] = j + 1;
  std::shuffle(order.begin(), order.end(), eng);

  std::vector<std::complex<double>> spec(static_cast<size_t>(n), {0.0, 0.0});
  if (keep_dc) spec[0] = N01(eng);
  if (keep_nyquist) spec[static_cast<size_t>(n / 2)] = N01(eng);
  std::vector<Index> chosen(order.begin(), order.begin() + keep_pairs);
  std::sort(chosen.begin(), chosen.end());
  for (Index j : chosen) {
    const double re = N01(eng);
    const double im = N01(eng);
    spec[static_cast<size_t>(j)] = {re, im};
    spec[static_cast<size_t>(n - j)] = {re, -im};
  }
  const Index achieved = (keep_dc ? 1 : 0) + (keep_nyquist ? 1 : 0) + 2 * keep_pairs;
  if (achieved != r) throw Error("gen_circulant_K: internal rank bookkeeping mismatch");

  Vector k = ifft_real(spec);
  const double norm = k.norm();
  if (norm == 0.0) throw Error("gen_circulant_K: zero kernel");
  CirculantDraw out;
  out.k = k / norm;
  out.K = circulant(out.k);
  out.rank = achieved;
  out.spectrum = std::move(spec);
  return out;
}

/// Measurement problem of a scenario (K drawn from the matrix stream).
inline MMVProblem make_problem(const ScenarioConfig& cfg, Vector* kernel = nullptr) {
  cfg.validate();
  MMVProblem p;
  p.d = cfg.d;
  if (cfg.scenario == Scenario::Gaussian) {
    p.K = gen_gaussian_K(cfg.m, cfg.n, cfg.seed);
    p.kind = MatrixKind::Gaussian;
  } else {
    CirculantDraw draw = gen_circulant_K(cfg.n, cfg.rank, cfg.seed);
    p.K = std::move(draw.K);
    p.kind = MatrixKind::Circulant;
    if (kernel) *kernel = std::move(draw.k);
  }
  return p;
}

/// Column-stacked samples: X is n_x x N, Y is n_y x N.
struct Dataset {
  Matrix X;
  Matrix Y;

  Index size() const { return X.cols(); }

  std::vector<std::pair<BlockVector, Vector>> samples(BlockShape shape) const {
    std::vector<std::pair<BlockVector, Vector>> out;
    for (Index c = 0; c < X.cols(); ++c) out.emplace_back(BlockVector(Vector(X.col(c)), shape), Vector(Y.col(c)));
    return out;
  }
};

/// sigma^2 = pnz n_x / n_y 10^(-SNR/10); zero for SNR = +inf.
inline double noise_variance(const ScenarioConfig& cfg) {
  if (std::isinf(cfg.snr_db) && cfg.snr_db > 0) return 0.0;
  return cfg.pnz * static_cast<double>(cfg.n * cfg.d) / static_cast<double>(cfg.m * cfg.d) *
         std::pow(10.0, -cfg.snr_db / 10.0);
}

namespace detail {

inline void draw_sample(const ScenarioConfig& cfg, const Matrix& D, std::mt19937_64& eng, Eigen::Ref<Vector> x,
                        Eigen::Ref<Vector> y) {
  std::normal_distribution<double> N01;
  std::bernoulli_distribution active(cfg.pnz);
  x.setZero();
  for (Index i = 0; i < cfg.n; ++i)
    if (active(eng))
      for (Index j = 0; j < cfg.d; ++j) x(i * cfg.d + j) = N01(eng);
  y.noalias() = D * x;
  const double var = noise_variance(cfg);
  if (var > 0.0) {
    const double sd = std::sqrt(var);
    for (Index j = 0; j < y.size(); ++j) y(j) += sd * N01(eng);
  }
}

}  // namespace detail

/// `count` samples of the scenario signal model measured through D (n_y x n_x).
inline Dataset gen_signals(const ScenarioConfig& cfg, const Matrix& D, Index count, std::uint64_t stream_id) {
  cfg.validate();
  if (count < 0) throw Error("gen_signals: count must be >= 0");
  if (D.rows() != cfg.m * cfg.d || D.cols() != cfg.n * cfg.d) throw Error("gen_signals: D does not match scenario");
  Dataset ds{Matrix(D.cols(), count), Matrix(D.rows(), count)};
  for (Index c = 0; c < count; ++c) {
    auto eng = make_engine(cfg.seed, stream_id, static_cast<std::uint64_t>(c));
    detail::draw_sample(cfg, D, eng, ds.X.col(c), ds.Y.col(c));
  }
  return ds;
}

inline constexpr Index kMaxRejections = 10000;

/// Samples restricted to X_b(M, s, sigma): redraws each sample until it has at most s active
/// blocks, all block norms at most M and noise norm at most sigma.
inline Dataset gen_in_class(const ScenarioConfig& cfg, const Matrix& D, const SignalClass& cls, Index count,
                            std::uint64_t stream_id) {
  cfg.validate();
  if (count < 0) throw Error("gen_in_class: count must be >= 0");
  Dataset ds{Matrix(D.cols(), count), Matrix(D.rows(), count)};
  const BlockShape shape{cfg.n, cfg.d};
  for (Index c = 0; c < count; ++c) {
    auto eng = make_engine(cfg.seed, stream_id, static_cast<std::uint64_t>(c));
    Index attempt = 0;
    for (;; ++attempt) {
      if (attempt >= kMaxRejections)
        throw Error("gen_in_class: no in-class sample after " + std::to_string(kMaxRejections) + " attempts");
      detail::draw_sample(cfg, D, eng, ds.X.col(c), ds.Y.col(c));
      const BlockVector x(Vector(ds.X.col(c)), shape);
      const auto norms = block_norms(x);
      const double noise = (ds.Y.col(c) - D * ds.X.col(c)).norm();
      if (l20_norm(x, 0.0) <= cls.s && *std::max_element(norms.begin(), norms.end()) <= cls.M && noise <= cls.sigma)
        break;
    }
  }
  return ds;
}

}  // namespace blockunfold
