#pragma once

#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "blockcore.hpp"

namespace blockunfold {

enum class WeightMethod { KKT, ClosedForm, SVD_d1, Kronecker, CirculantFFT, ToeplitzExt };

inline std::string to_string(WeightMethod m) {
  switch (m) {
    case WeightMethod::KKT: return "kkt";
    case WeightMethod::ClosedForm: return "closed_form";
    case WeightMethod::SVD_d1: return "svd_d1";
    case WeightMethod::Kronecker: return "kronecker";
    case WeightMethod::CirculantFFT: return "circulant_fft";
    case WeightMethod::ToeplitzExt: return "toeplitz_ext";
  }
  return "unknown";
}

inline WeightMethod parse_weight_method(const std::string& s) {
  for (auto m : {WeightMethod::KKT, WeightMethod::ClosedForm, WeightMethod::SVD_d1, WeightMethod::Kronecker,
                 WeightMethod::CirculantFFT, WeightMethod::ToeplitzExt})
    if (to_string(m) == s) return m;
  throw Error("unknown weight method '" + s + "'");
}

/// Weight matrix B together with the dictionary it was computed for and its quality measures.
struct AnalyticWeights {
  BlockDictionary B;
  BlockDictionary D;
  WeightMethod method = WeightMethod::ClosedForm;
  double feasibility_residual = 0.0;  // max_i ||B[i]^T D[i] - I_d||_F
  double cross_coherence = 0.0;       // mu_b(B, D)
  /// For MMV weights: the reduced m x n matrix B~ with B = B~ (x) I_d.
  std::optional<Matrix> reduced;
  /// For circulant/Toeplitz weights: the generating kernel and the retained-bin rank.
  std::optional<Vector> kernel;
  Index rank = 0;
};

inline constexpr double kWeightFeasibilityTol = 1e-8;

namespace detail {

inline AnalyticWeights finish_weights(Matrix B, const BlockDictionary& D, WeightMethod method) {
  AnalyticWeights w;
  w.B = BlockDictionary(std::move(B), D.shape());
  w.D = D;
  w.method = method;
  w.feasibility_residual = feasibility_residual(w.B, D);
  if (w.feasibility_residual > kWeightFeasibilityTol)
    throw Error("weights (" + to_string(method) + "): infeasible, max ||B[i]^T D[i] - I||_F = " +
                fmt_g(w.feasibility_residual));
  w.cross_coherence = D.n() >= 2 ? cross_block_coherence(w.B, D) : 0.0;
  return w;
}

inline void require_orthonormal(const BlockDictionary& D, const char* who) {
  const double dev = D.max_block_gram_deviation();
  if (dev > BlockDictionary::kOrthonormalTol)
    throw Error(std::string(who) + ": requires orthonormal blocks (deviation " + std::to_string(dev) + ")");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// KKT oracle

struct KktSolution {
  Matrix block;       // B[i], n_y x d
  Matrix multiplier;  // Lambda, d x d
};

/// Minimum-norm solution of
///   [2 D D^T   D[i]] [B[i]  ]   [0  ]
///   [D[i]^T    0   ] [Lambda] = [I_d]
/// through the pseudo-inverse of the full (n_y + d) x (n_y + d) system.
inline KktSolution solve_kkt_oracle(const BlockDictionary& D, Index i) {
  if (i < 0 || i >= D.n()) throw Error("solve_kkt_oracle: block index " + std::to_string(i) + " out of range");
  const Index ny = D.rows();
  const Index d = D.d();
  Matrix sys = Matrix::Zero(ny + d, ny + d);
  sys.topLeftCorner(ny, ny) = 2.0 * D.data() * D.data().transpose();
  sys.topRightCorner(ny, d) = D.block(i);
  sys.bottomLeftCorner(d, ny) = D.block(i).transpose();
  Matrix rhs = Matrix::Zero(ny + d, d);
  rhs.bottomRows(d).setIdentity();
  const Matrix sol = pinv(sys) * rhs;
  return {sol.topRows(ny), sol.bottomRows(d)};
}

inline AnalyticWeights kkt_weights(const BlockDictionary& D) {
  Matrix B(D.rows(), D.cols());
  for (Index i = 0; i < D.n(); ++i) B.middleCols(i * D.d(), D.d()) = solve_kkt_oracle(D, i).block;
  return detail::finish_weights(std::move(B), D, WeightMethod::KKT);
}

// ---------------------------------------------------------------------------
// Closed form via the block pseudo-inverse of the KKT matrix

/// B[i] = K_i^+ (D[i] - E_i H_i), evaluated term by term:
///   K_i = (2DD^T)^2 + D[i]D[i]^T,  E_i = 2DD^T D[i],
///   R_i = D[i] - 2DD^T K_i^+ E_i,  S_i = -D[i]^T K_i^+ E_i,
///   L_i = R_i^T R_i + S_i^T S_i,   M_i = K_i^+ E_i (I - L_i^+ L_i),
///   H_i = L_i^+ S_i^T + (I - L_i^+ L_i)(I + M_i^T M_i)^{-1} (K_i^+ E_i)^T K_i^+ (D[i] - E_i L_i^+ S_i^T).
namespace detail {

using XMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using XVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

inline XMatrix pinv_x(const XMatrix& a) {
  const Eigen::JacobiSVD<XMatrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const XVector& sv = svd.singularValues();
  XVector inv = XVector::Zero(sv.size());
  for (Index k = 0; k < sv.size(); ++k)
    if (sv(k) > static_cast<long double>(kPinvRtol) * sv(0)) inv(k) = 1.0L / sv(k);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace detail

/// One block of the closed form, evaluated in long double: the formula cancels terms of size
/// cond(D)^2 against each other, which costs too many digits in double once cond(D) ~ 1e3.
inline Matrix closed_form_block(const detail::XMatrix& gram2, const detail::XMatrix& Di) {
  using detail::XMatrix;
  const Index ny = gram2.rows();
  const Index d = Di.cols();
  const XMatrix eye = XMatrix::Identity(d, d);
  // K_i = A A^T with A = [2DD^T, D[i]]. Working from one SVD of A: with N an orthonormal null
  // basis of A and A^+ = [T; U] split by rows,
  //   K_i^+ E_i = T^T D[i],  R_i = N_1 N_1^T D[i],  S_i = N_2 N_1^T D[i],
  //   K_i^+ (D[i] - E_i X) = K_i^+ A [-D[i] X; I] = U^T - T^T D[i] X.
  XMatrix A(ny, ny + d);
  A << gram2, Di;
  const Eigen::JacobiSVD<XMatrix> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.info() != Eigen::Success) throw Error("closed_form_weights: SVD did not converge");
  const detail::XVector& sv = svd.singularValues();
  Index rank = 0;
  while (rank < sv.size() && sv(rank) > static_cast<long double>(kPinvRtol) * sv(0)) ++rank;
  const XMatrix Ap = svd.matrixV().leftCols(rank) * sv.head(rank).cwiseInverse().asDiagonal() *
                     svd.matrixU().leftCols(rank).transpose();
  const XMatrix N = svd.matrixV().rightCols(ny + d - rank);

  const XMatrix KpE = Ap.topRows(ny).transpose() * Di;
  auto Kp_res = [&](const XMatrix& X) -> XMatrix { return XMatrix(Ap.bottomRows(d).transpose()) - KpE * X; };
  const XMatrix NtD = N.topRows(ny).transpose() * Di;
  const XMatrix Ri = N.topRows(ny) * NtD;
  const XMatrix Si = N.bottomRows(d) * NtD;
  const XMatrix Li = Ri.transpose() * Ri + Si.transpose() * Si;
  const XMatrix Lp = detail::pinv_x(Li);
  const XMatrix P = eye - Lp * Li;
  const XMatrix Mi = KpE * P;
  const XMatrix inner = (eye + Mi.transpose() * Mi).inverse();
  const XMatrix Hi = Lp * Si.transpose() + P * inner * KpE.transpose() * Kp_res(Lp * Si.transpose());
  const XMatrix Bi = Kp_res(Hi);
  // what rounding is left sits mostly in B[i]^T D[i] - I; a d x d right factor removes it
  return (Bi * (Di.transpose() * Bi).inverse()).cast<double>();
}

inline AnalyticWeights closed_form_weights(const BlockDictionary& D) {
  detail::require_orthonormal(D, "closed_form_weights");
  const detail::XMatrix Dx = D.data().cast<long double>();
  const detail::XMatrix gram2 = 2.0L * Dx * Dx.transpose();
  Matrix B(D.rows(), D.cols());
  for (Index i = 0; i < D.n(); ++i)
    B.middleCols(i * D.d(), D.d()) = closed_form_block(gram2, Dx.middleCols(i * D.d(), D.d()));
  return detail::finish_weights(std::move(B), D, WeightMethod::ClosedForm);
}

// ---------------------------------------------------------------------------
// d = 1 shortcut

/// B = (D^+)^T diag(d~)^{-1} with d~ = diag((D^+)^T^T D), so diag(B^T D) = 1.
inline AnalyticWeights svd_weights_d1(const BlockDictionary& D) {
  if (D.d() != 1) throw Error("svd_weights_d1: requires block width d = 1");
  Matrix B = pinv(D.data()).transpose();
  for (Index j = 0; j < B.cols(); ++j) {
    const double dj = B.col(j).dot(D.data().col(j));
    if (std::abs(dj) < 1e-12)
      throw Error("svd_weights_d1: column " + std::to_string(j) + " has diag(B^T D) = " + std::to_string(dj) +
                  ", cannot normalize");
    B.col(j) /= dj;
  }
  return detail::finish_weights(std::move(B), D, WeightMethod::SVD_d1);
}

// ---------------------------------------------------------------------------
// MMV / Kronecker reduction

/// B = B~ (x) I_d from weights B~ computed for K alone. Feasibility and cross coherence
/// follow from the reduced quantities: ||B[i]^T D[i] - I||_F = sqrt(d)|b_i^T k_i - 1| and
/// mu_b(B, D) = mu(B~, K) / d, so nothing of size n_y x n_x is ever solved.
inline AnalyticWeights kron_weights(const MMVProblem& P, const AnalyticWeights& base) {
  if (base.D.d() != 1 || base.B.rows() != P.m() || base.B.cols() != P.n())
    throw Error("kron_weights: base weights must be m x n with d = 1");
  const Matrix& Bt = base.B.data();
  double worst = 0.0;
  for (Index j = 0; j < P.n(); ++j) worst = std::max(worst, std::abs(Bt.col(j).dot(P.K.col(j)) - 1.0));
  if (worst > kWeightFeasibilityTol)
    throw Error("kron_weights: base weights infeasible, max |b_i^T k_i - 1| = " + fmt_g(worst));
  if (P.d == 1) {
    AnalyticWeights w = base;
    w.method = WeightMethod::Kronecker;
    w.reduced = Bt;
    return w;
  }
  const Matrix eye = Matrix::Identity(P.d, P.d);
  AnalyticWeights w;
  w.B = BlockDictionary(kron(Bt, eye), BlockShape{P.n(), P.d});
  w.D = kron_lift(P);
  w.method = WeightMethod::Kronecker;
  w.feasibility_residual = std::sqrt(static_cast<double>(P.d)) * worst;
  w.cross_coherence = P.n() >= 2 ? cross_coherence(Bt, P.K) / static_cast<double>(P.d) : 0.0;
  w.reduced = Bt;
  return w;
}

// ---------------------------------------------------------------------------
// Circulant and Toeplitz operators

/// circ(k): column j is k cyclically shifted down by j, i.e. K(i, j) = k[(i - j) mod n].
inline Matrix circulant(const Vector& k) {
  const Index n = k.size();
  Matrix K(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) K(i, j) = k((i - j + n) % n);
  return K;
}

inline std::vector<std::complex<double>> fft(const Vector& x) {
  Eigen::FFT<double> engine;
  std::vector<double> in(x.data(), x.data() + x.size());
  std::vector<std::complex<double>> out;
  engine.fwd(out, in);
  return out;
}

/// Inverse DFT (with the 1/n factor), real part only.
inline Vector ifft_real(const std::vector<std::complex<double>>& xhat) {
  Eigen::FFT<double> engine;
  std::vector<std::complex<double>> out;
  engine.inv(out, xhat);
  Vector v(static_cast<Index>(out.size()));
  for (size_t i = 0; i < out.size(); ++i) v(static_cast<Index>(i)) = out[i].real();
  return v;
}

/// Circular convolution (a * b)_i = sum_j a_j b_{(i-j) mod n}, evaluated directly.
inline Vector circular_convolve(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw Error("circular_convolve: length mismatch");
  const Index n = a.size();
  Vector out = Vector::Zero(n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) out(i) += a(j) * b((i - j + n) % n);
  return out;
}

struct CirculantSolution {
  Vector b;             // scaled so that b^T k = 1
  Vector unscaled;      // F^{-1}(conj(1 / k^)) with dropped bins
  Index rank = 0;       // number of retained frequency bins
  double scale = 1.0;   // n / rank
};

inline constexpr double kFftZeroBinRtol = 1e-10;

/// b = F^{-1}(conj(1/k^)), with 1/k^_i := 0 on bins below 1e-10 * max|k^|, then
/// rescaled by n / rank so that b^T k = 1.
inline CirculantSolution circulant_kernel_weights(const Vector& k) {
  const Index n = k.size();
  if (n < 2) throw Error("circulant_weights_fft: kernel length must be >= 2");
  const auto khat = fft(k);
  double peak = 0.0;
  for (const auto& c : khat) peak = std::max(peak, std::abs(c));
  if (peak == 0.0) throw Error("circulant_weights_fft: kernel spectrum is identically zero");
  std::vector<std::complex<double>> bhat(khat.size());
  Index rank = 0;
  for (size_t i = 0; i < khat.size(); ++i) {
    if (std::abs(khat[i]) > kFftZeroBinRtol * peak) {
      bhat[i] = std::conj(1.0 / khat[i]);
      ++rank;
    }
  }
  CirculantSolution sol;
  sol.unscaled = ifft_real(bhat);
  sol.rank = rank;
  sol.scale = static_cast<double>(n) / static_cast<double>(rank);
  sol.b = sol.scale * sol.unscaled;
  return sol;
}

/// Analytic weights for D = circ(k) viewed as a d = 1 dictionary: B = circ(b).
inline AnalyticWeights circulant_weights_fft(const Vector& k) {
  const CirculantSolution sol = circulant_kernel_weights(k);
  const Index n = k.size();
  AnalyticWeights w = detail::finish_weights(circulant(sol.b), BlockDictionary(circulant(k), BlockShape{n, 1}),
                                             WeightMethod::CirculantFFT);
  w.kernel = sol.b;
  w.rank = sol.rank;
  return w;
}

/// Per-column Lagrange multipliers lambda_i = -2 K_i^T K K^T B_i / ||K_i||^2 of the KKT system
/// 2 K K^T B_i + lambda_i K_i = 0, plus the worst residual of that system.
struct MultiplierCheck {
  std::vector<double> lambda;
  double max_residual = 0.0;
  double spread() const {
    if (lambda.empty()) return 0.0;
    const auto [lo, hi] = std::minmax_element(lambda.begin(), lambda.end());
    return *hi - *lo;
  }
};

inline MultiplierCheck circulant_multipliers(const Matrix& K, const Matrix& B) {
  MultiplierCheck out;
  const Matrix G = K * K.transpose();
  for (Index i = 0; i < K.cols(); ++i) {
    const Vector gi = 2.0 * G * B.col(i);
    const double lambda = -K.col(i).dot(gi) / K.col(i).squaredNorm();
    out.lambda.push_back(lambda);
    out.max_residual = std::max(out.max_residual, (gi + lambda * K.col(i)).norm());
  }
  return out;
}

enum class ToeplitzMode {
  Full,  // m = n + m~ - 1 rows: linear convolution without truncation
  Same,  // m = n rows with circular boundary: K = circ(k padded to n)
};

inline Index toeplitz_rows(Index kernel_len, Index n, ToeplitzMode mode) {
  return mode == ToeplitzMode::Full ? n + kernel_len - 1 : n;
}

/// Convolution matrix of k (length m~) acting on length-n signals.
inline Matrix toeplitz_matrix(const Vector& k, Index n, ToeplitzMode mode = ToeplitzMode::Full) {
  const Index mk = k.size();
  if (mk < 1 || n < 1) throw Error("toeplitz_matrix: empty kernel or signal");
  const Index m = toeplitz_rows(mk, n, mode);
  if (mode == ToeplitzMode::Same && mk > n) throw Error("toeplitz_matrix: kernel longer than signal");
  Matrix K = Matrix::Zero(m, n);
  for (Index j = 0; j < n; ++j)
    for (Index t = 0; t < mk; ++t) K((j + t) % m, j) += k(t);
  return K;
}

/// Weights for the convolution matrix of k: b is the circulant solution for the zero-padded
/// kernel of length m, and B_i = T^i b (cyclic shift), keeping the m x n part.
inline AnalyticWeights toeplitz_weights_extend(const Vector& k, Index n, ToeplitzMode mode = ToeplitzMode::Full) {
  const Index mk = k.size();
  if (!(mk < n)) throw Error("toeplitz_weights_extend: kernel length must be < signal length");
  const Index m = toeplitz_rows(mk, n, mode);
  Vector padded = Vector::Zero(m);
  padded.head(mk) = k;
  const CirculantSolution sol = circulant_kernel_weights(padded);
  if (sol.rank < m)
    throw Error("toeplitz_weights_extend: circular extension has rank " + std::to_string(sol.rank) + " < " +
                std::to_string(m) + "; adjust the discretization grid so the kernel spectrum has no zeros");
  const Matrix Bfull = circulant(sol.b);
  AnalyticWeights w = detail::finish_weights(Bfull.leftCols(n), BlockDictionary(toeplitz_matrix(k, n, mode), BlockShape{n, 1}),
                                             WeightMethod::ToeplitzExt);
  w.kernel = sol.b;
  w.rank = sol.rank;
  return w;
}

// ---------------------------------------------------------------------------
// Upper-bound objective

struct UpperBoundReport {
  double value = 0.0;             // (1/d) ||B^T D||_F^2
  double max_spectral_sq = 0.0;   // max_{i != j} (1/d) ||B[i]^T D[j]||_2^2
  double max_frobenius_sq = 0.0;  // max_{i != j} (1/d) ||B[i]^T D[j]||_F^2
};

inline UpperBoundReport upper_bound_objective(const BlockDictionary& B, const BlockDictionary& D) {
  if (B.rows() != D.rows() || B.shape() != D.shape()) throw Error("upper_bound_objective: shape mismatch");
  const double d = static_cast<double>(D.d());
  const Matrix G = B.data().transpose() * D.data();
  UpperBoundReport r;
  r.value = G.squaredNorm() / d;
  for (Index i = 0; i < D.n(); ++i)
    for (Index j = 0; j < D.n(); ++j) {
      if (i == j) continue;
      const Matrix g = G.block(i * D.d(), j * D.d(), D.d(), D.d());
      r.max_frobenius_sq = std::max(r.max_frobenius_sq, g.squaredNorm() / d);
      const double s = spectral_norm(g);
      r.max_spectral_sq = std::max(r.max_spectral_sq, s * s / d);
    }
  return r;
}

}  // namespace blockunfold
