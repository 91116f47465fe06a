#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "linalg.hpp"

namespace blockunfold {

/// Partition of a length n*d vector (or an n_y x n*d matrix) into n blocks of width d.
struct BlockShape {
  Index n = 0;
  Index d = 1;

  Index size() const { return n * d; }
  bool operator==(const BlockShape&) const = default;
};

/// A flat vector carrying its block structure as metadata.
class BlockVector {
 public:
  BlockVector() = default;

  BlockVector(Vector data, BlockShape shape) : data_(std::move(data)), shape_(shape) {
    if (shape_.n < 0 || shape_.d < 1 || data_.size() != shape_.size())
      throw Error("BlockVector: length " + std::to_string(data_.size()) + " does not match n*d = " +
                  std::to_string(shape_.n) + "*" + std::to_string(shape_.d));
  }

  BlockVector(Vector data, Index n, Index d) : BlockVector(std::move(data), BlockShape{n, d}) {}

  static BlockVector zeros(BlockShape shape) { return BlockVector(Vector::Zero(shape.size()), shape); }

  const Vector& data() const { return data_; }
  Vector& data() { return data_; }
  BlockShape shape() const { return shape_; }
  Index n() const { return shape_.n; }
  Index d() const { return shape_.d; }
  Index size() const { return data_.size(); }

  /// Block i (0-based) is the slice [i*d, (i+1)*d).
  auto block(Index i) const { return data_.segment(i * shape_.d, shape_.d); }
  auto block(Index i) { return data_.segment(i * shape_.d, shape_.d); }

 private:
  Vector data_;
  BlockShape shape_{};
};

/// Dense n_y x (n*d) dictionary with block partition D = (D[0] ... D[n-1]).
class BlockDictionary {
 public:
  static constexpr double kOrthonormalTol = 1e-10;

  BlockDictionary() = default;

  BlockDictionary(Matrix data, BlockShape shape, bool orthonormal_blocks = false)
      : data_(std::move(data)), shape_(shape), orthonormal_(orthonormal_blocks) {
    if (shape_.d < 1 || data_.cols() != shape_.size())
      throw Error("BlockDictionary: " + std::to_string(data_.cols()) + " columns do not match n*d = " +
                  std::to_string(shape_.size()));
    if (orthonormal_) {
      const double dev = max_block_gram_deviation();
      if (dev > kOrthonormalTol)
        throw Error("BlockDictionary: blocks flagged orthonormal but ||D[i]^T D[i] - I||_F = " +
                    fmt_g(dev));
    }
  }

  BlockDictionary(Matrix data, Index n, Index d, bool orthonormal_blocks = false)
      : BlockDictionary(std::move(data), BlockShape{n, d}, orthonormal_blocks) {}

  const Matrix& data() const { return data_; }
  BlockShape shape() const { return shape_; }
  Index n() const { return shape_.n; }
  Index d() const { return shape_.d; }
  Index rows() const { return data_.rows(); }
  Index cols() const { return data_.cols(); }
  bool orthonormal_blocks() const { return orthonormal_; }

  auto block(Index i) const { return data_.middleCols(i * shape_.d, shape_.d); }

  /// max_i ||D[i]^T D[i] - I_d||_F
  double max_block_gram_deviation() const {
    double worst = 0.0;
    const Matrix eye = Matrix::Identity(shape_.d, shape_.d);
    for (Index i = 0; i < shape_.n; ++i) {
      const auto bi = block(i);
      worst = std::max(worst, (bi.transpose() * bi - eye).norm());
    }
    return worst;
  }

 private:
  Matrix data_;
  BlockShape shape_{};
  bool orthonormal_ = false;
};

enum class MatrixKind { Gaussian, Circulant, Toeplitz, General };

/// Compact MMV description Y = K X with d channels; lifts to D = K (x) I_d.
struct MMVProblem {
  Matrix K;
  Index d = 1;
  MatrixKind kind = MatrixKind::General;

  Index m() const { return K.rows(); }
  Index n() const { return K.cols(); }
  Index n_y() const { return K.rows() * d; }
  Index n_x() const { return K.cols() * d; }

  bool unit_columns(double tol = BlockDictionary::kOrthonormalTol) const {
    for (Index j = 0; j < K.cols(); ++j)
      if (std::abs(K.col(j).norm() - 1.0) > tol) return false;
    return true;
  }
};

/// Signal class X_b(M, s, sigma): block norms <= M, at most s active blocks, noise norm <= sigma.
struct SignalClass {
  double M = 1.0;
  Index s = 0;
  double sigma = 0.0;

  SignalClass(double M_, Index s_, double sigma_) : M(M_), s(s_), sigma(sigma_) {
    if (!(M > 0.0) || s < 0 || sigma < 0.0) throw Error("SignalClass: require M>0, s>=0, sigma>=0");
  }
};

// ---------------------------------------------------------------------------
// Block norms and supports

inline std::vector<double> block_norms(const BlockVector& x) {
  std::vector<double> out(static_cast<size_t>(x.n()));
  for (Index i = 0; i < x.n(); ++i) out[static_cast<size_t>(i)] = x.block(i).norm();
  return out;
}

inline double l21_norm(const BlockVector& x) {
  double s = 0.0;
  for (Index i = 0; i < x.n(); ++i) s += x.block(i).norm();
  return s;
}

/// Threshold above which a block counts as active. With no explicit tolerance
/// the relative rule 1e-12 * max(1, ||x||_2) applies.
inline double support_threshold(const BlockVector& x, std::optional<double> tol = std::nullopt) {
  if (tol) return *tol;
  return 1e-12 * std::max(1.0, x.data().norm());
}

inline std::vector<Index> block_support(const BlockVector& x, std::optional<double> tol = std::nullopt) {
  const double thr = support_threshold(x, tol);
  std::vector<Index> supp;
  for (Index i = 0; i < x.n(); ++i)
    if (x.block(i).norm() > thr) supp.push_back(i);
  return supp;
}

inline Index l20_norm(const BlockVector& x, std::optional<double> tol = std::nullopt) {
  return static_cast<Index>(block_support(x, tol).size());
}

inline bool is_subset(const std::vector<Index>& a, const std::vector<Index>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

// ---------------------------------------------------------------------------
// Coherence measures

namespace detail {

inline double block_pair_norm(const Matrix& lhs, const Matrix& rhs) {
  // d x d product; its spectral norm via SVD is exact at these sizes
  return spectral_norm(lhs.transpose() * rhs);
}

}  // namespace detail

/// mu_b(D) = max_{i != j} (1/d) ||D[i]^T D[j]||_2
inline double block_coherence(const BlockDictionary& D) {
  if (D.n() < 2) throw Error("block_coherence: need at least 2 blocks");
  const double d = static_cast<double>(D.d());
  double worst = 0.0;
  for (Index i = 0; i < D.n(); ++i)
    for (Index j = 0; j < D.n(); ++j)
      if (i != j) worst = std::max(worst, detail::block_pair_norm(D.block(i), D.block(j)) / d);
  return worst;
}

inline constexpr double kCrossFeasibilityTol = 1e-8;

/// max_i ||B[i]^T D[i] - I_d||_F
inline double feasibility_residual(const BlockDictionary& B, const BlockDictionary& D) {
  if (B.shape() != D.shape() || B.rows() != D.rows())
    throw Error("feasibility_residual: B and D shapes differ");
  const Matrix eye = Matrix::Identity(D.d(), D.d());
  double worst = 0.0;
  for (Index i = 0; i < D.n(); ++i) worst = std::max(worst, (B.block(i).transpose() * D.block(i) - eye).norm());
  return worst;
}

/// mu_b(B, D) = max_{i != j} (1/d) ||B[i]^T D[j]||_2, requiring B[i]^T D[i] = I_d.
inline double cross_block_coherence(const BlockDictionary& B, const BlockDictionary& D,
                                    double feasibility_tol = kCrossFeasibilityTol) {
  if (B.shape() != D.shape() || B.rows() != D.rows())
    throw Error("cross_block_coherence: B and D shapes differ");
  if (D.n() < 2) throw Error("cross_block_coherence: need at least 2 blocks");
  const Matrix eye = Matrix::Identity(D.d(), D.d());
  for (Index i = 0; i < D.n(); ++i) {
    const double r = (B.block(i).transpose() * D.block(i) - eye).norm();
    if (r > feasibility_tol)
      throw Error("cross_block_coherence: B[" + std::to_string(i) + "]^T D[" + std::to_string(i) +
                  "] deviates from I_d by " + std::to_string(r));
  }
  const double d = static_cast<double>(D.d());
  double worst = 0.0;
  for (Index i = 0; i < D.n(); ++i)
    for (Index j = 0; j < D.n(); ++j)
      if (i != j) worst = std::max(worst, detail::block_pair_norm(B.block(i), D.block(j)) / d);
  return worst;
}

/// Ordinary mutual coherence mu(K) = max_{i != j} |K_i^T K_j|.
inline double mutual_coherence(const Matrix& K) {
  if (K.cols() < 2) throw Error("mutual_coherence: need at least 2 columns");
  Matrix g = (K.transpose() * K).cwiseAbs();
  g.diagonal().setZero();
  return g.maxCoeff();
}

/// max_{i != j} |B_i^T K_j| without a feasibility requirement.
inline double cross_coherence(const Matrix& B, const Matrix& K) {
  if (B.rows() != K.rows() || B.cols() != K.cols()) throw Error("cross_coherence: shape mismatch");
  if (K.cols() < 2) throw Error("cross_coherence: need at least 2 columns");
  Matrix g = (B.transpose() * K).cwiseAbs();
  g.diagonal().setZero();
  return g.maxCoeff();
}

// ---------------------------------------------------------------------------
// MMV <-> block-sparse bridge

inline constexpr Index kMaxLiftEntries = 100'000'000;

/// Dense D = K (x) I_d. Blocks are orthonormal iff K has unit columns.
inline BlockDictionary kron_lift(const MMVProblem& p, Index max_entries = kMaxLiftEntries) {
  if (p.m() < 1 || p.n() < 1 || p.d < 1) throw Error("kron_lift: m, n, d must be >= 1");
  const double entries = static_cast<double>(p.n_y()) * static_cast<double>(p.n_x());
  if (entries > static_cast<double>(max_entries))
    throw Error("kron_lift: lifted matrix would have " + std::to_string(entries) + " entries (max " +
                std::to_string(max_entries) + ")");
  return BlockDictionary(kron(p.K, Matrix::Identity(p.d, p.d)), BlockShape{p.n(), p.d}, p.unit_columns());
}

/// x = vec(X^T): block i is row i of X.
inline BlockVector mmv_vectorize(const Matrix& X) {
  Vector v(X.size());
  for (Index i = 0; i < X.rows(); ++i) v.segment(i * X.cols(), X.cols()) = X.row(i).transpose();
  return BlockVector(std::move(v), BlockShape{X.rows(), X.cols()});
}

inline Matrix mmv_devectorize(const BlockVector& x) {
  Matrix X(x.n(), x.d());
  for (Index i = 0; i < x.n(); ++i) X.row(i) = x.block(i).transpose();
  return X;
}

/// vec(Y^T) for an m x d observation matrix (plain vector, no block metadata needed).
inline Vector mmv_vectorize_observation(const Matrix& Y) { return mmv_vectorize(Y).data(); }

}  // namespace blockunfold
