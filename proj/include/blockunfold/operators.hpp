#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "blockcore.hpp"

namespace blockunfold {

/// Output of block soft-thresholding plus the per-block bookkeeping needed for derivatives.
struct ThresholdReport {
  BlockVector output;
  std::vector<bool> active;          // active[i] <=> block_norms[i] > alpha
  std::vector<double> block_norms;   // pre-threshold ||z[i]||_2
};

/// eta_alpha(z)[i] = max{0, 1 - alpha/||z[i]||} z[i]
inline ThresholdReport block_soft_threshold(const BlockVector& z, double alpha) {
  if (alpha < 0.0) throw Error("block_soft_threshold: alpha must be >= 0");
  ThresholdReport rep{BlockVector::zeros(z.shape()), std::vector<bool>(static_cast<size_t>(z.n())),
                      std::vector<double>(static_cast<size_t>(z.n()))};
  for (Index i = 0; i < z.n(); ++i) {
    const double r = z.block(i).norm();
    rep.block_norms[static_cast<size_t>(i)] = r;
    if (r > alpha) {
      rep.active[static_cast<size_t>(i)] = true;
      rep.output.block(i) = (1.0 - alpha / r) * z.block(i);
    } else if (!std::isfinite(r)) {
      rep.output.block(i).setConstant(std::numeric_limits<double>::quiet_NaN());  // let callers' guards see it
    }
  }
  return rep;
}

/// J_eta(z) v. Per active block J = (1 - alpha/r) I + (alpha/r) u u^T; blocks with r <= alpha
/// contribute zero. J is symmetric, so this is also the vector-Jacobian product.
inline BlockVector threshold_jvp(const BlockVector& z, double alpha, const BlockVector& v) {
  if (z.shape() != v.shape()) throw Error("threshold_jvp: shape mismatch");
  BlockVector out = BlockVector::zeros(z.shape());
  for (Index i = 0; i < z.n(); ++i) {
    const double r = z.block(i).norm();
    if (r <= alpha) continue;
    const Vector u = z.block(i) / r;
    const double c = alpha / r;
    out.block(i) = (1.0 - c) * v.block(i) + c * u.dot(v.block(i)) * u;
  }
  return out;
}

inline BlockVector threshold_vjp(const BlockVector& z, double alpha, const BlockVector& v) {
  return threshold_jvp(z, alpha, v);
}

/// d eta_alpha(z) / d alpha: -u on active blocks, 0 elsewhere.
inline BlockVector threshold_alpha_derivative(const BlockVector& z, double alpha) {
  BlockVector out = BlockVector::zeros(z.shape());
  for (Index i = 0; i < z.n(); ++i) {
    const double r = z.block(i).norm();
    if (r > alpha) out.block(i) = -z.block(i) / r;
  }
  return out;
}

/// <d eta/d alpha, v>
inline double threshold_alpha_pairing(const BlockVector& z, double alpha, const BlockVector& v) {
  if (z.shape() != v.shape()) throw Error("threshold_alpha_pairing: shape mismatch");
  return threshold_alpha_derivative(z, alpha).data().dot(v.data());
}

/// tr(d eta_alpha(z)/dz) / n_y = (1/n_y) sum_{active i} [d - alpha (d-1)/||z[i]||].
inline double onsager_trace(const BlockVector& z, double alpha, Index n_y) {
  if (alpha < 0.0) throw Error("onsager_trace: alpha must be >= 0");
  if (n_y < 1) throw Error("onsager_trace: n_y must be >= 1");
  const double d = static_cast<double>(z.d());
  double tr = 0.0;
  for (Index i = 0; i < z.n(); ++i) {
    const double r = z.block(i).norm();
    if (r > alpha) tr += d - alpha * (d - 1.0) / r;
  }
  return tr / static_cast<double>(n_y);
}

namespace detail {

// Column-batched variants used by the unfolded networks: every column of Z is one sample.

inline Matrix shrink_columns(const Matrix& Z, BlockShape shape, double alpha) {
  Matrix X = Matrix::Zero(Z.rows(), Z.cols());
  for (Index c = 0; c < Z.cols(); ++c)
    for (Index i = 0; i < shape.n; ++i) {
      const auto zb = Z.col(c).segment(i * shape.d, shape.d);
      const double r = zb.norm();
      if (r > alpha) X.col(c).segment(i * shape.d, shape.d) = (1.0 - alpha / r) * zb;
    }
  return X;
}

/// Pulls an upstream gradient G (w.r.t. eta(Z)) back to Z, and accumulates <d eta/d alpha, G>.
inline Matrix shrink_columns_vjp(const Matrix& Z, BlockShape shape, double alpha, const Matrix& G,
                                 double& alpha_grad) {
  Matrix out = Matrix::Zero(Z.rows(), Z.cols());
  for (Index c = 0; c < Z.cols(); ++c)
    for (Index i = 0; i < shape.n; ++i) {
      const auto zb = Z.col(c).segment(i * shape.d, shape.d);
      const double r = zb.norm();
      if (r <= alpha) continue;
      const auto gb = G.col(c).segment(i * shape.d, shape.d);
      const double ug = zb.dot(gb) / r;
      const double k = alpha / r;
      out.col(c).segment(i * shape.d, shape.d) = (1.0 - k) * gb + (k * ug / r) * zb;
      alpha_grad -= ug;
    }
  return out;
}

/// Smallest relative distance |r - alpha| / max(1, r) over all blocks of all columns.
inline double kink_margin(const Matrix& Z, BlockShape shape, double alpha) {
  double m = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < Z.cols(); ++c)
    for (Index i = 0; i < shape.n; ++i) {
      const double r = Z.col(c).segment(i * shape.d, shape.d).norm();
      m = std::min(m, std::abs(r - alpha) / std::max(1.0, r));
    }
  return m;
}

}  // namespace detail

}  // namespace blockunfold
