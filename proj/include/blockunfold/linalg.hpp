#pragma once

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <unsupported/Eigen/KroneckerProduct>

#include "error.hpp"

namespace blockunfold {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative singular-value cutoff used for every pseudo-inverse.
inline constexpr double kPinvRtol = 1e-10;

/// Moore-Penrose pseudo-inverse; singular values below rtol * sigma_max are dropped.
inline Matrix pinv(const Matrix& a, double rtol = kPinvRtol) {
  if (a.size() == 0) return Matrix::Zero(a.cols(), a.rows());
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw Error("pinv: SVD did not converge");
  const Vector& s = svd.singularValues();
  const double cutoff = rtol * (s.size() > 0 ? s(0) : 0.0);
  Vector inv = Vector::Zero(s.size());
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > cutoff) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

inline Vector singular_values(const Matrix& a) {
  if (a.size() == 0) return Vector();
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues();
}

/// Largest singular value, computed exactly from an SVD.
inline double spectral_norm(const Matrix& a) {
  const Vector s = singular_values(a);
  return s.size() > 0 ? s(0) : 0.0;
}

inline Index numerical_rank(const Matrix& a, double rtol = kPinvRtol) {
  const Vector s = singular_values(a);
  if (s.size() == 0 || s(0) == 0.0) return 0;
  Index r = 0;
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > rtol * s(0)) ++r;
  return r;
}

/// ||A||_2 by power iteration on A^T A; deterministic start vector of ones.
inline double power_iteration_norm(const Matrix& a, double tol = 1e-10, int max_iters = 10000) {
  if (a.size() == 0) return 0.0;
  Vector v = Vector::Ones(a.cols()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vector w = a.transpose() * (a * v);
    const double norm = w.norm();
    if (norm == 0.0) {
      // start vector in the null space; fall back to a unit basis sweep
      v = Vector::Unit(a.cols(), it % a.cols());
      continue;
    }
    const double next = v.dot(w);
    v = w / norm;
    if (std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next))) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out = Eigen::kroneckerProduct(a, b);
  return out;
}

}  // namespace blockunfold
