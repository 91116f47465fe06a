#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "blockcore.hpp"
#include "log.hpp"
#include "operators.hpp"

namespace blockunfold {

/// Iterates x^(0..K) of a solver run together with per-iterate diagnostics.
struct SolverTrace {
  std::vector<BlockVector> iterates;           // iterates[0] is x^(0)
  std::vector<double> objective;               // LASSO value at each iterate
  std::vector<double> nmse;                    // empty unless ground truth was supplied
  std::vector<std::vector<Index>> supports;

  Index iterations() const { return static_cast<Index>(iterates.size()) - 1; }
  const BlockVector& final() const { return iterates.back(); }
};

struct SolverOptions {
  std::optional<BlockVector> ground_truth;
  /// Abort when ||x^(k)|| exceeds this factor times ||y||.
  double divergence_factor = 1e6;
};

/// 1/2 ||Dx - y||^2 + alpha ||x||_{2,1}
inline double lasso_objective(const BlockDictionary& D, const Vector& y, const BlockVector& x, double alpha) {
  if (D.rows() != y.size() || D.cols() != x.size() || D.shape() != x.shape())
    throw Error("lasso_objective: shape mismatch");
  return 0.5 * (D.data() * x.data() - y).squaredNorm() + alpha * l21_norm(x);
}

/// ||D||_2 by power iteration (tol 1e-10, at most 1e4 iterations).
inline double operator_norm(const BlockDictionary& D) { return power_iteration_norm(D.data(), 1e-10, 10000); }

/// gamma = 1 / (1.01 ||D||_2^2)
inline double default_step_size(const BlockDictionary& D) {
  const double L = operator_norm(D);
  if (L == 0.0) throw Error("default_step_size: D is zero");
  return 1.0 / (1.01 * L * L);
}

/// tr(I - B^T D) over the n_x x n_x product; zero for any B with B[i]^T D[i] = I_d.
inline double decorrelation_trace(const BlockDictionary& B, const BlockDictionary& D) {
  if (B.rows() != D.rows() || B.cols() != D.cols()) throw Error("decorrelation_trace: shape mismatch");
  return static_cast<double>(D.cols()) - (B.data().transpose() * D.data()).trace();
}

namespace detail {

inline void check_solver_inputs(const BlockDictionary& D, const Vector& y, const BlockVector& x0, Index iters) {
  if (iters < 0) throw Error("solver: iteration count must be >= 0");
  if (D.rows() != y.size()) throw Error("solver: y has length " + std::to_string(y.size()) + ", D has " +
                                        std::to_string(D.rows()) + " rows");
  if (D.shape() != x0.shape()) throw Error("solver: x0 block shape does not match D");
}

inline void record(SolverTrace& tr, const BlockDictionary& D, const Vector& y, const BlockVector& x, double alpha,
                   const SolverOptions& opt) {
  tr.iterates.push_back(x);
  tr.objective.push_back(lasso_objective(D, y, x, alpha));
  tr.supports.push_back(block_support(x));
  if (opt.ground_truth) {
    const double ref = opt.ground_truth->data().squaredNorm();
    tr.nmse.push_back(ref > 0.0 ? (x.data() - opt.ground_truth->data()).squaredNorm() / ref
                                : std::numeric_limits<double>::quiet_NaN());
  }
}

inline void guard(const Vector& x, const Vector& y, double factor, Index k) {
  if (!x.allFinite()) throw NumericalError("solver: non-finite iterate", static_cast<long>(k));
  const double ny = y.norm();
  if (ny > 0.0 && x.norm() > factor * ny) throw NumericalError("solver: iterate diverged", static_cast<long>(k));
}

inline void warn_step(const BlockDictionary& D, double gamma) {
  const double L = operator_norm(D);
  if (!(gamma > 0.0) || gamma > 1.0 / (L * L))
    log::warn("step size " + std::to_string(gamma) + " outside (0, 1/||D||^2] = (0, " +
              std::to_string(1.0 / (L * L)) + "]");
}

}  // namespace detail

/// Block ISTA: x^(k) = eta_{alpha gamma}(x^(k-1) - gamma D^T (D x^(k-1) - y)).
inline SolverTrace bista_run(const BlockDictionary& D, const Vector& y, double alpha, double gamma, Index iters,
                             const BlockVector& x0, const SolverOptions& opt = {}) {
  detail::check_solver_inputs(D, y, x0, iters);
  detail::warn_step(D, gamma);
  SolverTrace tr;
  BlockVector x = x0;
  detail::record(tr, D, y, x, alpha, opt);
  for (Index k = 1; k <= iters; ++k) {
    Vector grad = D.data().transpose() * (D.data() * x.data() - y);
    BlockVector z(x.data() - gamma * grad, x.shape());
    x = block_soft_threshold(z, alpha * gamma).output;
    detail::guard(x.data(), y, opt.divergence_factor, k);
    detail::record(tr, D, y, x, alpha, opt);
  }
  return tr;
}

/// Block FISTA: the BISTA step is taken from the extrapolated point
/// x^(k) + ((t_k - 1)/t_{k+1}) (x^(k) - x^(k-1)), t_0 = 1.
inline SolverTrace fast_bista_run(const BlockDictionary& D, const Vector& y, double alpha, double gamma,
                                  Index iters, const BlockVector& x0, const SolverOptions& opt = {}) {
  detail::check_solver_inputs(D, y, x0, iters);
  detail::warn_step(D, gamma);
  SolverTrace tr;
  BlockVector x = x0;
  Vector prev = x0.data();
  double t = 1.0;
  detail::record(tr, D, y, x, alpha, opt);
  for (Index k = 1; k <= iters; ++k) {
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const Vector point = x.data() + ((t - 1.0) / t_next) * (x.data() - prev);
    const Vector grad = D.data().transpose() * (D.data() * point - y);
    prev = x.data();
    x = block_soft_threshold(BlockVector(point - gamma * grad, x.shape()), alpha * gamma).output;
    t = t_next;
    detail::guard(x.data(), y, opt.divergence_factor, k);
    detail::record(tr, D, y, x, alpha, opt);
  }
  return tr;
}

enum class OnsagerMode {
  Off,             // b^(k) = 0: plain (generalized) ISTA
  PerMeasurement,  // b^(k) = tr(d eta / dz) / n_y
  Raw,             // b^(k) = tr(d eta / dz)
};

struct AlampOptions : SolverOptions {
  OnsagerMode onsager = OnsagerMode::PerMeasurement;
};

/// Learned AMP with weight matrix B:
///   v^(k) = y - D x^(k) + b^(k) v^(k-1)
///   x^(k+1) = eta_alpha(x^(k) + gamma B^T v^(k))
/// with v^(-1) = 0, b^(0) = 0 and b^(k+1) the thresholder divergence at the latest pre-threshold point.
/// The recorded objective is the LASSO with penalty alpha/gamma, the problem the iteration targets when b = 0, B = D.
inline SolverTrace alamp_run(const BlockDictionary& D, const BlockDictionary& B, double alpha, double gamma,
                             Index iters, const Vector& y, const AlampOptions& opt = {}) {
  const BlockVector x0 = BlockVector::zeros(D.shape());
  detail::check_solver_inputs(D, y, x0, iters);
  if (B.rows() != D.rows() || B.shape() != D.shape()) throw Error("alamp_run: B and D shapes differ");
  if (alpha < 0.0) throw Error("alamp_run: alpha must be >= 0");
  const double penalty = gamma != 0.0 ? alpha / gamma : 0.0;
  SolverTrace tr;
  BlockVector x = x0;
  Vector v_prev = Vector::Zero(D.rows());
  double b = 0.0;
  detail::record(tr, D, y, x, penalty, opt);
  for (Index k = 1; k <= iters; ++k) {
    const Vector v = y - D.data() * x.data() + b * v_prev;
    const BlockVector z(x.data() + gamma * (B.data().transpose() * v), x.shape());
    x = block_soft_threshold(z, alpha).output;
    switch (opt.onsager) {
      case OnsagerMode::Off: b = 0.0; break;
      case OnsagerMode::PerMeasurement: b = onsager_trace(z, alpha, D.rows()); break;
      case OnsagerMode::Raw: b = onsager_trace(z, alpha, 1); break;
    }
    v_prev = v;
    if (!v.allFinite()) throw NumericalError("alamp_run: non-finite residual", static_cast<long>(k));
    detail::guard(x.data(), y, opt.divergence_factor, k);
    detail::record(tr, D, y, x, penalty, opt);
  }
  return tr;
}

}  // namespace blockunfold
