#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "blockcore.hpp"
#include "log.hpp"
#include "unfolding.hpp"

namespace blockunfold {

struct SupportCheck {
  bool contained = true;
  std::optional<Index> first_violation_layer;  // index into the trace (0 = x^(0))
  std::optional<Index> sample;                 // column of the first violation (batched form)
};

/// supp_b(x^(k)) subset of supp_b(x*) for every iterate of a single trace.
inline SupportCheck check_support_containment(const std::vector<BlockVector>& trace, const BlockVector& x_star,
                                              std::optional<double> tol = std::nullopt) {
  const auto truth = block_support(x_star, tol);
  for (size_t k = 0; k < trace.size(); ++k)
    if (!is_subset(block_support(trace[k], tol), truth)) return {false, static_cast<Index>(k), std::nullopt};
  return {};
}

/// Batched form over a forward pass; reports the earliest violating layer.
inline SupportCheck check_support_containment(const ForwardPass& pass, const Matrix& Xstar, BlockShape shape,
                                              std::optional<double> tol = std::nullopt) {
  SupportCheck out;
  for (Index c = 0; c < Xstar.cols(); ++c) {
    std::vector<BlockVector> trace;
    for (const auto& x : pass.x) trace.emplace_back(Vector(x.col(c)), shape);
    const SupportCheck one = check_support_containment(trace, BlockVector(Vector(Xstar.col(c)), shape), tol);
    if (!one.contained && (!out.first_violation_layer || *one.first_violation_layer < *out.first_violation_layer))
      out = {false, one.first_violation_layer, c};
  }
  return out;
}

/// Quantities entering the upper bound on the unfolded error.
struct TheoremConstants {
  double mu_tilde_b = 0.0;   // cross block coherence achieved by the weight matrix
  double mu = 0.0;           // d * mu_tilde_b
  double C = 0.0;            // sup_k max_j |gamma^(k)| ||B[j]||_2
  std::vector<double> C_X;   // C_X[k] = max over the test set of ||x^(k) - x*||_{2,1}, k = 0..K
  double sigma = 0.0;        // noise bound
  Index d = 1;
};

/// C = max_k max_j |gamma_k| ||B[j]||_2
inline double constant_C(const std::vector<double>& gammas, const BlockDictionary& B) {
  double bmax = 0.0;
  for (Index j = 0; j < B.n(); ++j) bmax = std::max(bmax, spectral_norm(B.block(j)));
  double gmax = 0.0;
  for (double g : gammas) gmax = std::max(gmax, std::abs(g));
  return gmax * bmax;
}

/// max_j ||x^(k)_j - x*_j||_{2,1} for every cached layer output.
inline std::vector<double> measure_CX(const ForwardPass& pass, const Matrix& Xstar, BlockShape shape) {
  std::vector<double> out;
  for (const auto& X : pass.x) {
    double worst = 0.0;
    for (Index c = 0; c < X.cols(); ++c)
      worst = std::max(worst, l21_norm(BlockVector(Vector(X.col(c) - Xstar.col(c)), shape)));
    out.push_back(worst);
  }
  return out;
}

inline TheoremConstants measure_constants(const NetworkParams& p, const Matrix& Y, const Matrix& Xstar,
                                          double sigma) {
  if (uses_S(p.variant)) throw Error("measure_constants: theorem applies to variants with a step size");
  TheoremConstants tc;
  const BlockDictionary D(p.D, p.shape);
  const BlockDictionary B(p.B_at(0), p.shape);
  tc.d = p.shape.d;
  tc.mu_tilde_b = cross_block_coherence(B, D);
  tc.mu = static_cast<double>(tc.d) * tc.mu_tilde_b;
  tc.C = constant_C(p.gamma, B);
  tc.C_X = measure_CX(forward(p, Y, p.layers()), Xstar, p.shape);
  tc.sigma = sigma;
  return tc;
}

/// Largest block sparsity s with s < (1/mu + 1)/2.
inline Index sparsity_limit(double mu) {
  if (!(mu > 0.0)) return std::numeric_limits<Index>::max();
  const double bound = (1.0 / mu + 1.0) / 2.0;
  Index s = static_cast<Index>(std::ceil(bound)) - 1;
  return std::max<Index>(s, 0);
}

/// Upper end of the admissible step interval (0, 2/(mu(2s-1)+1)).
inline double step_upper_limit(double mu, Index s) {
  return 2.0 / (mu * (2.0 * static_cast<double>(s) - 1.0) + 1.0);
}

/// Sets alpha^(k) = kappa gamma^(k) mu C_X^(k) + C sigma layer by layer, measuring C_X^(k) on
/// (Y, X*) with the already calibrated prefix.
inline void calibrate_alpha_edge(NetworkParams& p, const Matrix& Y, const Matrix& Xstar, double mu, double sigma,
                                 double kappa = 1.0) {
  if (uses_S(p.variant)) throw Error("calibrate_alpha_edge: variant has no step size");
  const BlockDictionary B(p.B_at(0), p.shape);
  const double C = constant_C(p.gamma, B);
  Matrix X = Matrix::Zero(p.n_x(), Y.cols());
  for (Index k = 0; k < p.layers(); ++k) {
    double cx = 0.0;
    for (Index c = 0; c < X.cols(); ++c)
      cx = std::max(cx, l21_norm(BlockVector(Vector(X.col(c) - Xstar.col(c)), p.shape)));
    p.alpha[static_cast<size_t>(k)] = kappa * p.gamma[static_cast<size_t>(k)] * mu * cx + C * sigma;
    X = forward_range(p, Y, X, k, k + 1).output();
  }
}

struct KappaEstimate {
  double kappa = 0.0;               // max_k ratio
  double min_ratio = 0.0;           // must be >= 1 for the theorem to apply
  std::vector<double> ratios;       // (alpha^(k) - C sigma) / (gamma^(k) mu C_X^(k))
};

inline KappaEstimate estimate_kappa(const std::vector<double>& alpha, const std::vector<double>& gamma,
                                    const TheoremConstants& tc) {
  if (alpha.size() != gamma.size() || tc.C_X.size() < alpha.size())
    throw Error("estimate_kappa: parameter and constant lengths differ");
  KappaEstimate out;
  for (size_t k = 0; k < alpha.size(); ++k) {
    const double den = gamma[k] * tc.mu * tc.C_X[k];
    if (!(den > 0.0)) throw Error("estimate_kappa: non-positive denominator at layer " + std::to_string(k + 1));
    out.ratios.push_back((alpha[k] - tc.C * tc.sigma) / den);
  }
  if (out.ratios.empty()) throw Error("estimate_kappa: no layers");
  out.kappa = *std::max_element(out.ratios.begin(), out.ratios.end());
  out.min_ratio = *std::min_element(out.ratios.begin(), out.ratios.end());
  return out;
}

/// a~(tau) = -log(gamma mu ((kappa+1)s - 1) + |1 - gamma|)
inline double decay_exponent(double gamma, double mu, double kappa, Index s) {
  return -std::log(gamma * mu * ((kappa + 1.0) * static_cast<double>(s) - 1.0) + std::abs(1.0 - gamma));
}

/// Bound on ||x^(k) - x*||_2 for k = 0..K:
///   exp(-sum_{tau<k} a~(tau)) s M + s C sigma (1 + sum_{tau<k} exp(-sum_{tau<u<k} a~(u))).
inline std::vector<double> theorem1_bound_curve(const TheoremConstants& tc, const std::vector<double>& gammas,
                                                double kappa, Index s, double M, double sigma, Index K) {
  if (static_cast<Index>(gammas.size()) < K) throw Error("theorem1_bound_curve: fewer step sizes than layers");
  if (s >= 1 && !(static_cast<double>(s) < (1.0 / tc.mu + 1.0) / 2.0))
    log::warn("theorem1_bound_curve: sparsity " + std::to_string(s) + " violates s < (1/mu + 1)/2");
  std::vector<double> a(static_cast<size_t>(K));
  for (Index t = 0; t < K; ++t) {
    const double g = gammas[static_cast<size_t>(t)];
    if (!(g > 0.0 && g < step_upper_limit(tc.mu, s)))
      log::warn("theorem1_bound_curve: step size at layer " + std::to_string(t + 1) + " outside the hypothesis");
    a[static_cast<size_t>(t)] = decay_exponent(g, tc.mu, kappa, s);
  }
  const double sd = static_cast<double>(s);
  std::vector<double> out;
  for (Index k = 0; k <= K; ++k) {
    double head = 0.0;
    for (Index t = 0; t < k; ++t) head += a[static_cast<size_t>(t)];
    double noise = 1.0;
    for (Index t = 0; t < k; ++t) {
      double tail = 0.0;
      for (Index u = t + 1; u < k; ++u) tail += a[static_cast<size_t>(u)];
      noise += std::exp(-tail);
    }
    out.push_back(std::exp(-head) * sd * M + sd * tc.C * sigma * noise);
  }
  return out;
}

struct RateConstant {
  double sigma_bar_min = 0.0;
  double c = 0.0;  // +inf when sigma_bar_min = 0
};

/// sigma_bar = min over layers of sigma_min(I - B[S]^T D[S]); c = log 3 - log sigma_bar.
inline RateConstant theorem2_rate_constant(const std::vector<BlockDictionary>& B_layers, const BlockDictionary& D,
                                           const std::vector<Index>& support) {
  if (B_layers.empty()) throw Error("theorem2_rate_constant: no weight matrices");
  if (support.empty()) throw Error("theorem2_rate_constant: empty support");
  const Index d = D.d();
  const Index w = static_cast<Index>(support.size()) * d;
  auto restrict = [&](const BlockDictionary& M) {
    Matrix R(M.rows(), w);
    for (size_t j = 0; j < support.size(); ++j) {
      if (support[j] < 0 || support[j] >= M.n()) throw Error("theorem2_rate_constant: support index out of range");
      R.middleCols(static_cast<Index>(j) * d, d) = M.block(support[j]);
    }
    return R;
  };
  const Matrix DS = restrict(D);
  double sbar = std::numeric_limits<double>::infinity();
  for (const auto& B : B_layers) {
    if (B.shape() != D.shape() || B.rows() != D.rows()) throw Error("theorem2_rate_constant: B and D shapes differ");
    const Vector sv = singular_values(Matrix::Identity(w, w) - restrict(B).transpose() * DS);
    sbar = std::min(sbar, sv.minCoeff());
  }
  RateConstant rc;
  rc.sigma_bar_min = sbar <= 1e-14 ? 0.0 : sbar;
  rc.c = rc.sigma_bar_min == 0.0 ? std::numeric_limits<double>::infinity() : std::log(3.0) - std::log(sbar);
  return rc;
}

struct CoherenceChain {
  double mu_cross = 0.0;  // cross block coherence of the computed (B, D)
  double mu_tilde = 0.0;  // infimum estimate: best of B and the always-feasible B = D
  double mu_b = 0.0;      // block coherence of D
  double mu = 0.0;        // mutual coherence of D
  bool holds(double slack = 1e-8) const {
    return mu_tilde >= -slack && mu_tilde <= mu_b + slack && mu_b <= mu + slack && mu <= 1.0 + slack;
  }
};

/// The Frobenius-optimal B can have a larger max cross coherence than D itself on wide, short
/// dictionaries, so the computed value alone only bounds the infimum when it beats B = D.
inline CoherenceChain coherence_chain(const BlockDictionary& B, const BlockDictionary& D) {
  CoherenceChain c;
  c.mu_cross = cross_block_coherence(B, D);
  c.mu_b = block_coherence(D);
  c.mu_tilde = std::min(c.mu_cross, c.mu_b);
  c.mu = mutual_coherence(D.data());
  return c;
}

/// Per-layer diagnostic row.
struct LayerDiagnostic {
  Index layer = 0;
  double empirical_max_err = 0.0;
  double bound_rhs = 0.0;
  double alpha = 0.0;
  double gamma = 0.0;
  double kappa_ratio = 0.0;
};

/// Maximum l2 error per layer output 0..K over a forward pass.
inline std::vector<double> max_l2_error(const ForwardPass& pass, const Matrix& Xstar) {
  if (Xstar.cols() == 0) throw Error("max_l2_error: empty test set");
  std::vector<double> out;
  for (const auto& X : pass.x) out.push_back((X - Xstar).colwise().norm().maxCoeff());
  return out;
}

}  // namespace blockunfold
