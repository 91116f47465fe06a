#pragma once

#include <optional>
#include <string>
#include <vector>

#include "blockcore.hpp"
#include "operators.hpp"
#include "solvers.hpp"
#include "weights.hpp"

namespace blockunfold {

/// Unfolded BISTA architectures.
///   TiedLBISTA       x <- eta_a(S x + B^T y)                     theta = (a^(k), S, B)
///   TiedLBISTA_CP    x <- eta_a(x - g^(k) B^T (D x - y))         theta = (a^(k), g^(k), B)
///   UntiedLBISTA     x <- eta_a(S^(k) x + B^(k)T y)              theta = (a^(k), S^(k), B^(k))
///   UntiedLBISTA_CP  x <- eta_a(x - g^(k) B^(k)T (D x - y))      theta = (a^(k), B^(k))
///   ALBISTA          x <- eta_a(x - g^(k) B~^T (D x - y))        theta = (a^(k), g^(k)), B~ fixed
enum class Variant { TiedLBISTA, TiedLBISTA_CP, UntiedLBISTA, UntiedLBISTA_CP, ALBISTA };

inline constexpr Variant kAllVariants[] = {Variant::TiedLBISTA, Variant::TiedLBISTA_CP, Variant::UntiedLBISTA,
                                           Variant::UntiedLBISTA_CP, Variant::ALBISTA};

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::TiedLBISTA: return "lbista_tied";
    case Variant::TiedLBISTA_CP: return "lbista_cp_tied";
    case Variant::UntiedLBISTA: return "lbista_untied";
    case Variant::UntiedLBISTA_CP: return "lbista_cp_untied";
    case Variant::ALBISTA: return "albista";
  }
  return "unknown";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : kAllVariants)
    if (to_string(v) == s) return v;
  throw Error("unknown network variant '" + s + "'");
}

inline bool uses_S(Variant v) { return v == Variant::TiedLBISTA || v == Variant::UntiedLBISTA; }
inline bool untied(Variant v) { return v == Variant::UntiedLBISTA || v == Variant::UntiedLBISTA_CP; }
inline bool trains_gamma(Variant v) { return v == Variant::TiedLBISTA_CP || v == Variant::ALBISTA; }
inline bool trains_B(Variant v) { return v != Variant::ALBISTA; }
/// Matrices shared by all layers and trained: layer-wise training cannot cache a frozen prefix.
inline bool has_shared_trainables(Variant v) { return v == Variant::TiedLBISTA || v == Variant::TiedLBISTA_CP; }

/// Per-layer tensors. The same layout stores parameters and their gradients.
struct LayerTensors {
  std::vector<double> alpha;  // one threshold per layer
  std::vector<double> gamma;  // one step size per layer (CP variants and ALBISTA)
  std::vector<Matrix> S;      // n_x x n_x; one (tied) or one per layer (untied); empty for CP variants
  std::vector<Matrix> B;      // n_y x n_x; one (tied, ALBISTA) or one per layer (untied)
};

struct NetworkParams : LayerTensors {
  Variant variant = Variant::ALBISTA;
  BlockShape shape{};
  Matrix D;  // measurement operator, never trained

  Index layers() const { return static_cast<Index>(alpha.size()); }
  Index n_y() const { return D.rows(); }
  Index n_x() const { return D.cols(); }

  const Matrix& S_at(Index layer) const { return S[untied(variant) ? static_cast<size_t>(layer) : 0]; }
  const Matrix& B_at(Index layer) const { return B[untied(variant) ? static_cast<size_t>(layer) : 0]; }

  void validate() const {
    const Index K = layers();
    const size_t mats = untied(variant) ? static_cast<size_t>(K) : 1;
    if (D.cols() != shape.size()) throw Error("NetworkParams: D does not match block shape");
    if (!uses_S(variant) && gamma.size() != static_cast<size_t>(K))
      throw Error("NetworkParams: variant " + to_string(variant) + " needs one gamma per layer");
    if (uses_S(variant) && S.size() != mats) throw Error("NetworkParams: wrong number of S matrices");
    if (!uses_S(variant) && !S.empty()) throw Error("NetworkParams: variant has no S matrices");
    if (B.size() != mats) throw Error("NetworkParams: wrong number of B matrices");
    for (const auto& s : S)
      if (s.rows() != n_x() || s.cols() != n_x()) throw Error("NetworkParams: S must be n_x x n_x");
    for (const auto& b : B)
      if (b.rows() != n_y() || b.cols() != n_x()) throw Error("NetworkParams: B must be n_y x n_x");
  }
};

using Gradients = LayerTensors;

inline Gradients zero_gradients(const NetworkParams& p) {
  Gradients g;
  g.alpha.assign(p.alpha.size(), 0.0);
  g.gamma.assign(p.gamma.size(), 0.0);
  for (const auto& s : p.S) g.S.push_back(Matrix::Zero(s.rows(), s.cols()));
  for (const auto& b : p.B) g.B.push_back(Matrix::Zero(b.rows(), b.cols()));
  return g;
}

/// Visits every trainable scalar of the variant in a fixed order. With `layer` set, only that
/// layer's parameters plus the shared (tied) matrices are visited.
template <class Tensors, class Fn>
void visit_trainable(Variant v, Tensors& t, std::optional<Index> layer, Fn&& fn) {
  const Index K = static_cast<Index>(t.alpha.size());
  auto in_scope = [&](Index k) { return !layer || *layer == k; };
  auto visit_matrix = [&](auto& m) {
    for (Index i = 0; i < m.size(); ++i) fn(m.data()[i]);
  };
  for (Index k = 0; k < K; ++k)
    if (in_scope(k)) fn(t.alpha[static_cast<size_t>(k)]);
  if (trains_gamma(v))
    for (Index k = 0; k < K; ++k)
      if (in_scope(k)) fn(t.gamma[static_cast<size_t>(k)]);
  if (uses_S(v)) {
    if (untied(v)) {
      for (Index k = 0; k < K; ++k)
        if (in_scope(k)) visit_matrix(t.S[static_cast<size_t>(k)]);
    } else {
      visit_matrix(t.S[0]);
    }
  }
  if (trains_B(v)) {
    if (untied(v)) {
      for (Index k = 0; k < K; ++k)
        if (in_scope(k)) visit_matrix(t.B[static_cast<size_t>(k)]);
    } else {
      visit_matrix(t.B[0]);
    }
  }
}

inline std::vector<double*> trainable_slots(NetworkParams& p, std::optional<Index> layer = std::nullopt) {
  std::vector<double*> out;
  visit_trainable(p.variant, static_cast<LayerTensors&>(p), layer, [&](double& x) { out.push_back(&x); });
  return out;
}

inline std::vector<double> flatten(Variant v, const LayerTensors& t, std::optional<Index> layer = std::nullopt) {
  std::vector<double> out;
  visit_trainable(v, const_cast<LayerTensors&>(t), layer, [&](double& x) { out.push_back(x); });
  return out;
}

inline Index trainable_parameter_count(const NetworkParams& p) {
  Index count = 0;
  visit_trainable(p.variant, const_cast<NetworkParams&>(p), std::nullopt, [&](double&) { ++count; });
  return count;
}

// ---------------------------------------------------------------------------
// Forward

/// Iterates of a (partial) pass: x[0] is the input state, x[j] the output of layer begin + j - 1,
/// z[j - 1] the corresponding pre-threshold activation. Columns are samples.
struct ForwardPass {
  Index begin = 0;
  std::vector<Matrix> x;
  std::vector<Matrix> z;

  const Matrix& output() const { return x.back(); }
};

/// Pre-threshold activation of `layer` applied to the state X.
inline Matrix layer_activation(const NetworkParams& p, Index layer, const Matrix& X, const Matrix& Y) {
  if (uses_S(p.variant)) return p.S_at(layer) * X + p.B_at(layer).transpose() * Y;
  const double g = p.gamma[static_cast<size_t>(layer)];
  return X - g * (p.B_at(layer).transpose() * (p.D * X - Y));
}

/// Runs layers [begin, end) starting from X_in (n_x x N) for observations Y (n_y x N).
inline ForwardPass forward_range(const NetworkParams& p, const Matrix& Y, const Matrix& X_in, Index begin, Index end) {
  if (begin < 0 || end < begin || end > p.layers())
    throw Error("forward: layer range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                std::to_string(p.layers()) + " layers");
  if (Y.rows() != p.n_y()) throw Error("forward: y has " + std::to_string(Y.rows()) + " rows, expected " +
                                       std::to_string(p.n_y()));
  if (X_in.rows() != p.n_x() || X_in.cols() != Y.cols()) throw Error("forward: input state shape mismatch");
  ForwardPass pass;
  pass.begin = begin;
  pass.x.reserve(static_cast<size_t>(end - begin + 1));
  pass.x.push_back(X_in);
  for (Index k = begin; k < end; ++k) {
    Matrix Z = layer_activation(p, k, pass.x.back(), Y);
    if (!Z.allFinite()) throw NumericalError("forward: non-finite activation at layer " + std::to_string(k + 1), k + 1);
    pass.x.push_back(detail::shrink_columns(Z, p.shape, p.alpha[static_cast<size_t>(k)]));
    pass.z.push_back(std::move(Z));
  }
  return pass;
}

/// Full pass from x^(0) = 0 through the first `layers` layers.
inline ForwardPass forward(const NetworkParams& p, const Matrix& Y, Index layers) {
  return forward_range(p, Y, Matrix::Zero(p.n_x(), Y.cols()), 0, layers);
}

/// Single-sample convenience: iterates x^(0..layers).
inline std::vector<BlockVector> forward_trace(const NetworkParams& p, const Vector& y, Index layers) {
  const ForwardPass pass = forward(p, Matrix(y), layers);
  std::vector<BlockVector> out;
  for (const auto& x : pass.x) out.emplace_back(Vector(x.col(0)), p.shape);
  return out;
}

// ---------------------------------------------------------------------------
// Backward

/// Gradient of sum_columns 1/2 ||x_out - x*||^2 for the pass output. With `only_layer` set,
/// per-layer gradients are produced for that layer only; shared matrices always receive
/// their full gradient. Layers before pass.begin are treated as constants.
inline Gradients backward(const NetworkParams& p, const Matrix& Y, const Matrix& Xstar, const ForwardPass& pass,
                          std::optional<Index> only_layer = std::nullopt) {
  if (Xstar.rows() != p.n_x() || Xstar.cols() != Y.cols()) throw Error("backward: x* shape mismatch");
  Gradients g = zero_gradients(p);
  const Index end = pass.begin + static_cast<Index>(pass.z.size());
  Index stop = pass.begin;
  if (only_layer && !has_shared_trainables(p.variant)) stop = std::max(stop, *only_layer);
  auto wants = [&](Index k) { return !only_layer || *only_layer == k; };

  Matrix G = pass.output() - Xstar;
  for (Index k = end - 1; k >= stop; --k) {
    const size_t j = static_cast<size_t>(k - pass.begin);
    const Matrix& Z = pass.z[j];
    const Matrix& X = pass.x[j];
    double ga = 0.0;
    const Matrix Gz = detail::shrink_columns_vjp(Z, p.shape, p.alpha[static_cast<size_t>(k)], G, ga);
    if (wants(k)) g.alpha[static_cast<size_t>(k)] += ga;
    const size_t mi = untied(p.variant) ? static_cast<size_t>(k) : 0;
    const bool matrix_in_scope = !untied(p.variant) || wants(k);
    if (uses_S(p.variant)) {
      if (matrix_in_scope) {
        g.S[mi].noalias() += Gz * X.transpose();
        g.B[mi].noalias() += Y * Gz.transpose();
      }
      if (k > stop) G = p.S_at(k).transpose() * Gz;
    } else {
      const double gamma = p.gamma[static_cast<size_t>(k)];
      const Matrix R = p.D * X - Y;
      const Matrix W = p.B_at(k) * Gz;
      if (wants(k)) g.gamma[static_cast<size_t>(k)] -= W.cwiseProduct(R).sum();
      if (matrix_in_scope && trains_B(p.variant)) g.B[mi].noalias() -= gamma * (R * Gz.transpose());
      if (k > stop) G = Gz - gamma * (p.D.transpose() * W);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Initialization

/// Parameters reproducing BISTA (alpha0, gamma = 1/(1.01||D||^2)) at initialization.
/// With analytic weights B~: CP variants use B = B~, S variants use B = gamma B~ and
/// S = I - gamma B~^T D. ALBISTA requires B~.
inline NetworkParams init_from_bista(Variant variant, const BlockDictionary& D, Index layers,
                                     const std::optional<Matrix>& analytic_B = std::nullopt, double alpha0 = 1.0) {
  if (layers < 0) throw Error("init_from_bista: layer count must be >= 0");
  if (variant == Variant::ALBISTA && !analytic_B) throw Error("init_from_bista: ALBISTA needs analytic weights");
  if (analytic_B && (analytic_B->rows() != D.rows() || analytic_B->cols() != D.cols()))
    throw Error("init_from_bista: analytic weights shape mismatch");
  const double gamma = default_step_size(D);
  NetworkParams p;
  p.variant = variant;
  p.shape = D.shape();
  p.D = D.data();
  p.alpha.assign(static_cast<size_t>(layers), alpha0 * gamma);
  const size_t mats = untied(variant) ? static_cast<size_t>(layers) : 1;
  const Matrix& Bbase = analytic_B ? *analytic_B : D.data();
  if (uses_S(variant)) {
    const Matrix S = Matrix::Identity(D.cols(), D.cols()) - gamma * Bbase.transpose() * D.data();
    p.S.assign(mats, S);
    p.B.assign(mats, gamma * Bbase);
  } else {
    p.gamma.assign(static_cast<size_t>(layers), gamma);
    p.B.assign(mats, Bbase);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Convolutional form of the ALBISTA gradient step

/// Kernel of the adjoint: circ(adjoint_kernel(b)) = circ(b)^T.
inline Vector adjoint_kernel(const Vector& b) {
  const Index n = b.size();
  Vector out(n);
  for (Index i = 0; i < n; ++i) out(i) = b((n - i) % n);
  return out;
}

struct ConvLayerForm {
  Vector kernel;  // f = e - gamma (b * k)
  std::string description;
};

/// With back-projection kernel b (circ(b) plays the role of B^T) and forward kernel k, the step
/// x - gamma b*(k*x - y) equals f*x + gamma (b*y) with f = e - gamma (b*k).
inline ConvLayerForm conv_layer_form(const Vector& b, const Vector& k, double gamma) {
  if (b.size() != k.size()) throw Error("conv_layer_form: kernel lengths differ");
  if (b.size() < 1) throw Error("conv_layer_form: empty kernel");
  Vector f = -gamma * circular_convolve(b, k);
  f(0) += 1.0;
  return {std::move(f), "conv(kernel f, len " + std::to_string(b.size()) + ") + gamma * conv(b, y)"};
}

inline Vector apply_conv_layer(const ConvLayerForm& layer, const Vector& b, double gamma, const Vector& x,
                               const Vector& y) {
  if (x.size() != layer.kernel.size() || y.size() != b.size()) throw Error("apply_conv_layer: length mismatch");
  return circular_convolve(layer.kernel, x) + gamma * circular_convolve(b, y);
}

/// Same step evaluated in the Fourier domain: F^{-1}((e^ - gamma b^ . k^) . x^) + gamma b*y.
inline Vector conv_layer_fft_step(const Vector& b, const Vector& k, double gamma, const Vector& x, const Vector& y) {
  if (b.size() != k.size() || x.size() != k.size() || y.size() != k.size())
    throw Error("conv_layer_fft_step: length mismatch");
  const auto bh = fft(b);
  const auto kh = fft(k);
  const auto xh = fft(x);
  const auto yh = fft(y);
  std::vector<std::complex<double>> out(bh.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - gamma * bh[i] * kh[i]) * xh[i] + gamma * bh[i] * yh[i];
  return ifft_real(out);
}

}  // namespace blockunfold
