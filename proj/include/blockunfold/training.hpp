#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "datagen.hpp"
#include "log.hpp"
#include "parallel.hpp"
#include "unfolding.hpp"

namespace blockunfold {

/// Reported in place of -inf dB for an exact reconstruction.
inline constexpr double kNmseFloorDb = -300.0;

inline double nmse(const Vector& x_hat, const Vector& x_star) {
  if (x_hat.size() != x_star.size()) throw Error("nmse: length mismatch");
  const double ref = x_star.squaredNorm();
  if (ref == 0.0) throw Error("nmse: reference signal is zero");
  return (x_hat - x_star).squaredNorm() / ref;
}

inline double to_db(double ratio) { return ratio > 0.0 ? 10.0 * std::log10(ratio) : kNmseFloorDb; }

inline double nmse_db(const Vector& x_hat, const Vector& x_star) { return to_db(nmse(x_hat, x_star)); }

/// Set-level NMSE sum_j ||xhat_j - x*_j||^2 / sum_j ||x*_j||^2 over columns.
inline double nmse_set(const Matrix& X_hat, const Matrix& X_star) {
  if (X_hat.rows() != X_star.rows() || X_hat.cols() != X_star.cols()) throw Error("nmse_set: shape mismatch");
  const double ref = X_star.squaredNorm();
  if (ref == 0.0) throw Error("nmse_set: reference set is zero");
  return (X_hat - X_star).squaredNorm() / ref;
}

inline double nmse_set_db(const Matrix& X_hat, const Matrix& X_star) { return to_db(nmse_set(X_hat, X_star)); }

/// (1/N) sum_j 1/2 ||xhat_j - x*_j||^2
inline double empirical_risk(const Matrix& X_hat, const Matrix& X_star) {
  if (X_hat.cols() == 0) throw Error("empirical_risk: empty batch");
  if (X_hat.rows() != X_star.rows() || X_hat.cols() != X_star.cols()) throw Error("empirical_risk: shape mismatch");
  return 0.5 * (X_hat - X_star).squaredNorm() / static_cast<double>(X_hat.cols());
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long t = 0;

  explicit AdamState(size_t size = 0) : m(size, 0.0), v(size, 0.0) {}
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adam_step(const std::vector<double*>& params, const std::vector<double>& grads, AdamState& state,
                      double lr, const AdamHyper& h = {}) {
  if (params.size() != grads.size() || state.m.size() != grads.size())
    throw Error("adam_step: parameter, gradient and state sizes differ");
  for (size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i])) throw NumericalError("adam_step: non-finite gradient entry " + std::to_string(i), state.t + 1);
  ++state.t;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < grads.size(); ++i) {
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * grads[i];
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    *params[i] -= lr * mhat / (std::sqrt(vhat) + h.eps);
  }
}

// ---------------------------------------------------------------------------
// Layer-wise training

inline constexpr double kAlphaFloor = 1e-8;

struct TrainConfig {
  double learning_rate = 1e-3;
  long patience = 5000;          // validation evaluations without a new best
  double tol_db = 1e-5;          // improvement needed for a new best
  Index n_train = 1000;
  Index n_validation = 250;
  Index batch_size = 250;
  long eval_every = 10;          // optimizer steps between validation evaluations
  long max_iters_per_layer = 200000;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw Error("TrainConfig: learning_rate must be >= 0");
    if (patience < 1) throw Error("TrainConfig: patience must be >= 1");
    if (!(tol_db >= 0.0)) throw Error("TrainConfig: tol must be >= 0");
    if (batch_size < 1 || eval_every < 1 || max_iters_per_layer < 1)
      throw Error("TrainConfig: batch_size, eval_every and max_iters_per_layer must be >= 1");
  }
};

/// One row per validation evaluation.
struct HistoryEntry {
  long step = 0;        // global optimizer step count
  Index layer = 0;      // 1-based layer being trained
  double train_loss = 0.0;
  double val_nmse_db = 0.0;
};

struct TrainHistory {
  std::vector<HistoryEntry> entries;
  std::vector<long> layer_boundaries;   // global step at which each layer was frozen
  std::vector<double> freeze_nmse_db;   // validation NMSE of the frozen prefix
};

namespace detail {

/// Batch loss and gradient with respect to layer `layer` (plus shared matrices), averaged
/// over columns. Columns are processed in fixed chunks and reduced in chunk order.
struct LayerObjective {
  double loss = 0.0;
  std::vector<double> grad;
};

inline LayerObjective layer_objective(const NetworkParams& p, const Matrix& Y, const Matrix& Xstar,
                                      const Matrix& X_in, Index begin, Index layer, int threads) {
  const Index N = Y.cols();
  const Index chunks = chunk_count(N);
  std::vector<double> losses(static_cast<size_t>(chunks));
  std::vector<Gradients> grads(static_cast<size_t>(chunks));
  for_each_chunk(N, threads, [&](Index c, Index b, Index count) {
    const Matrix Yc = Y.middleCols(b, count);
    const Matrix Xs = Xstar.middleCols(b, count);
    const ForwardPass pass = forward_range(p, Yc, X_in.middleCols(b, count), begin, layer + 1);
    losses[static_cast<size_t>(c)] = 0.5 * (pass.output() - Xs).squaredNorm();
    grads[static_cast<size_t>(c)] = backward(p, Yc, Xs, pass, layer);
  });
  LayerObjective out;
  std::vector<double> total;
  for (Index c = 0; c < chunks; ++c) {
    out.loss += losses[static_cast<size_t>(c)];
    const std::vector<double> flat = flatten(p.variant, grads[static_cast<size_t>(c)], layer);
    if (total.empty()) total.assign(flat.size(), 0.0);
    for (size_t i = 0; i < flat.size(); ++i) total[i] += flat[i];
  }
  const double inv = 1.0 / static_cast<double>(N);
  out.loss *= inv;
  for (double& g : total) g *= inv;
  out.grad = std::move(total);
  return out;
}

/// States after running layers [begin, end) from X_in, chunked like the gradient path.
inline Matrix advance(const NetworkParams& p, const Matrix& Y, const Matrix& X_in, Index begin, Index end,
                      int threads) {
  Matrix out(X_in.rows(), X_in.cols());
  for_each_chunk(Y.cols(), threads, [&](Index, Index b, Index count) {
    out.middleCols(b, count) = forward_range(p, Y.middleCols(b, count), X_in.middleCols(b, count), begin, end).output();
  });
  return out;
}

}  // namespace detail

/// Layer-wise training: for k = 1..K, Adam updates only layer k's parameters (and the shared
/// matrices of tied variants) on minibatches drawn with replacement, evaluating validation
/// NMSE every `eval_every` steps. A layer stops after `patience` evaluations without an
/// improvement above tol; its best parameters are restored before it is frozen.
inline TrainHistory layerwise_train(NetworkParams& params, const Dataset& train, const Dataset& validation,
                                    const TrainConfig& cfg) {
  cfg.validate();
  params.validate();
  if (train.size() == 0 || validation.size() == 0) throw Error("layerwise_train: empty training or validation set");
  if (train.X.rows() != params.n_x() || train.Y.rows() != params.n_y() || validation.X.rows() != params.n_x() ||
      validation.Y.rows() != params.n_y())
    throw Error("layerwise_train: dataset dimensions do not match the network");

  TrainHistory hist;
  auto eng = make_engine(cfg.seed, stream::kBatches);
  std::uniform_int_distribution<Index> pick(0, train.size() - 1);
  const bool cache_prefix = !has_shared_trainables(params.variant);
  Matrix train_state = Matrix::Zero(params.n_x(), train.size());
  Matrix val_state = Matrix::Zero(params.n_x(), validation.size());
  long step = 0;

  for (Index layer = 0; layer < params.layers(); ++layer) {
    const Index begin = cache_prefix ? layer : 0;
    auto val_nmse = [&] {
      return nmse_set_db(detail::advance(params, validation.Y, val_state, begin, layer + 1, cfg.threads),
                         validation.X);
    };
    std::vector<double*> slots = trainable_slots(params, layer);
    AdamState adam(slots.size());
    auto snapshot = [&] {
      std::vector<double> v;
      v.reserve(slots.size());
      for (double* s : slots) v.push_back(*s);
      return v;
    };

    double best = val_nmse();
    const double initial = best;
    std::vector<double> best_values = snapshot();
    long since_best = 0;
    long iters = 0;
    Matrix Yb(params.n_y(), cfg.batch_size), Xb(params.n_x(), cfg.batch_size), Sb(params.n_x(), cfg.batch_size);

    while (since_best < cfg.patience && iters < cfg.max_iters_per_layer) {
      for (Index j = 0; j < cfg.batch_size; ++j) {
        const Index c = pick(eng);
        Yb.col(j) = train.Y.col(c);
        Xb.col(j) = train.X.col(c);
        Sb.col(j) = train_state.col(c);
      }
      const auto obj = detail::layer_objective(params, Yb, Xb, Sb, begin, layer, cfg.threads);
      adam_step(slots, obj.grad, adam, cfg.learning_rate);
      double& a = params.alpha[static_cast<size_t>(layer)];
      a = std::max(a, kAlphaFloor);
      ++iters;
      ++step;
      if (iters % cfg.eval_every == 0) {
        const double v = val_nmse();
        hist.entries.push_back({step, layer + 1, obj.loss, v});
        if (v < best - cfg.tol_db) {
          best = v;
          best_values = snapshot();
          since_best = 0;
        } else {
          ++since_best;
        }
      }
    }
    for (size_t i = 0; i < slots.size(); ++i) *slots[i] = best_values[i];
    if (!(best < initial - cfg.tol_db))
      log::warn("layer " + std::to_string(layer + 1) + " did not improve within " + std::to_string(iters) +
                " steps; keeping its initial parameters");
    hist.layer_boundaries.push_back(step);
    hist.freeze_nmse_db.push_back(best);
    if (cache_prefix) {
      train_state = detail::advance(params, train.Y, train_state, layer, layer + 1, cfg.threads);
      val_state = detail::advance(params, validation.Y, val_state, layer, layer + 1, cfg.threads);
    }
    log::info("layer " + std::to_string(layer + 1) + " frozen at step " + std::to_string(step) +
              ", validation NMSE " + std::to_string(best) + " dB");
  }
  return hist;
}

/// Set NMSE (dB) of every layer output 0..K on (X*, Y); entry 0 is the zero initial state.
inline std::vector<double> nmse_per_layer(const NetworkParams& p, const Dataset& data, int threads = 1) {
  if (data.size() == 0) throw Error("nmse_per_layer: empty dataset");
  const Index K = p.layers();
  const Index chunks = chunk_count(data.size());
  std::vector<std::vector<double>> err(static_cast<size_t>(chunks), std::vector<double>(static_cast<size_t>(K + 1)));
  for_each_chunk(data.size(), threads, [&](Index c, Index b, Index count) {
    const Matrix Xs = data.X.middleCols(b, count);
    const ForwardPass pass = forward(p, data.Y.middleCols(b, count), K);
    for (Index k = 0; k <= K; ++k)
      err[static_cast<size_t>(c)][static_cast<size_t>(k)] = (pass.x[static_cast<size_t>(k)] - Xs).squaredNorm();
  });
  const double ref = data.X.squaredNorm();
  if (ref == 0.0) throw Error("nmse_per_layer: reference set is zero");
  std::vector<double> out(static_cast<size_t>(K + 1), 0.0);
  for (const auto& e : err)
    for (size_t k = 0; k < e.size(); ++k) out[k] += e[k];
  for (double& v : out) v = to_db(v / ref);
  return out;
}

}  // namespace blockunfold
