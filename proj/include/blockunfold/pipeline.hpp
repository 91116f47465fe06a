#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "datagen.hpp"
#include "io.hpp"
#include "log.hpp"
#include "parallel.hpp"
#include "solvers.hpp"
#include "training.hpp"
#include "unfolding.hpp"
#include "verify.hpp"
#include "weights.hpp"

namespace blockunfold {

struct ExperimentConfig {
  ScenarioConfig scenario;
  Index n_train = 1000;
  Index n_validation = 250;
  Index n_test = 500;
  Variant variant = Variant::ALBISTA;
  Index depth = 16;
  WeightMethod weights_method = WeightMethod::Kronecker;
  bool init_with_weights = true;
  TrainConfig train;
  double baseline_alpha = 1.0;
  // theorem diagnostics
  bool verify_calibrate = false;
  double verify_gamma = 1.0;
  double verify_kappa = 1.0;
  Index verify_sparsity = 2;
  double verify_M = 3.0;
  Index verify_count = 500;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;
  int threads = 1;

  static ExperimentConfig from(const ConfigFile& f) {
    ExperimentConfig c;
    c.seed = static_cast<std::uint64_t>(f.get_int("run.seed", 0));
    c.threads = static_cast<int>(f.get_int("run.threads", 1));
    c.out = f.get("run.out", "out");
    auto& s = c.scenario;
    s.scenario = parse_scenario(f.get("scenario.kind", "gaussian"));
    s.m = f.get_int("scenario.m", s.m);
    s.n = f.get_int("scenario.n", s.n);
    s.d = f.get_int("scenario.d", s.d);
    s.pnz = f.get_double("scenario.pnz", s.pnz);
    s.snr_db = f.get_double("scenario.snr_db", s.snr_db);
    s.rank = f.get_int("scenario.rank", s.rank);
    c.n_train = f.get_int("data.n_train", c.n_train);
    c.n_validation = f.get_int("data.n_validation", c.n_validation);
    c.n_test = f.get_int("data.n_test", c.n_test);
    c.variant = parse_variant(f.get("network.variant", to_string(c.variant)));
    c.depth = f.get_int("network.depth", c.depth);
    c.weights_method = parse_weight_method(f.get("network.weights_method", to_string(c.weights_method)));
    c.init_with_weights = f.get_bool("network.init_with_weights", c.init_with_weights);
    auto& t = c.train;
    t.learning_rate = f.get_double("train.learning_rate", t.learning_rate);
    t.patience = f.get_int("train.patience", t.patience);
    t.tol_db = f.get_double("train.tol_db", t.tol_db);
    t.batch_size = f.get_int("train.batch_size", t.batch_size);
    t.eval_every = f.get_int("train.eval_every", t.eval_every);
    t.max_iters_per_layer = f.get_int("train.max_iters_per_layer", t.max_iters_per_layer);
    c.baseline_alpha = f.get_double("eval.baseline_alpha", c.baseline_alpha);
    c.verify_calibrate = f.get_bool("verify.calibrate", c.verify_calibrate);
    c.verify_gamma = f.get_double("verify.gamma", c.verify_gamma);
    c.verify_kappa = f.get_double("verify.kappa", c.verify_kappa);
    c.verify_sparsity = f.get_int("verify.sparsity", c.verify_sparsity);
    c.verify_M = f.get_double("verify.M", c.verify_M);
    c.verify_count = f.get_int("verify.count", c.verify_count);
    for (const auto& k : f.unused()) log::warn("config: unknown key '" + k + "' ignored");
    c.sync();
    return c;
  }

  /// Propagates the run-level seed and thread count into the nested configs.
  void sync() {
    scenario.seed = seed;
    train.seed = seed;
    train.threads = threads;
    train.n_train = n_train;
    train.n_validation = n_validation;
  }

  void validate() const {
    scenario.validate();
    train.validate();
    if (n_train < 1 || n_validation < 1) throw Error("config: n_train and n_validation must be >= 1");
    if (n_test < 0) throw Error("config: n_test must be >= 0");
    if (depth < 0) throw Error("config: depth must be >= 0");
    if (threads < 1) throw Error("config: threads must be >= 1");
    if (verify_count < 1 || verify_sparsity < 0) throw Error("config: verify.count must be >= 1, verify.sparsity >= 0");
    if (variant == Variant::ALBISTA && !init_with_weights)
      throw Error("config: ALBISTA requires analytic weights (network.init_with_weights = true)");
  }
};

namespace pipeline {

namespace fs = std::filesystem;

inline fs::path path(const ExperimentConfig& c, const std::string& name) { return c.out / name; }

inline void require(const fs::path& p, const std::string& produced_by) {
  if (!fs::exists(p)) throw Error("missing artifact " + p.string() + " (run '" + produced_by + "' first)");
}

inline void write_manifest(const fs::path& p, const std::vector<std::pair<std::string, std::string>>& kv) {
  auto os = io::open_out(p);
  for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
}

inline void save_dataset(const ExperimentConfig& c, const std::string& split, const Dataset& ds) {
  io::save_matrix(path(c, split + "_X.txt"), ds.X);
  io::save_matrix(path(c, split + "_Y.txt"), ds.Y);
}

inline Dataset load_dataset(const ExperimentConfig& c, const std::string& split) {
  require(path(c, split + "_X.txt"), "gen");
  require(path(c, split + "_Y.txt"), "gen");
  return {io::load_matrix(path(c, split + "_X.txt")), io::load_matrix(path(c, split + "_Y.txt"))};
}

inline MMVProblem load_problem(const ExperimentConfig& c) {
  require(path(c, "K.txt"), "gen");
  MMVProblem p;
  p.K = io::load_matrix(path(c, "K.txt"));
  p.d = c.scenario.d;
  p.kind = c.scenario.scenario == Scenario::Gaussian ? MatrixKind::Gaussian : MatrixKind::Circulant;
  if (p.K.rows() != c.scenario.m || p.K.cols() != c.scenario.n)
    throw Error("K.txt does not match the configured scenario dimensions");
  return p;
}

/// gen: measurement matrix, train/validation/test splits and a manifest.
inline void cmd_gen(const ExperimentConfig& c) {
  c.validate();
  Vector kernel;
  const MMVProblem P = make_problem(c.scenario, &kernel);
  const BlockDictionary D = kron_lift(P);
  io::save_matrix(path(c, "K.txt"), P.K);
  if (c.scenario.scenario == Scenario::CirculantRankDeficient) io::save_matrix(path(c, "kernel.txt"), Matrix(kernel));
  save_dataset(c, "train", gen_signals(c.scenario, D.data(), c.n_train, stream::kTrain));
  save_dataset(c, "validation", gen_signals(c.scenario, D.data(), c.n_validation, stream::kValidation));
  save_dataset(c, "test", gen_signals(c.scenario, D.data(), c.n_test, stream::kTest));
  write_manifest(path(c, "manifest.txt"),
                 {{"scenario", to_string(c.scenario.scenario)},
                  {"seed", std::to_string(c.seed)},
                  {"m", std::to_string(P.m())},
                  {"n", std::to_string(P.n())},
                  {"d", std::to_string(P.d)},
                  {"n_y", std::to_string(P.n_y())},
                  {"n_x", std::to_string(P.n_x())},
                  {"pnz", io::format_double(c.scenario.pnz)},
                  {"snr_db", io::format_double(c.scenario.snr_db)},
                  {"noise_variance", io::format_double(noise_variance(c.scenario))},
                  {"rank", std::to_string(numerical_rank(P.K, kPinvRtol))},
                  {"mu_K", io::format_double(P.n() >= 2 ? mutual_coherence(P.K) : 0.0)},
                  {"n_train", std::to_string(c.n_train)},
                  {"n_validation", std::to_string(c.n_validation)},
                  {"n_test", std::to_string(c.n_test)}});
}

/// Analytic weights for the configured method; reduced (m x n) unless the method works on the lifted D.
struct WeightResult {
  Matrix stored;
  bool lifted_by_kron = true;
  AnalyticWeights weights;
};

inline WeightResult compute_weights(const ExperimentConfig& c, const MMVProblem& P) {
  const BlockDictionary K1(P.K, BlockShape{P.n(), 1}, true);
  switch (c.weights_method) {
    case WeightMethod::Kronecker: {
      const AnalyticWeights base = closed_form_weights(K1);
      return {base.B.data(), true, kron_weights(P, base)};
    }
    case WeightMethod::SVD_d1: {
      const AnalyticWeights base = svd_weights_d1(K1);
      AnalyticWeights w = kron_weights(P, base);
      w.method = WeightMethod::SVD_d1;
      return {base.B.data(), true, std::move(w)};
    }
    case WeightMethod::CirculantFFT: {
      if (P.kind != MatrixKind::Circulant) throw Error("weights: circulant_fft requires the circulant scenario");
      require(path(c, "kernel.txt"), "gen");
      const Vector k = io::load_matrix(path(c, "kernel.txt")).col(0);
      const AnalyticWeights base = circulant_weights_fft(k);
      AnalyticWeights w = kron_weights(P, base);
      w.method = WeightMethod::CirculantFFT;
      w.rank = base.rank;
      return {base.B.data(), true, std::move(w)};
    }
    case WeightMethod::ClosedForm: {
      AnalyticWeights w = closed_form_weights(kron_lift(P));
      return {w.B.data(), false, std::move(w)};
    }
    case WeightMethod::KKT: {
      AnalyticWeights w = kkt_weights(kron_lift(P));
      return {w.B.data(), false, std::move(w)};
    }
    case WeightMethod::ToeplitzExt:
      throw Error("weights: toeplitz_ext needs a Toeplitz kernel; the generated scenarios are gaussian or circulant");
  }
  throw Error("weights: unknown method");
}

inline void cmd_weights(const ExperimentConfig& c) {
  c.validate();
  const MMVProblem P = load_problem(c);
  const auto t0 = std::chrono::steady_clock::now();
  const WeightResult r = compute_weights(c, P);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log::info("weights: method " + to_string(c.weights_method) + " took " + std::to_string(secs) + " s");
  const BlockDictionary D = kron_lift(P);
  io::save_matrix(path(c, "weights.txt"), r.stored);
  write_manifest(path(c, "weights_meta.txt"),
                 {{"method", to_string(r.weights.method)},
                  {"lift", r.lifted_by_kron ? "kron" : "none"},
                  {"feasibility_residual", io::format_double(r.weights.feasibility_residual)},
                  {"cross_block_coherence", io::format_double(r.weights.cross_coherence)},
                  {"block_coherence_D", io::format_double(D.n() >= 2 ? block_coherence(D) : 0.0)},
                  {"upper_bound_objective", io::format_double(upper_bound_objective(r.weights.B, D).value)},
                  {"rank", std::to_string(r.weights.rank)}});
}

inline std::map<std::string, std::string> read_manifest(const fs::path& p) {
  auto is = io::open_in(p);
  ConfigFile f = ConfigFile::parse(is, p.string());
  std::map<std::string, std::string> out;
  for (const char* k : {"method", "lift"}) out[k] = f.get(k, "");
  return out;
}

/// Lifted analytic B (n_y x n_x) written by the weights step.
inline Matrix load_weights(const ExperimentConfig& c, const MMVProblem& P) {
  require(path(c, "weights.txt"), "weights");
  require(path(c, "weights_meta.txt"), "weights");
  const Matrix stored = io::load_matrix(path(c, "weights.txt"));
  const auto meta = read_manifest(path(c, "weights_meta.txt"));
  if (meta.at("lift") == "kron") {
    if (stored.rows() != P.m() || stored.cols() != P.n()) throw Error("weights.txt does not match K");
    return kron(stored, Matrix::Identity(P.d, P.d));
  }
  if (stored.rows() != P.n_y() || stored.cols() != P.n_x()) throw Error("weights.txt does not match D");
  return stored;
}

inline NetworkParams initial_network(const ExperimentConfig& c, const MMVProblem& P) {
  const BlockDictionary D = kron_lift(P);
  std::optional<Matrix> B;
  if (c.init_with_weights) B = load_weights(c, P);
  return init_from_bista(c.variant, D, c.depth, B);
}

/// train: layer-wise training; writes checkpoint.txt, history.csv, layers.csv.
inline void cmd_train(const ExperimentConfig& c) {
  c.validate();
  const MMVProblem P = load_problem(c);
  NetworkParams net = initial_network(c, P);
  const Dataset train = load_dataset(c, "train");
  const Dataset val = load_dataset(c, "validation");
  const TrainHistory hist = layerwise_train(net, train, val, c.train);
  io::save_checkpoint(path(c, "checkpoint.txt"), net);
  io::CsvWriter h(path(c, "history.csv"), "blockunfold.history/1", {"step", "layer", "train_loss", "val_nmse_db"});
  for (const auto& e : hist.entries) h.row(e.step, e.layer, e.train_loss, e.val_nmse_db);
  io::CsvWriter l(path(c, "layers.csv"), "blockunfold.layers/1",
                  {"layer", "freeze_step", "val_nmse_db", "alpha", "gamma"});
  for (Index k = 0; k < net.layers(); ++k) {
    const size_t i = static_cast<size_t>(k);
    l.row(k + 1, hist.layer_boundaries[i], hist.freeze_nmse_db[i], net.alpha[i],
          net.gamma.empty() ? std::numeric_limits<double>::quiet_NaN() : net.gamma[i]);
  }
}

/// Per-iteration set NMSE (dB) of a per-sample solver over the test set.
template <class Solver>
std::vector<double> solver_nmse_curve(const Dataset& test, Index iters, int threads,
                                      Solver&& solve) {
  const Index chunks = chunk_count(test.size());
  std::vector<std::vector<double>> err(static_cast<size_t>(chunks), std::vector<double>(static_cast<size_t>(iters + 1)));
  for_each_chunk(test.size(), threads, [&](Index c, Index b, Index count) {
    for (Index j = b; j < b + count; ++j) {
      const SolverTrace tr = solve(Vector(test.Y.col(j)));
      for (Index k = 0; k <= iters; ++k)
        err[static_cast<size_t>(c)][static_cast<size_t>(k)] +=
            (tr.iterates[static_cast<size_t>(k)].data() - test.X.col(j)).squaredNorm();
    }
  });
  const double ref = test.X.squaredNorm();
  if (ref == 0.0) throw Error("eval: all test signals are zero");
  std::vector<double> out(static_cast<size_t>(iters + 1), 0.0);
  for (const auto& e : err)
    for (size_t k = 0; k < e.size(); ++k) out[k] += e[k];
  for (double& v : out) v = to_db(v / ref);
  return out;
}

/// eval: NMSE-vs-layer for the baselines and the trained network (long format).
inline void cmd_eval(const ExperimentConfig& c) {
  c.validate();
  const MMVProblem P = load_problem(c);
  const BlockDictionary D = kron_lift(P);
  const Dataset test = load_dataset(c, "test");
  if (test.size() == 0) throw Error("eval: the test set is empty (data.n_test = 0)");
  require(path(c, "checkpoint.txt"), "train");
  const NetworkParams trained = io::load_checkpoint(path(c, "checkpoint.txt"));
  if (trained.D.rows() != D.rows() || trained.D.cols() != D.cols()) throw Error("eval: checkpoint does not match K");
  const Index K = trained.layers();
  const double gamma = default_step_size(D);
  const BlockVector x0 = BlockVector::zeros(D.shape());

  std::vector<std::pair<std::string, std::vector<double>>> curves;
  curves.emplace_back("bista", solver_nmse_curve(test, K, c.threads, [&](const Vector& y) {
                        return bista_run(D, y, c.baseline_alpha, gamma, K, x0);
                      }));
  curves.emplace_back("fast_bista", solver_nmse_curve(test, K, c.threads, [&](const Vector& y) {
                        return fast_bista_run(D, y, c.baseline_alpha, gamma, K, x0);
                      }));
  if (c.init_with_weights) {
    const BlockDictionary B(load_weights(c, P), D.shape());
    // same threshold as BISTA; step normalized by ||B^T D|| the way BISTA's is by ||D||^2
    const double gamma_b = 1.0 / singular_values(B.data().transpose() * D.data())(0);
    curves.emplace_back("alamp", solver_nmse_curve(test, K, c.threads, [&](const Vector& y) {
                          return alamp_run(D, B, c.baseline_alpha * gamma, gamma_b, K, y);
                        }));
  }
  std::optional<Matrix> Ban;
  if (c.init_with_weights) Ban = load_weights(c, P);
  const NetworkParams untrained = init_from_bista(trained.variant, D, K, Ban);
  curves.emplace_back(to_string(trained.variant) + "_init", nmse_per_layer(untrained, test, c.threads));
  curves.emplace_back(to_string(trained.variant), nmse_per_layer(trained, test, c.threads));

  io::CsvWriter w(path(c, "eval.csv"), "blockunfold.eval/1", {"algorithm", "layer", "nmse_db"});
  for (const auto& [name, curve] : curves)
    for (size_t k = 0; k < curve.size(); ++k) w.row(name, static_cast<long>(k), curve[k]);
}

struct VerifyOutcome {
  bool passed = true;
  std::vector<std::string> failures;
};

/// verify: theorem diagnostics on in-class signals; passes iff every applicable assertion holds.
inline VerifyOutcome cmd_verify(const ExperimentConfig& c) {
  c.validate();
  VerifyOutcome res;
  auto fail = [&](const std::string& why) {
    res.passed = false;
    res.failures.push_back(why);
    log::warn("verify: " + why);
  };
  const MMVProblem P = load_problem(c);
  const BlockDictionary D = kron_lift(P);
  require(path(c, "checkpoint.txt"), "train");
  NetworkParams net = io::load_checkpoint(path(c, "checkpoint.txt"));
  const BlockDictionary Ban(load_weights(c, P), D.shape());

  std::vector<std::pair<std::string, std::string>> summary;
  auto put = [&](const std::string& k, double v) { summary.emplace_back(k, io::format_double(v)); };

  const double feas = feasibility_residual(Ban, D);
  put("feasibility_residual", feas);
  if (feas > kWeightFeasibilityTol) fail("analytic weights infeasible");
  const CoherenceChain chain = coherence_chain(Ban, D);
  put("mu_cross_b", chain.mu_cross);
  put("mu_tilde_b", chain.mu_tilde);
  put("mu_b", chain.mu_b);
  put("mu_D", chain.mu);
  summary.emplace_back("coherence_chain", chain.holds() ? "holds" : "violated");
  if (!chain.holds()) fail("coherence chain violated");

  const bool single_B = net.variant == Variant::ALBISTA || net.variant == Variant::TiedLBISTA_CP;
  if (!single_B) {
    summary.emplace_back("theorem", "not_applicable_variant");
  } else {
    const Index s = c.verify_sparsity;
    const Dataset set = gen_in_class(c.scenario, D.data(), SignalClass(c.verify_M, s, std::numeric_limits<double>::infinity()),
                                     c.verify_count, stream::kVerify);
    const double sigma = set.size() ? (set.Y - D.data() * set.X).colwise().norm().maxCoeff() : 0.0;
    const double mu = static_cast<double>(D.d()) * cross_block_coherence(BlockDictionary(net.B_at(0), D.shape()), D);
    if (c.verify_calibrate) {
      std::fill(net.gamma.begin(), net.gamma.end(), c.verify_gamma);
      calibrate_alpha_edge(net, set.Y, set.X, mu, sigma, c.verify_kappa);
    }
    const TheoremConstants tc = measure_constants(net, set.Y, set.X, sigma);
    put("mu", tc.mu);
    put("C", tc.C);
    put("sigma", sigma);
    summary.emplace_back("sparsity", std::to_string(s));
    summary.emplace_back("sparsity_limit", std::to_string(sparsity_limit(tc.mu)));
    put("step_upper_limit", step_upper_limit(tc.mu, s));

    std::optional<KappaEstimate> ke;
    try {
      ke = estimate_kappa(net.alpha, net.gamma, tc);
    } catch (const Error& e) {
      log::warn(std::string("verify: ") + e.what());
    }
    bool applicable = ke && ke->min_ratio >= 1.0 - 1e-12 && s < (1.0 / tc.mu + 1.0) / 2.0;
    for (double g : net.gamma) applicable = applicable && g > 0.0 && g < step_upper_limit(tc.mu, s);
    if (ke) {
      put("kappa", ke->kappa);
      put("min_ratio", ke->min_ratio);
    }
    summary.emplace_back("theorem", applicable ? "applicable" : "hypotheses_not_met");

    const ForwardPass pass = forward(net, set.Y, net.layers());
    const std::vector<double> err = max_l2_error(pass, set.X);
    std::vector<double> rhs(err.size(), std::numeric_limits<double>::quiet_NaN());
    if (ke) rhs = theorem1_bound_curve(tc, net.gamma, std::max(ke->kappa, 1.0), s, c.verify_M, sigma, net.layers());
    const SupportCheck sc = check_support_containment(pass, set.X, D.shape());
    summary.emplace_back("support_containment", sc.contained ? "holds" : "violated");
    if (!sc.contained) summary.emplace_back("first_violation_layer", std::to_string(*sc.first_violation_layer));
    bool bound_ok = true;
    for (size_t k = 0; k < err.size(); ++k) bound_ok = bound_ok && err[k] <= rhs[k] * (1.0 + 1e-9) + 1e-12;
    summary.emplace_back("bound", bound_ok ? "holds" : "violated");
    if (applicable && !sc.contained) fail("support containment violated at layer " + std::to_string(*sc.first_violation_layer));
    if (applicable && !bound_ok) fail("empirical error exceeds the theorem bound");

    std::vector<Index> support;
    for (Index j = 0; j < set.size() && support.size() < 2; ++j)
      support = block_support(BlockVector(Vector(set.X.col(j)), D.shape()));
    if (support.size() < 2) support = {0, 1};
    if (D.n() >= 2) {
      const RateConstant rc = theorem2_rate_constant({BlockDictionary(net.B_at(0), D.shape())}, D, support);
      put("sigma_bar_min", rc.sigma_bar_min);
      put("rate_constant_c", rc.c);
    }

    io::CsvWriter w(path(c, "verify.csv"), "blockunfold.verify/1",
                    {"layer", "empirical_max_err", "bound_rhs", "alpha", "gamma", "kappa_ratio"});
    for (size_t k = 0; k < err.size(); ++k) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      const bool has = k < net.alpha.size();
      w.row(static_cast<long>(k), err[k], rhs[k], has ? net.alpha[k] : nan, has ? net.gamma[k] : nan,
            (ke && has) ? ke->ratios[k] : nan);
    }
  }
  summary.emplace_back("status", res.passed ? "pass" : "fail");
  write_manifest(path(c, "verify_summary.txt"), summary);
  return res;
}

}  // namespace pipeline
}  // namespace blockunfold
