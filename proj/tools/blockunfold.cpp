#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "blockunfold/pipeline.hpp"

namespace bu = blockunfold;

int main(int argc, char** argv) {
  CLI::App app{"Block-sparse recovery with unfolded BISTA networks"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<long> seed, threads, depth;
  std::optional<std::string> out, variant, method;
  app.add_option("--config", config_path, "key=value experiment file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out, "output directory");
  app.add_option("--threads", threads, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
  app.add_option("--variant", variant,
                 "lbista_tied | lbista_cp_tied | lbista_untied | lbista_cp_untied | albista");
  app.add_option("--weights-method", method, "kronecker | closed_form | kkt | svd_d1 | circulant_fft | toeplitz_ext");
  app.add_option("--depth", depth, "number of layers")->check(CLI::NonNegativeNumber);

  const char* commands[][2] = {{"gen", "generate K and the train/validation/test splits"},
                               {"weights", "compute analytic weights"},
                               {"train", "layer-wise training"},
                               {"eval", "NMSE per layer on the test split"},
                               {"verify", "theorem diagnostics (exit 1 if an applicable check fails)"},
                               {"all", "gen, weights, train, eval, verify"}};
  for (const auto& c : commands) app.add_subcommand(c[0], c[1])->fallthrough();

  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    bu::ConfigFile file = config_path.empty() ? bu::ConfigFile{} : bu::ConfigFile::load(config_path);
    if (seed) file.set("run.seed", std::to_string(*seed));
    if (threads) file.set("run.threads", std::to_string(*threads));
    if (out) file.set("run.out", *out);
    if (variant) file.set("network.variant", *variant);
    if (method) file.set("network.weights_method", *method);
    if (depth) file.set("network.depth", std::to_string(*depth));
    const bu::ExperimentConfig cfg = bu::ExperimentConfig::from(file);

    bool ok = true;
    auto verify = [&] {
      const auto res = bu::pipeline::cmd_verify(cfg);
      for (const auto& f : res.failures) std::cerr << "verify failed: " << f << '\n';
      ok = res.passed;
    };
    if (cmd == "gen" || cmd == "all") bu::pipeline::cmd_gen(cfg);
    if (cmd == "weights" || cmd == "all") bu::pipeline::cmd_weights(cfg);
    if (cmd == "train" || cmd == "all") bu::pipeline::cmd_train(cfg);
    if (cmd == "eval" || cmd == "all") bu::pipeline::cmd_eval(cfg);
    if (cmd == "verify" || cmd == "all") verify();
    return ok ? EXIT_SUCCESS : EXIT_FAILURE;
  } catch (const std::exception& e) {
    std::cerr << "blockunfold " << cmd << ": " << e.what() << '\n';
    return 2;
  }
}
