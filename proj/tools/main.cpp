#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "chaosgrad/cli/config.hpp"
#include "chaosgrad/cli/experiments.hpp"
#include "chaosgrad/core/error.hpp"

namespace {

enum ExitCode { kOk = 0, kConfigError = 2, kNumericalError = 3, kIoError = 4 };

struct Flags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exploding-gradient diagnostics for unrolled dynamical systems"};
  app.require_subcommand(1);
  Flags flags;
  for (const auto& name : chaosgrad::cli::experiment_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", flags.config, "experiment config file")->required();
    sub->add_option("--out", flags.out, "output directory (overrides output.dir)");
    sub->add_option("--seed", flags.seed, "base seed (overrides seeds.base)");
    sub->add_option("--threads", flags.threads, "worker threads")
        ->check(CLI::Range(std::size_t{1}, std::size_t{1024}));
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    auto cfg = chaosgrad::cli::Config::load(flags.config);
    chaosgrad::cli::RunRequest req;
    req.name = name;
    req.seed = flags.seed;
    if (!flags.out.empty()) req.out_dir = flags.out;
    req.threads = flags.threads;
    const auto manifest = chaosgrad::cli::run_experiment(req, cfg);
    for (const auto& a : manifest.artifacts) std::printf("wrote %s\n", a.c_str());
    return kOk;
  } catch (const chaosgrad::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const chaosgrad::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIoError;
  } catch (const chaosgrad::NonFiniteError& e) {
    std::cerr << "numerical blowup: " << e.what() << '\n';
    return kNumericalError;
  } catch (const chaosgrad::ConvergenceError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumericalError;
  }
}
