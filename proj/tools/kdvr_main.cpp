#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "kdvr/cli.hpp"
#include "kdvr/errors.hpp"

int main(int argc, char** argv) {
  using namespace kdvr::cli;

  CLI::App app{"Knowledge distillation as partial variance reduction: experiment driver"};
  app.require_subcommand(1);

  std::string config, out, seeds;
  std::size_t threads = 1;
  std::vector<std::string> inject;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config, "experiment config (JSON)");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (overrides output_dir)");
    sub->add_option("--seeds", seeds, "comma-separated seeds (overrides the config)");
    sub->add_option("--threads", threads, "concurrent runs")->check(CLI::PositiveNumber);
  };

  add_common(app.add_subcommand("train", "run every (lambda, seed) of the grid"), true);
  add_common(app.add_subcommand("sweep-lambda", "train and report the best lambda"), true);
  add_common(app.add_subcommand("diagnose", "teacher quality and gradient-gap diagnostics"), true);
  auto* verify = app.add_subcommand("verify", "run the property suite");
  add_common(verify, false);
  verify->add_option("--inject", inject, "deliberate fault (distillation-sign, rand-k-scale)")
      ->group("")
      ->check(CLI::IsMember({"distillation-sign", "rand-k-scale"}));
  add_common(app.add_subcommand("ingest", "convert a dataset to CSV"), true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  CommandOptions options;
  if (!config.empty()) options.config = config;
  if (!out.empty()) options.out = out;
  options.threads = threads;
  for (const auto& f : inject) {
    if (f == "distillation-sign") options.faults.flip_distillation_sign = true;
    if (f == "rand-k-scale") options.faults.rand_k_bad_scale = true;
  }
  try {
    if (!seeds.empty()) options.seeds = parse_seed_list(seeds);
  } catch (const kdvr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  return run_command(app.get_subcommands().front()->get_name(), options, std::cout, std::cerr);
}
