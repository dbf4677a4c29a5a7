#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "gridvlm/pipeline.hpp"

using namespace gridvlm;

int main(int argc, char** argv) {
  CLI::App app{"grid-world vision-language training laboratory"};
  app.require_subcommand(1);

  std::string config, out = "runs/default", ckpt;
  std::optional<uint64_t> seed;
  int workers = 1;
  bool force = false, skip_anchoring = false;

  auto add_common = [&](CLI::App* sc) {
    sc->add_option("--config", config, "run configuration (INI)")->required();
    sc->add_option("--seed", seed, "override the config seed");
    sc->add_option("--out", out, "output directory");
    sc->add_option("--workers", workers, "worker threads for evaluation");
    sc->add_flag("--force", force, "ignore artifact hash mismatches");
    return sc;
  };

  CLI::App* gen = add_common(app.add_subcommand("gen", "generate corpora and split manifest"));
  CLI::App* sft = add_common(app.add_subcommand("sft", "train the anchoring stage"));
  CLI::App* rl = add_common(app.add_subcommand("rl", "train the reinforcing stage"));
  rl->add_flag("--skip-anchoring", skip_anchoring,
               "start from the raw init checkpoint (vanilla mode only)");
  CLI::App* eval = add_common(app.add_subcommand("eval", "evaluate a checkpoint"));
  eval->add_option("--ckpt", ckpt, "checkpoint to evaluate (default: latest stage)");
  CLI::App* sweep = add_common(app.add_subcommand("sweep", "run the configured parameter sweep"));
  CLI::App* ablate =
      add_common(app.add_subcommand("ablate", "run the five-row ablation matrix"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  pipeline::Options opts;
  opts.config_path = config;
  opts.out_dir = out;
  opts.ckpt = ckpt;
  opts.workers = workers;
  opts.force = force;
  opts.skip_anchoring = skip_anchoring;
  opts.seed = seed;

  try {
    if (app.got_subcommand(gen)) pipeline::cmd_gen(opts);
    if (app.got_subcommand(sft)) pipeline::cmd_sft(opts);
    if (app.got_subcommand(rl)) pipeline::cmd_rl(opts);
    if (app.got_subcommand(eval)) pipeline::cmd_eval(opts);
    if (app.got_subcommand(sweep)) pipeline::cmd_sweep(opts);
    if (app.got_subcommand(ablate)) pipeline::cmd_ablate(opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const ArtifactError& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
