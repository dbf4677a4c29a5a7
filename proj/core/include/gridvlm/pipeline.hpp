#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "gridvlm/prd.hpp"
#include "gridvlm/runconfig.hpp"

namespace gridvlm::pipeline {

struct Options {
  std::filesystem::path config_path;
  std::filesystem::path out_dir = "runs/default";
  std::optional<uint64_t> seed;  // overrides the config seed
  std::filesystem::path ckpt;    // eval only; empty = reinforced, then anchored
  int workers = 1;
  bool force = false;           // ignore stage-hash mismatches
  bool skip_anchoring = false;  // rl only: start from the raw init checkpoint
};

RunConfig effective_config(const Options& opts);

// Subcommand bodies. They throw ConfigError / InputError / ArtifactError /
// NumericError; the CLI maps those to exit codes.
void cmd_gen(const Options& opts);
void cmd_sft(const Options& opts);
void cmd_rl(const Options& opts);
void cmd_eval(const Options& opts);
void cmd_sweep(const Options& opts);
void cmd_ablate(const Options& opts);

// Reusable stage bodies working on explicit directories; cmd_sweep and
// cmd_ablate chain them under derived configs.
void run_gen(const RunConfig& cfg, const std::filesystem::path& out);
void run_sft(const RunConfig& cfg, const std::filesystem::path& out, bool force);
void run_rl(const RunConfig& cfg, const std::filesystem::path& out, bool skip_anchoring,
            bool force);
prd::PRDReport run_eval(const RunConfig& cfg, const std::filesystem::path& out,
                        const std::filesystem::path& ckpt_path, int workers, bool force);

}  // namespace gridvlm::pipeline
