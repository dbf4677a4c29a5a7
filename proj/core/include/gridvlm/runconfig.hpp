#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gridvlm/anchoring.hpp"
#include "gridvlm/model.hpp"
#include "gridvlm/reinforcing.hpp"

namespace gridvlm {

// One INI file drives the whole pipeline. Every knob has a default, unknown
// sections or keys are rejected with their line number, and the canonical
// form hashes identically regardless of comments or key order.
struct RunConfig {
  uint64_t seed = 1;

  struct World {
    int sft_tasks = 800;
    int rl_tasks = 1760;
    int eval_groups = 20;
    int variants_per_group = 10;
    // Task families cycled round-robin over every split. The default pair is
    // what the desk-scale model can actually learn; count and arithmetic stay
    // available behind this knob.
    std::vector<world::Family> families{world::Family::kLookup, world::Family::kCompare};

    world::Family family_at(int i) const {
      return families[static_cast<size_t>(i) % families.size()];
    }
  } world;

  vlm::ModelConfig model;
  anchor::AnchorConfig anchoring;
  rl::ReinforceConfig reinforcing;
  std::string rl_mode = "full";  // full | vanilla

  struct Eval {
    int max_new = 32;
    int heatmap_top_n = 4;
  } eval;

  struct Sweep {
    std::string param = "lambda_attn";  // lambda_attn | lambda_focus
    std::vector<double> values{0.0, 0.1, 1.0};
    std::vector<uint64_t> seeds{1, 2, 3};
  } sweep;

  void validate() const;
  std::string canonical() const;
  std::string hash() const;  // sha256 of canonical()

  // Hashes over the prefix of the canonical form that determines each stage's
  // output, so artifacts stay valid when only downstream sections change.
  std::string gen_hash() const;   // seed + [world]
  std::string sft_hash() const;   // ... + [model] + [anchoring]
  std::string rl_hash() const;    // ... + [reinforcing]
  std::string eval_hash() const;  // ... + [eval]
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace gridvlm
