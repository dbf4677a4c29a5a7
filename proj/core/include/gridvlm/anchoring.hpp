#pragma once

#include <vector>

#include "gridvlm/geometry.hpp"
#include "gridvlm/model.hpp"
#include "gridvlm/task.hpp"

namespace gridvlm::anchor {

struct LayerHead {
  int layer = 0;
  int head = 0;
  bool operator==(const LayerHead&) const = default;
};

// All heads of the last four layers (the whole stack when layers <= 4).
std::vector<LayerHead> default_layer_head_set(const vlm::ModelConfig& cfg);

struct AnchorConfig {
  double tau = 0.8;           // target attention mass on evidence patches
  double lambda_focus = 0.1;  // weight of the focus loss in the SFT objective
  std::vector<LayerHead> layer_head_set;  // empty = default set
  double learning_rate = 1e-3;
  int epochs = 64;
  int batch_size = 8;
  uint64_t seed = 0;

  std::vector<LayerHead> resolved_set(const vlm::ModelConfig& cfg) const;
  void validate(const vlm::ModelConfig& cfg) const;
};

// Prompt layout: [patches][question][perceive cues into][<focus>][then think].
std::vector<int> inject_focus_prompt(const std::vector<int>& question);

// Numerical guard applied to attention mass before the logs.
constexpr double kMassEps = 1e-8;

// Attention mass from the <focus> query onto the given patch keys, clamped to
// [kMassEps, 1-kMassEps]. An empty patch set degenerates to kMassEps with a
// warning on stderr.
double focus_mass(const vlm::ForwardTrace& trace, const world::PatchSet& patches, LayerHead lh);

// Binary cross-entropy pulling s toward tau.
double focus_loss(double s, double tau);

// Mean focus loss over the measurement set.
double focus_loss_total(const vlm::ForwardTrace& trace, const world::PatchSet& patches,
                        const AnchorConfig& cfg, const vlm::ModelConfig& mcfg);

double mean_focus_mass(const vlm::ForwardTrace& trace, const world::PatchSet& patches,
                       const AnchorConfig& cfg, const vlm::ModelConfig& mcfg);

// Summed (not averaged) over response positions.
double ce_loss(const vlm::ForwardTrace& trace);

double sft_objective(const vlm::ForwardTrace& trace, const world::PatchSet& patches,
                     const AnchorConfig& cfg, const vlm::ModelConfig& mcfg);

struct StepMetrics {
  int step = 0;
  double ce = 0;
  double focus_loss = 0;
  double mean_s = 0;
  double lambda = 0;
  double tau = 0;
};

struct TrainResult {
  vlm::Checkpoint checkpoint;
  std::vector<StepMetrics> metrics;
  bool diverged = false;
};

// Hybrid SFT: batch loss = mean over samples of (ce + lambda * focus), Adam
// updates. On divergence returns the last finite state with diverged = true.
// With lambda_focus = 0 the focus term is never built, so the parameter
// trajectory matches train_vanilla_sft bit for bit.
TrainResult train_anchoring(const vlm::Checkpoint& init, const std::vector<world::Task>& corpus,
                            const AnchorConfig& cfg);

// Plain CE baseline trainer; same batching, shuffling, and update rule.
TrainResult train_vanilla_sft(const vlm::Checkpoint& init, const std::vector<world::Task>& corpus,
                              const AnchorConfig& cfg);

}  // namespace gridvlm::anchor
