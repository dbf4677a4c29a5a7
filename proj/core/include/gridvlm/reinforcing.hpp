#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gridvlm/anchoring.hpp"
#include "gridvlm/model.hpp"
#include "gridvlm/task.hpp"

namespace gridvlm::rl {

using vlm::Mat;

// Strategy for picking vision-dependent positions from the sensitivities.
struct VdRule {
  enum class Kind { kMeanStd, kQuantile, kFixed };
  Kind kind = Kind::kMeanStd;
  double k_std = 1.0;        // mean + k_std * population std
  double floor_nats = 1e-3;  // absolute floor applied on top of kMeanStd
  double quantile = 0.9;     // kQuantile: strictly above this empirical quantile
  double threshold = 0.1;    // kFixed: strictly above this value
};

struct ReinforceConfig {
  int group_size = 8;
  double temperature = 1.0;
  double tau_g = 2.0;
  double lambda_attn = 0.1;
  double clip_eps = 0.2;
  double kl_beta = 0.0;
  VdRule vd_selection;
  double attn_eps = 1e-6;
  double learning_rate = 0.002;
  uint64_t seed = 0;
  int steps = 60;
  int prompts_per_step = 4;
  int max_new = 32;
  std::vector<anchor::LayerHead> layer_head_set;  // empty = anchoring default

  std::vector<anchor::LayerHead> resolved_set(const vlm::ModelConfig& cfg) const;
  void validate(const vlm::ModelConfig& cfg) const;
};

struct RolloutRecord {
  std::string prompt_id;
  int rollout_id = 0;
  std::vector<int> response;
  std::vector<double> D;        // per response position, empty for vanilla runs
  std::vector<int> vd_set;      // sorted response positions
  double g = 0;
  int r_acc = 0;
  int r_format = 0;
  int r_attn = 0;
  std::vector<double> old_logprobs;  // behavior policy, recorded at sampling
  std::vector<double> ref_logprobs;  // reference policy, recorded when kl_beta != 0
};

// Per-position KL(p_t || p~_t) between next-token distributions under the
// original and masked images; exact summation over the vocabulary.
std::vector<double> visual_sensitivity(const vlm::ForwardTrace& trace_original,
                                       const vlm::ForwardTrace& trace_masked);

std::vector<int> select_vision_dependent(const std::vector<double>& D, const VdRule& rule);

// g = a_vd / (a_nonvd + attn_eps), where a_vd / a_nonvd average the attention
// mass from (non-)vision-dependent response positions onto the patch keys,
// over the measurement set. Empty vd_set gives g = 0.
double evidence_utilization(const vlm::ForwardTrace& trace, const std::vector<int>& vd_set,
                            const std::vector<anchor::LayerHead>& set, double attn_eps);

int answer_reward(const std::vector<int>& response, const std::vector<int>& gold_answer);
// 1 iff the response contains exactly one complete boxed span.
int format_reward(const std::vector<int>& response);
int attn_reward(double g, int r_acc, double tau_g);

// (r - mean) / population std; all zeros when std < 1e-12.
std::vector<double> grpo_advantage(const std::vector<double>& rewards);
std::vector<double> combine_advantages(const std::vector<double>& a_acc,
                                       const std::vector<double>& a_attn, double lambda_attn);

struct PromptContext {
  std::string prompt_id;
  Mat patch_px;
  std::vector<int> prompt;
};

// Clipped-ratio objective (higher is better) with the non-negative per-token
// KL estimate to the reference policy when kl_beta != 0.
double policy_loss(const PromptContext& ctx, const std::vector<RolloutRecord>& group,
                   const std::vector<double>& advantages, const vlm::Checkpoint& current,
                   const ReinforceConfig& cfg);

struct StepMetrics {
  int step = 0;
  double reward_acc = 0;   // mean r_acc over the step's rollouts
  double reward_format = 0;
  double mean_g = 0;
  double attn_rate = 0;    // fraction with r_attn = 1
  double objective = 0;    // mean policy objective value across prompts
};

struct TrainResult {
  vlm::Checkpoint checkpoint;
  std::vector<StepMetrics> metrics;
  std::vector<std::string> rollout_log;  // one JSON record per rollout
};

// Full reinforcing stage: groups of rollouts, counterfactual masking, split
// advantages, clipped policy ascent. The old policy refreshes every step; the
// reference policy is the frozen input checkpoint.
TrainResult train_reinforcing(const vlm::Checkpoint& anchored,
                              const std::vector<world::Task>& corpus,
                              const ReinforceConfig& cfg);

// Baseline: group-normalized advantages on the gated accuracy reward only.
// No masked passes, no attention channel.
TrainResult train_vanilla_grpo(const vlm::Checkpoint& start,
                               const std::vector<world::Task>& corpus,
                               const ReinforceConfig& cfg);

}  // namespace gridvlm::rl
