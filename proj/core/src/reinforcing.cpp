#include "gridvlm/reinforcing.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>

#include "gridvlm/optim.hpp"
#include "gridvlm/vocab.hpp"

namespace gridvlm::rl {

using ordered_json = nlohmann::ordered_json;

std::vector<anchor::LayerHead> ReinforceConfig::resolved_set(const vlm::ModelConfig& cfg) const {
  return layer_head_set.empty() ? anchor::default_layer_head_set(cfg) : layer_head_set;
}

void ReinforceConfig::validate(const vlm::ModelConfig& cfg) const {
  if (group_size < 2) throw ConfigError("group_size must be >= 2");
  if (temperature <= 0) throw ConfigError("temperature must be positive");
  if (tau_g <= 0) throw ConfigError("tau_g must be positive");
  if (!(clip_eps > 0 && clip_eps < 1)) throw ConfigError("clip_eps must be in (0,1)");
  if (kl_beta < 0) throw ConfigError("kl_beta must be >= 0");
  if (lambda_attn < 0) throw ConfigError("lambda_attn must be >= 0");
  if (attn_eps <= 0) throw ConfigError("attn_eps must be positive");
  if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
  if (steps <= 0) throw ConfigError("steps must be positive");
  if (prompts_per_step <= 0) throw ConfigError("prompts_per_step must be positive");
  if (max_new <= 0) throw ConfigError("max_new must be positive");
  if (vd_selection.kind == VdRule::Kind::kQuantile &&
      !(vd_selection.quantile >= 0 && vd_selection.quantile < 1))
    throw ConfigError("vd quantile must be in [0,1)");
  for (const anchor::LayerHead& lh : resolved_set(cfg)) {
    if (lh.layer < 0 || lh.layer >= cfg.layers || lh.head < 0 || lh.head >= cfg.heads)
      throw ConfigError("layer_head_set entry outside model dimensions");
  }
}

std::vector<double> visual_sensitivity(const vlm::ForwardTrace& trace_original,
                                       const vlm::ForwardTrace& trace_masked) {
  const auto& a = trace_original;
  const auto& b = trace_masked;
  if (a.response != b.response || a.layout.total() != b.layout.total() ||
      a.layout.response_begin() != b.layout.response_begin())
    throw InputError("visual_sensitivity: traces disagree on layout or response");
  std::vector<double> D;
  D.reserve(a.response.size());
  for (int j = 0; j < a.layout.response_len; ++j) {
    int row = a.layout.response_begin() + j - 1;
    auto lp = a.logprobs.row(row).array();
    auto lq = b.logprobs.row(row).array();
    D.push_back((lp.exp() * (lp - lq)).sum());
  }
  return D;
}

std::vector<int> select_vision_dependent(const std::vector<double>& D, const VdRule& rule) {
  if (D.empty()) return {};
  double cut = 0;
  switch (rule.kind) {
    case VdRule::Kind::kMeanStd: {
      double mean = 0;
      for (double d : D) mean += d;
      mean /= static_cast<double>(D.size());
      double var = 0;
      for (double d : D) var += (d - mean) * (d - mean);
      var /= static_cast<double>(D.size());
      cut = std::max(mean + rule.k_std * std::sqrt(var), rule.floor_nats);
      break;
    }
    case VdRule::Kind::kQuantile: {
      std::vector<double> sorted = D;
      std::sort(sorted.begin(), sorted.end());
      // Nearest-rank empirical quantile: smallest value with CDF >= quantile.
      auto rank = static_cast<size_t>(
          std::ceil(rule.quantile * static_cast<double>(sorted.size())));
      rank = std::clamp<size_t>(rank, 1, sorted.size());
      cut = sorted[rank - 1];
      break;
    }
    case VdRule::Kind::kFixed:
      cut = rule.threshold;
      break;
  }
  std::vector<int> out;
  for (size_t t = 0; t < D.size(); ++t)
    if (D[t] > cut) out.push_back(static_cast<int>(t));
  return out;
}

double evidence_utilization(const vlm::ForwardTrace& trace, const std::vector<int>& vd_set,
                            const std::vector<anchor::LayerHead>& set, double attn_eps) {
  int n = trace.layout.response_len;
  if (n == 0) throw InputError("evidence_utilization needs a non-empty response");
  if (set.empty()) throw ConfigError("measurement set must not be empty");
  if (vd_set.empty()) return 0.0;
  std::vector<bool> is_vd(static_cast<size_t>(n), false);
  for (int t : vd_set) {
    if (t < 0 || t >= n) throw InputError("vd position out of response range");
    is_vd[static_cast<size_t>(t)] = true;
  }
  double sum_vd = 0, sum_nonvd = 0;
  int n_vd = 0, n_nonvd = 0;
  for (int t = 0; t < n; ++t) {
    int pos = trace.layout.response_begin() + t;
    double mass = 0;
    for (const anchor::LayerHead& lh : set)
      mass += trace.attn(lh.layer, lh.head).row(pos).head(trace.layout.patch_count).sum();
    mass /= static_cast<double>(set.size());
    if (is_vd[static_cast<size_t>(t)]) {
      sum_vd += mass;
      ++n_vd;
    } else {
      sum_nonvd += mass;
      ++n_nonvd;
    }
  }
  double a_vd = sum_vd / static_cast<double>(n_vd);
  double a_nonvd = n_nonvd > 0 ? sum_nonvd / static_cast<double>(n_nonvd) : 0.0;
  return a_vd / (a_nonvd + attn_eps);
}

int answer_reward(const std::vector<int>& response, const std::vector<int>& gold_answer) {
  auto boxed = world::extract_boxed_answer(response);
  return boxed && *boxed == gold_answer ? 1 : 0;
}

int format_reward(const std::vector<int>& response) {
  int complete = 0;
  bool open = false;
  for (int id : response) {
    if (id == vocab::kBoxOpen) {
      open = true;
    } else if (id == vocab::kBoxClose) {
      if (!open) return 0;
      open = false;
      ++complete;
    }
  }
  return complete == 1 && !open ? 1 : 0;
}

int attn_reward(double g, int r_acc, double tau_g) {
  return (g > tau_g && r_acc == 1) ? 1 : 0;
}

std::vector<double> grpo_advantage(const std::vector<double>& rewards) {
  size_t n = rewards.size();
  if (n < 2) throw InputError("advantage group needs at least 2 rollouts");
  double mean = 0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(n);
  double var = 0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(n);
  double std = std::sqrt(var);
  std::vector<double> out(n, 0.0);
  if (std < 1e-12) return out;
  for (size_t i = 0; i < n; ++i) out[i] = (rewards[i] - mean) / std;
  return out;
}

std::vector<double> combine_advantages(const std::vector<double>& a_acc,
                                       const std::vector<double>& a_attn, double lambda_attn) {
  if (a_acc.size() != a_attn.size()) throw InputError("advantage length mismatch");
  std::vector<double> out(a_acc.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a_acc[i] + lambda_attn * a_attn[i];
  return out;
}

namespace {

Eigen::RowVectorXd to_row(const std::vector<double>& v) {
  Eigen::RowVectorXd r(static_cast<Eigen::Index>(v.size()));
  for (size_t i = 0; i < v.size(); ++i) r(static_cast<Eigen::Index>(i)) = v[i];
  return r;
}

void check_ratio_finite(const Mat& ratio, const std::string& prompt_id, int rollout_id) {
  for (Eigen::Index t = 0; t < ratio.cols(); ++t) {
    if (!std::isfinite(ratio(0, t)))
      throw NumericError("non-finite importance ratio in rollout " + prompt_id + "/" +
                         std::to_string(rollout_id) + " at position " + std::to_string(t));
  }
}

// Taped per-rollout objective term, scaled by `weight`. Shared by the full
// and the vanilla trainer so their graphs coincide.
ad::Var build_policy_term(ad::Tape& t, const vlm::TapedTrace& tr, const RolloutRecord& rec,
                          double advantage, const ReinforceConfig& cfg, double weight) {
  auto cells = vlm::response_cells(tr.layout, rec.response);
  ad::Var lp = t.gather_coeffs(tr.logprobs, cells);
  ad::Var ratio = t.exp(t.sub(lp, t.constant(to_row(rec.old_logprobs))));
  check_ratio_finite(t.val(ratio), rec.prompt_id, rec.rollout_id);
  ad::Var s1 = t.scale(ratio, advantage);
  ad::Var s2 = t.scale(t.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), advantage);
  ad::Var term = t.mean_all(t.minimum(s1, s2));
  if (cfg.kl_beta != 0.0) {
    if (rec.ref_logprobs.size() != rec.response.size())
      throw InputError("missing reference logprobs for KL penalty");
    ad::Var d = t.sub(t.constant(to_row(rec.ref_logprobs)), lp);
    ad::Var kl = t.mean_all(t.add_scalar(t.sub(t.exp(d), d), -1.0));
    term = t.sub(term, t.scale(kl, cfg.kl_beta));
  }
  return t.scale(term, weight);
}

}  // namespace

double policy_loss(const PromptContext& ctx, const std::vector<RolloutRecord>& group,
                   const std::vector<double>& advantages, const vlm::Checkpoint& current,
                   const ReinforceConfig& cfg) {
  if (group.empty()) throw InputError("empty rollout group");
  if (group.size() != advantages.size()) throw InputError("advantage/rollout count mismatch");
  double total = 0;
  for (size_t i = 0; i < group.size(); ++i) {
    const RolloutRecord& rec = group[i];
    if (rec.response.empty()) throw InputError("empty response in rollout group");
    std::vector<double> lp =
        vlm::response_logprobs(current, ctx.patch_px, ctx.prompt, rec.response);
    double surr = 0;
    for (size_t tpos = 0; tpos < lp.size(); ++tpos) {
      double r = std::exp(lp[tpos] - rec.old_logprobs.at(tpos));
      if (!std::isfinite(r))
        throw NumericError("non-finite importance ratio in rollout " + rec.prompt_id + "/" +
                           std::to_string(rec.rollout_id) + " at position " +
                           std::to_string(tpos));
      double clipped = std::clamp(r, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
      surr += std::min(r * advantages[i], clipped * advantages[i]);
    }
    surr /= static_cast<double>(lp.size());
    if (cfg.kl_beta != 0.0) {
      if (rec.ref_logprobs.size() != lp.size())
        throw InputError("missing reference logprobs for KL penalty");
      double kl = 0;
      for (size_t tpos = 0; tpos < lp.size(); ++tpos) {
        double d = rec.ref_logprobs[tpos] - lp[tpos];
        kl += std::exp(d) - d - 1.0;
      }
      kl /= static_cast<double>(lp.size());
      surr -= cfg.kl_beta * kl;
    }
    total += surr;
  }
  return total / static_cast<double>(group.size());
}

namespace {

struct PreparedPrompt {
  std::string prompt_id;
  Mat patch_px;
  Mat masked_px;
  std::vector<int> prompt;
  std::vector<int> gold_answer;
};

PreparedPrompt prepare_prompt(const world::Task& task) {
  PreparedPrompt p;
  p.prompt_id = task.task_id;
  p.patch_px = world::patch_pixels(task.image);
  p.masked_px = world::patch_pixels(world::mask_regions(task.image, task.evidence_boxes));
  p.prompt = anchor::inject_focus_prompt(task.question);
  p.gold_answer = task.gold_answer;
  return p;
}

std::vector<size_t> pick_prompts(uint64_t seed, int step, size_t corpus_size, int k) {
  if (corpus_size < static_cast<size_t>(k))
    throw InputError("corpus smaller than prompts_per_step");
  std::vector<size_t> idx(corpus_size);
  for (size_t i = 0; i < corpus_size; ++i) idx[i] = i;
  std::mt19937_64 rng(mix_seed(seed, "prompts", static_cast<uint64_t>(step)));
  for (int i = 0; i < k; ++i) {
    size_t j = static_cast<size_t>(i) + rng() % (corpus_size - static_cast<size_t>(i));
    std::swap(idx[static_cast<size_t>(i)], idx[j]);
  }
  idx.resize(static_cast<size_t>(k));
  return idx;
}

uint64_t rollout_seed(uint64_t seed, int step, int slot, int r) {
  return mix_seed(seed, "rollout", static_cast<uint64_t>(step), static_cast<uint64_t>(slot),
                  static_cast<uint64_t>(r));
}

bool all_zero(const std::vector<double>& v) {
  for (double x : v)
    if (x != 0.0) return false;
  return true;
}

std::string rollout_json(const RolloutRecord& rec, double a_acc, double a_attn, double a) {
  ordered_json j;
  j["prompt_id"] = rec.prompt_id;
  j["rollout_id"] = rec.rollout_id;
  j["tokens"] = rec.response;
  j["r_acc"] = rec.r_acc;
  j["r_format"] = rec.r_format;
  j["g"] = rec.g;
  j["r_attn"] = rec.r_attn;
  double d_mean = 0, d_max = 0;
  int d_argmax = -1;
  for (size_t t = 0; t < rec.D.size(); ++t) {
    d_mean += rec.D[t];
    if (d_argmax < 0 || rec.D[t] > d_max) {
      d_max = rec.D[t];
      d_argmax = static_cast<int>(t);
    }
  }
  if (!rec.D.empty()) d_mean /= static_cast<double>(rec.D.size());
  j["D_mean"] = d_mean;
  j["D_max"] = d_max;
  j["D_argmax"] = d_argmax;
  j["vd_set"] = rec.vd_set;
  j["A_acc"] = a_acc;
  j["A_attn"] = a_attn;
  j["A"] = a;
  return j.dump();
}

struct GroupData {
  size_t prompt_index;
  std::vector<RolloutRecord> records;
  std::vector<double> advantages;
  std::vector<double> a_acc;
  std::vector<double> a_attn;
  bool degenerate = false;
};

// Rollout collection + advantage computation for one step. `attn_channel`
// switches the counterfactual measurements on; the sampling stream does not
// depend on it.
GroupData collect_group(const vlm::Checkpoint& policy, const vlm::Checkpoint* ref,
                        const PreparedPrompt& pp, size_t prompt_index, int step, int slot,
                        const ReinforceConfig& cfg,
                        const std::vector<anchor::LayerHead>& set, bool attn_channel) {
  GroupData gd;
  gd.prompt_index = prompt_index;
  std::vector<double> channel(static_cast<size_t>(cfg.group_size), 0.0);
  std::vector<double> attn_rewards(static_cast<size_t>(cfg.group_size), 0.0);
  for (int r = 0; r < cfg.group_size; ++r) {
    vlm::SampleConfig sc;
    sc.max_new = cfg.max_new;
    sc.temperature = cfg.temperature;
    sc.seed = rollout_seed(cfg.seed, step, slot, r);
    vlm::Sampled s = vlm::sample_rollout(policy, pp.patch_px, pp.prompt, sc);
    RolloutRecord rec;
    rec.prompt_id = pp.prompt_id;
    rec.rollout_id = r;
    rec.response = s.response;
    rec.old_logprobs = s.logprobs;
    rec.r_acc = answer_reward(rec.response, pp.gold_answer);
    rec.r_format = format_reward(rec.response);
    if (attn_channel) {
      vlm::ForwardTrace masked = vlm::forward(policy, pp.masked_px, pp.prompt, rec.response);
      rec.D = visual_sensitivity(s.trace, masked);
      rec.vd_set = select_vision_dependent(rec.D, cfg.vd_selection);
      rec.g = evidence_utilization(s.trace, rec.vd_set, set, cfg.attn_eps);
      rec.r_attn = attn_reward(rec.g, rec.r_acc, cfg.tau_g);
    }
    if (ref) rec.ref_logprobs = vlm::response_logprobs(*ref, pp.patch_px, pp.prompt, rec.response);
    channel[static_cast<size_t>(r)] = static_cast<double>(rec.r_acc * rec.r_format);
    attn_rewards[static_cast<size_t>(r)] = static_cast<double>(rec.r_attn);
    gd.records.push_back(std::move(rec));
  }
  gd.a_acc = grpo_advantage(channel);
  if (attn_channel) {
    gd.a_attn = grpo_advantage(attn_rewards);
    gd.advantages = combine_advantages(gd.a_acc, gd.a_attn, cfg.lambda_attn);
  } else {
    gd.a_attn.assign(gd.a_acc.size(), 0.0);
    gd.advantages = gd.a_acc;
  }
  gd.degenerate = all_zero(gd.a_acc) && all_zero(gd.a_attn);
  return gd;
}

TrainResult run_grpo(const vlm::Checkpoint& start, const std::vector<world::Task>& corpus,
                     const ReinforceConfig& cfg, bool attn_channel) {
  cfg.validate(start.config);
  if (corpus.empty()) throw InputError("rl corpus is empty");
  auto set = cfg.resolved_set(start.config);

  std::vector<PreparedPrompt> prompts;
  prompts.reserve(corpus.size());
  for (const world::Task& t : corpus) prompts.push_back(prepare_prompt(t));

  TrainResult out;
  out.checkpoint = start;
  vlm::Checkpoint& policy = out.checkpoint;
  const vlm::Checkpoint* ref = cfg.kl_beta != 0.0 ? &start : nullptr;

  optim::Adam adam;
  adam.lr = cfg.learning_rate;
  int degen_streak = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    auto chosen = pick_prompts(cfg.seed, step, prompts.size(), cfg.prompts_per_step);
    std::vector<GroupData> groups(chosen.size());
    parallel_for(static_cast<int>(chosen.size()), 1, [&](int slot) {
      groups[static_cast<size_t>(slot)] =
          collect_group(policy, ref, prompts[chosen[static_cast<size_t>(slot)]],
                        chosen[static_cast<size_t>(slot)], step, slot, cfg, set, attn_channel);
    });

    StepMetrics m;
    m.step = step;
    int total_rollouts = 0;
    bool all_degenerate = true;
    for (const GroupData& gd : groups) {
      for (const RolloutRecord& rec : gd.records) {
        m.reward_acc += rec.r_acc;
        m.reward_format += rec.r_format;
        m.mean_g += rec.g;
        m.attn_rate += rec.r_attn;
        ++total_rollouts;
      }
      if (!gd.degenerate) all_degenerate = false;
    }
    m.reward_acc /= total_rollouts;
    m.reward_format /= total_rollouts;
    m.mean_g /= total_rollouts;
    m.attn_rate /= total_rollouts;

    double weight = 1.0 / static_cast<double>(static_cast<int>(groups.size()) * cfg.group_size);
    std::vector<std::pair<std::string, Mat>> acc;
    for (const GroupData& gd : groups) {
      const PreparedPrompt& pp = prompts[gd.prompt_index];
      for (size_t r = 0; r < gd.records.size(); ++r) {
        const RolloutRecord& rec = gd.records[r];
        out.rollout_log.push_back(
            rollout_json(rec, gd.a_acc[r], gd.a_attn[r], gd.advantages[r]));
        if (gd.advantages[r] == 0.0 && cfg.kl_beta == 0.0) continue;  // zero-gradient term
        auto build = [&](ad::Tape& t, const vlm::TapedTrace& tr) {
          return build_policy_term(t, tr, rec, gd.advantages[r], cfg, weight);
        };
        vlm::GradResult g = vlm::model_grad(policy, pp.patch_px, pp.prompt, rec.response, build);
        m.objective += g.value;
        if (acc.empty()) {
          acc = std::move(g.grads);
        } else {
          for (size_t k = 0; k < acc.size(); ++k) acc[k].second += g.grads[k].second;
        }
      }
    }
    if (!acc.empty()) {
      for (auto& [name, g] : acc) g = -g;  // ascent on the objective
      adam.step(policy.params, acc);
    }
    out.metrics.push_back(m);

    if (all_degenerate) {
      ++degen_streak;
      if (degen_streak == 10)
        std::cerr << "warning: reward collapse, " << degen_streak
                  << " consecutive degenerate steps\n";
    } else {
      degen_streak = 0;
    }
  }
  return out;
}

}  // namespace

TrainResult train_reinforcing(const vlm::Checkpoint& anchored,
                              const std::vector<world::Task>& corpus,
                              const ReinforceConfig& cfg) {
  if (anchored.stage != "anchored")
    throw InputError("reinforcing expects an anchored checkpoint, got stage=" + anchored.stage);
  TrainResult r = run_grpo(anchored, corpus, cfg, true);
  r.checkpoint.stage = "reinforced";
  r.checkpoint.provenance += ";reinforced:lambda_attn=" + format_double(cfg.lambda_attn) +
                             ",seed=" + std::to_string(cfg.seed);
  return r;
}

TrainResult train_vanilla_grpo(const vlm::Checkpoint& start,
                               const std::vector<world::Task>& corpus,
                               const ReinforceConfig& cfg) {
  TrainResult r = run_grpo(start, corpus, cfg, false);
  r.checkpoint.stage = "reinforced";
  r.checkpoint.provenance += ";vanilla_grpo:seed=" + std::to_string(cfg.seed);
  return r;
}

}  // namespace gridvlm::rl
