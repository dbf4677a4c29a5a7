#include <cmath>
#include <random>

#include "doctest.h"
#include "gridvlm/anchoring.hpp"
#include "gridvlm/reinforcing.hpp"
#include "gridvlm/task.hpp"
#include "gridvlm/vocab.hpp"

using namespace gridvlm;
using vlm::Mat;
namespace voc = vocab;

namespace {

struct RlSetup {
  vlm::Checkpoint ckpt = vlm::init_checkpoint(vlm::ModelConfig{}, 11);
  world::Task task = world::generate_task(4, world::Family::kLookup);
  Mat patch_px;
  Mat masked_px;
  std::vector<int> prompt;
  std::vector<int> response;

  RlSetup() {
    patch_px = world::patch_pixels(task.image);
    masked_px = world::patch_pixels(world::mask_regions(task.image, task.evidence_boxes));
    prompt = anchor::inject_focus_prompt(task.question);
    response = world::gold_response(task);
  }
};

}  // namespace

TEST_CASE("visual_sensitivity is an exact vocab-summed KL, zero on identical traces") {
  RlSetup s;
  vlm::ForwardTrace a = vlm::forward(s.ckpt, s.patch_px, s.prompt, s.response);
  vlm::ForwardTrace b = vlm::forward(s.ckpt, s.masked_px, s.prompt, s.response);
  std::vector<double> d = rl::visual_sensitivity(a, b);
  REQUIRE(d.size() == s.response.size());

  for (size_t j = 0; j < d.size(); ++j) {
    int row = a.layout.response_begin() + static_cast<int>(j) - 1;
    double kl = 0;
    for (int v = 0; v < s.ckpt.config.vocab_size; ++v)
      kl += std::exp(a.logprobs(row, v)) * (a.logprobs(row, v) - b.logprobs(row, v));
    CHECK(std::abs(d[j] - kl) <= 1e-10);
    CHECK(d[j] >= -1e-12);
  }

  std::vector<double> zero = rl::visual_sensitivity(a, a);
  for (double v : zero) CHECK(v == 0.0);

  vlm::ForwardTrace c = vlm::forward(s.ckpt, s.patch_px, s.prompt, {voc::kEos});
  CHECK_THROWS_AS(rl::visual_sensitivity(a, c), InputError);
}

TEST_CASE("mean+std selection picks only clear outliers, honoring the floor") {
  rl::VdRule rule;
  std::vector<int> picked = rl::select_vision_dependent({0.0, 0.0, 0.0, 1.0}, rule);
  CHECK(picked == std::vector<int>{3});

  // All sensitivities below the absolute floor: nothing qualifies.
  picked = rl::select_vision_dependent({2e-4, 1e-4, 3e-4, 9e-4}, rule);
  CHECK(picked.empty());

  // Uniform sensitivities: nothing exceeds mean + std.
  picked = rl::select_vision_dependent({0.5, 0.5, 0.5, 0.5}, rule);
  CHECK(picked.empty());

  rl::VdRule quant;
  quant.kind = rl::VdRule::Kind::kQuantile;
  quant.quantile = 0.75;
  picked = rl::select_vision_dependent({0.1, 0.4, 0.2, 0.3}, quant);
  CHECK(picked == std::vector<int>{1});

  rl::VdRule fixed;
  fixed.kind = rl::VdRule::Kind::kFixed;
  fixed.threshold = 0.25;
  picked = rl::select_vision_dependent({0.1, 0.4, 0.2, 0.3}, fixed);
  CHECK(picked == std::vector<int>{1, 3});

  CHECK(rl::select_vision_dependent({}, rule).empty());
}

TEST_CASE("evidence_utilization ratio matches a hand count on a crafted trace") {
  vlm::ForwardTrace tr;
  tr.layout.patch_count = 4;
  tr.layout.prompt_len = 2;
  tr.layout.response_len = 3;
  tr.layers = 1;
  tr.heads = 1;
  tr.response = {voc::kSo, voc::kAnswer, voc::kEos};
  int n = tr.layout.total();
  Mat attn = Mat::Zero(n, n);
  // Response rows 6,7,8; patch columns 0..3.
  attn.row(6) << 0.1, 0.1, 0.1, 0.1, 0.3, 0.3, 0.0, 0.0, 0.0;
  attn.row(7) << 0.2, 0.2, 0.2, 0.2, 0.1, 0.1, 0.0, 0.0, 0.0;
  attn.row(8) << 0.05, 0.05, 0.05, 0.05,  0.4, 0.4, 0.0, 0.0, 0.0;
  tr.attention = {attn};

  // vd = {position 1} -> a_vd = 0.8, non-vd = {0, 2} -> a_nonvd = (0.4+0.2)/2.
  double g = rl::evidence_utilization(tr, {1}, {{0, 0}}, 1e-6);
  CHECK(g == doctest::Approx(0.8 / (0.3 + 1e-6)).epsilon(1e-12));

  CHECK(rl::evidence_utilization(tr, {}, {{0, 0}}, 1e-6) == 0.0);

  // All positions vision-dependent: the non-vd mean is empty, so it is zero.
  double g_all = rl::evidence_utilization(tr, {0, 1, 2}, {{0, 0}}, 1e-6);
  double a_vd_all = (0.4 + 0.8 + 0.2) / 3.0;
  CHECK(g_all == doctest::Approx(a_vd_all / 1e-6).epsilon(1e-9));
}

TEST_CASE("reward components follow their definitions") {
  RlSetup s;
  std::vector<int> gold = s.task.gold_answer;
  std::vector<int> good = world::gold_response(s.task);
  CHECK(rl::answer_reward(good, gold) == 1);
  CHECK(rl::format_reward(good) == 1);

  std::vector<int> wrong = good;
  for (size_t i = 0; i < wrong.size(); ++i)
    if (wrong[i] == gold[0] && i + 1 < wrong.size() && wrong[i + 1] == voc::kBoxClose)
      wrong[i] = voc::number_token((voc::number_value(gold[0]) + 1) % 10);
  CHECK(rl::answer_reward(wrong, gold) == 0);

  std::vector<int> no_box = {voc::kSo, gold[0], voc::kEos};
  CHECK(rl::format_reward(no_box) == 0);
  CHECK(rl::answer_reward(no_box, gold) == 0);

  std::vector<int> two_boxes = {voc::kBoxOpen, gold[0], voc::kBoxClose,
                                voc::kBoxOpen, gold[0], voc::kBoxClose};
  CHECK(rl::format_reward(two_boxes) == 0);

  std::vector<int> dangling = {voc::kBoxOpen, gold[0], voc::kBoxClose, voc::kBoxOpen};
  CHECK(rl::format_reward(dangling) == 0);

  CHECK(rl::attn_reward(3.0, 1, 2.0) == 1);
  CHECK(rl::attn_reward(3.0, 0, 2.0) == 0);
  CHECK(rl::attn_reward(2.0, 1, 2.0) == 0);
  CHECK(rl::attn_reward(1.5, 1, 2.0) == 0);
}

TEST_CASE("group advantages are population z-scores with a degenerate guard") {
  std::vector<double> r = {1, 0, 0, 0, 0, 0, 0, 0};
  std::vector<double> a = rl::grpo_advantage(r);
  double root7 = std::sqrt(7.0);
  CHECK(std::abs(a[0] - root7) <= 1e-9);
  for (size_t i = 1; i < a.size(); ++i) CHECK(std::abs(a[i] + 1.0 / root7) <= 1e-9);

  std::vector<double> flat = {0.5, 0.5, 0.5, 0.5};
  for (double v : rl::grpo_advantage(flat)) CHECK(v == 0.0);

  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> base(8);
    for (double& v : base) v = u(rng);
    double shift = u(rng), scale = 0.1 + std::abs(u(rng));
    std::vector<double> moved(8);
    for (size_t i = 0; i < 8; ++i) moved[i] = scale * base[i] + shift;
    std::vector<double> ab = rl::grpo_advantage(base);
    std::vector<double> am = rl::grpo_advantage(moved);
    for (size_t i = 0; i < 8; ++i) CHECK(std::abs(ab[i] - am[i]) <= 1e-9);
  }
}

TEST_CASE("combine_advantages at lambda 0 returns the accuracy channel bitwise") {
  std::vector<double> acc = {0.3, -0.7, 1.1};
  std::vector<double> attn = {5.0, -5.0, 2.0};
  CHECK(rl::combine_advantages(acc, attn, 0.0) == acc);
  std::vector<double> mix = rl::combine_advantages(acc, attn, 0.5);
  for (size_t i = 0; i < acc.size(); ++i) CHECK(mix[i] == acc[i] + 0.5 * attn[i]);
}

TEST_CASE("policy objective clips ratios and subtracts the reference KL") {
  RlSetup s;
  rl::ReinforceConfig cfg;
  cfg.kl_beta = 0.0;

  vlm::SampleConfig sc;
  sc.seed = 5;
  vlm::Sampled roll = vlm::sample_rollout(s.ckpt, s.patch_px, s.prompt, sc);
  rl::PromptContext ctx{"p0", s.patch_px, s.prompt};
  rl::RolloutRecord rec;
  rec.prompt_id = "p0";
  rec.rollout_id = 0;
  rec.response = roll.response;
  rec.old_logprobs = roll.logprobs;

  // Identical policy: every ratio is 1, so the objective equals the advantage.
  CHECK(rl::policy_loss(ctx, {rec}, {1.0}, s.ckpt, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rl::policy_loss(ctx, {rec}, {-2.5}, s.ckpt, cfg) == doctest::Approx(-2.5).epsilon(1e-12));

  // Behavior logprobs shifted down by ln 2 make every ratio exactly 2:
  // positive advantages clip at 1.2, negative ones keep the unclipped -2.
  rl::RolloutRecord shifted = rec;
  for (double& lp : shifted.old_logprobs) lp -= std::log(2.0);
  CHECK(rl::policy_loss(ctx, {shifted}, {1.0}, s.ckpt, cfg) ==
        doctest::Approx(1.2).epsilon(1e-9));
  CHECK(rl::policy_loss(ctx, {shifted}, {-1.0}, s.ckpt, cfg) ==
        doctest::Approx(-2.0).epsilon(1e-9));

  // A positive KL penalty can only lower the objective, and a zero-distance
  // reference leaves it unchanged.
  rl::ReinforceConfig kcfg = cfg;
  kcfg.kl_beta = 0.5;
  rl::RolloutRecord with_ref = rec;
  with_ref.ref_logprobs = rec.old_logprobs;
  CHECK(rl::policy_loss(ctx, {with_ref}, {1.0}, s.ckpt, kcfg) ==
        doctest::Approx(1.0).epsilon(1e-12));
  rl::RolloutRecord far_ref = with_ref;
  for (double& lp : far_ref.ref_logprobs) lp += 0.3;
  CHECK(rl::policy_loss(ctx, {far_ref}, {1.0}, s.ckpt, kcfg) < 1.0);
}

TEST_CASE("vanilla grpo runs a few steps and logs one record per rollout") {
  RlSetup s;
  std::vector<world::Task> corpus;
  for (uint64_t i = 0; i < 4; ++i)
    corpus.push_back(world::generate_task(i, world::Family::kLookup));

  rl::ReinforceConfig cfg;
  cfg.steps = 2;
  cfg.prompts_per_step = 2;
  cfg.group_size = 4;
  cfg.max_new = 24;
  cfg.seed = 3;

  rl::TrainResult out = rl::train_vanilla_grpo(s.ckpt, corpus, cfg);
  CHECK(out.checkpoint.stage == "reinforced");
  REQUIRE(out.metrics.size() == 2);
  CHECK(out.rollout_log.size() == static_cast<size_t>(2 * 2 * 4));

  rl::TrainResult again = rl::train_vanilla_grpo(s.ckpt, corpus, cfg);
  for (size_t i = 0; i < out.checkpoint.params.size(); ++i)
    CHECK(out.checkpoint.params[i].second == again.checkpoint.params[i].second);
  CHECK(out.rollout_log == again.rollout_log);
}

TEST_CASE("train_reinforcing refuses a non-anchored start") {
  RlSetup s;
  std::vector<world::Task> corpus = {s.task};
  rl::ReinforceConfig cfg;
  cfg.steps = 1;
  CHECK_THROWS_AS(rl::train_reinforcing(s.ckpt, corpus, cfg), InputError);
}
