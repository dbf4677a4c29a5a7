#include <cmath>

#include "doctest.h"
#include "gridvlm/anchoring.hpp"
#include "gridvlm/model.hpp"
#include "gridvlm/task.hpp"
#include "gridvlm/vocab.hpp"

using namespace gridvlm;
using vlm::Mat;
namespace voc = vocab;

TEST_CASE("focus_loss is the tau-weighted binary cross entropy") {
  CHECK(anchor::focus_loss(0.8, 0.8) ==
        doctest::Approx(-0.8 * std::log(0.8) - 0.2 * std::log(0.2)).epsilon(1e-15));
  CHECK(anchor::focus_loss(0.5, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  // The minimum over s sits at s = tau.
  CHECK(anchor::focus_loss(0.8, 0.8) < anchor::focus_loss(0.7, 0.8));
  CHECK(anchor::focus_loss(0.8, 0.8) < anchor::focus_loss(0.9, 0.8));
  // Clamping keeps the loss finite at the boundary.
  CHECK(std::isfinite(anchor::focus_loss(0.0, 0.8)));
  CHECK(std::isfinite(anchor::focus_loss(1.0, 0.8)));
  CHECK(anchor::focus_loss(0.0, 0.8) ==
        doctest::Approx(-0.8 * std::log(anchor::kMassEps) -
                        0.2 * std::log(1.0 - anchor::kMassEps)));
}

TEST_CASE("default measurement set covers all heads of the last four layers") {
  vlm::ModelConfig small;
  auto set = anchor::default_layer_head_set(small);
  REQUIRE(set.size() == static_cast<size_t>(small.layers * small.heads));
  vlm::ModelConfig tall = small;
  tall.layers = 6;
  auto tail = anchor::default_layer_head_set(tall);
  REQUIRE(tail.size() == static_cast<size_t>(4 * tall.heads));
  for (const anchor::LayerHead& lh : tail) {
    CHECK(lh.layer >= 2);
    CHECK(lh.layer < 6);
    CHECK(lh.head < tall.heads);
  }
}

TEST_CASE("inject_focus_prompt keeps the question and adds one focus token") {
  world::Task t = world::generate_task(2, world::Family::kArithmetic);
  std::vector<int> p = anchor::inject_focus_prompt(t.question);
  REQUIRE(p.size() > t.question.size());
  for (size_t i = 0; i < t.question.size(); ++i) CHECK(p[i] == t.question[i]);
  int focus_count = 0;
  for (int id : p) focus_count += id == voc::kFocus;
  CHECK(focus_count == 1);
  CHECK(anchor::inject_focus_prompt(t.question) == p);
}

TEST_CASE("focus_mass sums the focus row over the patch set with clamping") {
  vlm::ForwardTrace tr;
  tr.layout.patch_count = 16;
  tr.layout.prompt_len = 4;
  tr.layout.response_len = 0;
  tr.layout.focus_pos = 18;
  tr.layers = 1;
  tr.heads = 1;
  int n = tr.layout.total();
  Mat uniform = Mat::Constant(n, n, 1.0 / n);
  tr.attention = {uniform};
  double s = anchor::focus_mass(tr, {3, 9}, {0, 0});
  CHECK(s == doctest::Approx(2.0 / n).epsilon(1e-15));
  // An empty patch set degenerates to the numerical floor.
  CHECK(anchor::focus_mass(tr, {}, {0, 0}) == anchor::kMassEps);
}

TEST_CASE("sft_objective composes ce and the weighted focus loss") {
  vlm::Checkpoint ckpt = vlm::init_checkpoint(vlm::ModelConfig{}, 3);
  world::Task t = world::generate_task(6, world::Family::kLookup);
  Mat px = world::patch_pixels(t.image);
  std::vector<int> prompt = anchor::inject_focus_prompt(t.question);
  std::vector<int> resp = world::gold_response(t);
  world::PatchSet patches = world::boxes_to_patches(t.evidence_boxes, t.image);
  vlm::ForwardTrace tr = vlm::forward(ckpt, px, prompt, resp);

  anchor::AnchorConfig cfg;
  double ce = anchor::ce_loss(tr);
  CHECK(ce == doctest::Approx(-tr.total_response_logprob()).epsilon(1e-15));
  double focus = anchor::focus_loss_total(tr, patches, cfg, ckpt.config);
  auto set = cfg.resolved_set(ckpt.config);
  double manual = 0;
  for (const anchor::LayerHead& lh : set)
    manual += anchor::focus_loss(anchor::focus_mass(tr, patches, lh), cfg.tau);
  manual /= static_cast<double>(set.size());
  CHECK(focus == doctest::Approx(manual).epsilon(1e-15));
  CHECK(anchor::sft_objective(tr, patches, cfg, ckpt.config) ==
        doctest::Approx(ce + cfg.lambda_focus * focus).epsilon(1e-12));
}

TEST_CASE("anchoring with lambda 0 matches the vanilla trainer bit for bit") {
  vlm::Checkpoint init = vlm::init_checkpoint(vlm::ModelConfig{}, 8);
  std::vector<world::Task> corpus;
  for (uint64_t i = 0; i < 12; ++i)
    corpus.push_back(world::generate_task(i, static_cast<world::Family>(i % 4)));

  anchor::AnchorConfig cfg;
  cfg.lambda_focus = 0.0;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 5;

  anchor::TrainResult a = anchor::train_anchoring(init, corpus, cfg);
  anchor::TrainResult b = anchor::train_vanilla_sft(init, corpus, cfg);
  REQUIRE(a.checkpoint.params.size() == b.checkpoint.params.size());
  for (size_t i = 0; i < a.checkpoint.params.size(); ++i)
    CHECK(a.checkpoint.params[i].second == b.checkpoint.params[i].second);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (size_t i = 0; i < a.metrics.size(); ++i) CHECK(a.metrics[i].ce == b.metrics[i].ce);
  CHECK(a.checkpoint.stage == "anchored");
  CHECK(b.checkpoint.stage == "anchored");
  CHECK(!a.diverged);

  // The run is deterministic end to end.
  anchor::TrainResult c = anchor::train_anchoring(init, corpus, cfg);
  for (size_t i = 0; i < a.checkpoint.params.size(); ++i)
    CHECK(a.checkpoint.params[i].second == c.checkpoint.params[i].second);
}

TEST_CASE("anchoring metrics expose the configured tau and lambda") {
  vlm::Checkpoint init = vlm::init_checkpoint(vlm::ModelConfig{}, 8);
  std::vector<world::Task> corpus;
  for (uint64_t i = 0; i < 8; ++i)
    corpus.push_back(world::generate_task(i, world::Family::kLookup));

  anchor::AnchorConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  anchor::TrainResult out = anchor::train_anchoring(init, corpus, cfg);
  REQUIRE(!out.metrics.empty());
  for (const anchor::StepMetrics& m : out.metrics) {
    CHECK(m.lambda == cfg.lambda_focus);
    CHECK(m.tau == cfg.tau);
    CHECK(m.ce > 0);
    CHECK(m.mean_s > 0);
    CHECK(m.mean_s < 1);
  }
}

TEST_CASE("anchor config validation rejects bad values") {
  vlm::ModelConfig mcfg;
  anchor::AnchorConfig cfg;
  cfg.tau = 1.0;
  CHECK_THROWS_AS(cfg.validate(mcfg), ConfigError);
  cfg = {};
  cfg.lambda_focus = -0.1;
  CHECK_THROWS_AS(cfg.validate(mcfg), ConfigError);
  cfg = {};
  cfg.layer_head_set = {{7, 0}};
  CHECK_THROWS_AS(cfg.validate(mcfg), ConfigError);
  cfg = {};
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(mcfg), ConfigError);
}
