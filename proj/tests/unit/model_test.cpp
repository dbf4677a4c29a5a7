#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "gridvlm/anchoring.hpp"
#include "gridvlm/model.hpp"
#include "gridvlm/task.hpp"
#include "gridvlm/vocab.hpp"

using namespace gridvlm;
using vlm::Mat;

namespace {

struct Setup {
  vlm::Checkpoint ckpt = vlm::init_checkpoint(vlm::ModelConfig{}, 42);
  world::Task task = world::generate_task(3, world::Family::kCompare);
  Mat patch_px;
  std::vector<int> prompt;
  std::vector<int> response;

  Setup() {
    patch_px = world::patch_pixels(task.image);
    prompt = anchor::inject_focus_prompt(task.question);
    response = world::gold_response(task);
  }
};

}  // namespace

TEST_CASE("init_checkpoint is deterministic and shape-complete") {
  vlm::ModelConfig cfg;
  vlm::Checkpoint a = vlm::init_checkpoint(cfg, 9);
  vlm::Checkpoint b = vlm::init_checkpoint(cfg, 9);
  REQUIRE(a.params.size() == b.params.size());
  for (size_t i = 0; i < a.params.size(); ++i) {
    CHECK(a.params[i].first == b.params[i].first);
    CHECK(a.params[i].second == b.params[i].second);
  }
  vlm::Checkpoint c = vlm::init_checkpoint(cfg, 10);
  bool any_differs = false;
  for (size_t i = 0; i < a.params.size(); ++i)
    any_differs |= a.params[i].second != c.params[i].second;
  CHECK(any_differs);
  auto shapes = vlm::param_shapes(cfg);
  REQUIRE(shapes.size() == a.params.size());
  for (size_t i = 0; i < shapes.size(); ++i) {
    CHECK(shapes[i].first == a.params[i].first);
    CHECK(shapes[i].second.first == a.params[i].second.rows());
    CHECK(shapes[i].second.second == a.params[i].second.cols());
  }
}

TEST_CASE("forward produces normalized causal attention and logprob rows") {
  Setup s;
  vlm::ForwardTrace tr = vlm::forward(s.ckpt, s.patch_px, s.prompt, s.response);
  int n = tr.layout.total();
  REQUIRE(tr.logprobs.rows() == n);
  REQUIRE(tr.logprobs.cols() == s.ckpt.config.vocab_size);
  for (int t = 0; t < n; ++t) {
    double z = tr.logprobs.row(t).array().exp().sum();
    CHECK(z == doctest::Approx(1.0).epsilon(1e-9));
  }
  REQUIRE(static_cast<int>(tr.attention.size()) == tr.layers * tr.heads);
  for (const Mat& a : tr.attention) {
    REQUIRE(a.rows() == n);
    REQUIRE(a.cols() == n);
    CHECK(a.minCoeff() >= 0.0);
    for (int i = 0; i < n; ++i) {
      CHECK(a.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
      for (int j = i + 1; j < n; ++j) CHECK(a(i, j) == 0.0);
    }
  }
}

TEST_CASE("layout places patches, prompt, response in order with focus marked") {
  Setup s;
  vlm::ForwardTrace tr = vlm::forward(s.ckpt, s.patch_px, s.prompt, s.response);
  CHECK(tr.layout.patch_count == s.ckpt.config.patch_count);
  CHECK(tr.layout.prompt_len == static_cast<int>(s.prompt.size()));
  CHECK(tr.layout.response_len == static_cast<int>(s.response.size()));
  int fp = tr.layout.focus_pos;
  REQUIRE(fp >= tr.layout.patch_count);
  CHECK(s.prompt[static_cast<size_t>(fp - tr.layout.patch_count)] == vocab::kFocus);
  std::vector<int> bare = s.task.question;
  vlm::ForwardTrace no_focus = vlm::forward(s.ckpt, s.patch_px, bare, s.response);
  CHECK(no_focus.layout.focus_pos == -1);
}

TEST_CASE("changing a patch changes logits only at and after its position") {
  Setup s;
  vlm::ForwardTrace base = vlm::forward(s.ckpt, s.patch_px, s.prompt, s.response);
  Mat bumped = s.patch_px;
  int last_patch = s.ckpt.config.patch_count - 1;
  bumped.row(last_patch).array() += 0.25;
  vlm::ForwardTrace moved = vlm::forward(s.ckpt, bumped, s.prompt, s.response);
  for (int t = 0; t < last_patch; ++t)
    CHECK(base.logprobs.row(t) == moved.logprobs.row(t));
  CHECK(base.logprobs.row(last_patch) != moved.logprobs.row(last_patch));
}

TEST_CASE("response_logprobs agree with the forward trace rows") {
  Setup s;
  vlm::ForwardTrace tr = vlm::forward(s.ckpt, s.patch_px, s.prompt, s.response);
  std::vector<double> lps =
      vlm::response_logprobs(s.ckpt, s.patch_px, s.prompt, s.response);
  REQUIRE(lps.size() == s.response.size());
  double total = 0;
  for (size_t j = 0; j < lps.size(); ++j) {
    CHECK(lps[j] == tr.response_logprob(static_cast<int>(j)));
    total += lps[j];
  }
  CHECK(total == tr.total_response_logprob());
  auto cells = vlm::response_cells(tr.layout, s.response);
  REQUIRE(cells.size() == s.response.size());
  for (size_t j = 0; j < cells.size(); ++j)
    CHECK(tr.logprobs(cells[j].first, cells[j].second) == lps[j]);
}

TEST_CASE("sampling is deterministic in seed and its trace matches a fresh forward") {
  Setup s;
  vlm::SampleConfig sc;
  sc.seed = 77;
  vlm::Sampled a = vlm::sample_rollout(s.ckpt, s.patch_px, s.prompt, sc);
  vlm::Sampled b = vlm::sample_rollout(s.ckpt, s.patch_px, s.prompt, sc);
  CHECK(a.response == b.response);
  CHECK(a.logprobs == b.logprobs);
  sc.seed = 78;
  vlm::Sampled c = vlm::sample_rollout(s.ckpt, s.patch_px, s.prompt, sc);
  CHECK(a.response != c.response);

  REQUIRE(!a.response.empty());
  CHECK(static_cast<int>(a.response.size()) <= sc.max_new);
  std::vector<double> fresh = vlm::response_logprobs(s.ckpt, s.patch_px, s.prompt, a.response);
  REQUIRE(fresh.size() == a.logprobs.size());
  for (size_t j = 0; j < fresh.size(); ++j) CHECK(fresh[j] == a.logprobs[j]);
}

TEST_CASE("greedy_decode picks the argmax continuation") {
  Setup s;
  std::vector<int> out = vlm::greedy_decode(s.ckpt, s.patch_px, s.prompt, 8);
  REQUIRE(!out.empty());
  std::vector<int> prefix(out.begin(), out.end() - 1);
  vlm::ForwardTrace tr = vlm::forward(s.ckpt, s.patch_px, s.prompt, prefix);
  int row = tr.layout.total() - 1;
  int best = 0;
  for (int v = 1; v < s.ckpt.config.vocab_size; ++v)
    if (tr.logprobs(row, v) > tr.logprobs(row, best)) best = v;
  CHECK(out.back() == best);
}

TEST_CASE("checkpoint save and load round trips bit for bit") {
  Setup s;
  s.ckpt.stage = "anchored";
  s.ckpt.provenance = "gridvlm-0.1.0;config=deadbeef;seed=1";
  std::filesystem::path p = std::filesystem::temp_directory_path() / "gridvlm_ckpt_test.json";
  vlm::save_checkpoint(p, s.ckpt);
  vlm::Checkpoint back = vlm::load_checkpoint(p);
  CHECK(back.stage == s.ckpt.stage);
  CHECK(back.provenance == s.ckpt.provenance);
  CHECK(back.config == s.ckpt.config);
  REQUIRE(back.params.size() == s.ckpt.params.size());
  for (size_t i = 0; i < back.params.size(); ++i) {
    CHECK(back.params[i].first == s.ckpt.params[i].first);
    CHECK(back.params[i].second == s.ckpt.params[i].second);
  }
  vlm::ForwardTrace a = vlm::forward(s.ckpt, s.patch_px, s.prompt, s.response);
  vlm::ForwardTrace b = vlm::forward(back, s.patch_px, s.prompt, s.response);
  CHECK(a.logprobs == b.logprobs);
  std::filesystem::remove(p);
}

TEST_CASE("taped forward reproduces plain forward values bit for bit") {
  Setup s;
  vlm::ForwardTrace plain = vlm::forward(s.ckpt, s.patch_px, s.prompt, s.response);
  vlm::GradResult g = vlm::model_grad(
      s.ckpt, s.patch_px, s.prompt, s.response, [&](ad::Tape& t, const vlm::TapedTrace& tr) {
        CHECK(t.val(tr.logprobs) == plain.logprobs);
        for (int l = 0; l < tr.layers; ++l)
          for (int h = 0; h < tr.heads; ++h)
            CHECK(t.val(tr.attn(l, h)) == plain.attn(l, h));
        auto cells = vlm::response_cells(tr.layout, s.response);
        return t.scale(t.sum_all(t.gather_coeffs(tr.logprobs, cells)), -1.0);
      });
  double plain_ce = -plain.total_response_logprob();
  CHECK(g.value == plain_ce);
  REQUIRE(g.grads.size() == s.ckpt.params.size());
  for (size_t i = 0; i < g.grads.size(); ++i) {
    CHECK(g.grads[i].first == s.ckpt.params[i].first);
    CHECK(g.grads[i].second.rows() == s.ckpt.params[i].second.rows());
    CHECK(g.grads[i].second.cols() == s.ckpt.params[i].second.cols());
  }
}

TEST_CASE("forward rejects malformed inputs") {
  Setup s;
  Mat wrong = Mat::Zero(s.ckpt.config.patch_count - 1, s.ckpt.config.patch_dim);
  CHECK_THROWS_AS(vlm::forward(s.ckpt, wrong, s.prompt, s.response), InputError);
  std::vector<int> bad_tok = {0, s.ckpt.config.vocab_size};
  CHECK_THROWS_AS(vlm::forward(s.ckpt, s.patch_px, bad_tok, {}), InputError);
  CHECK_THROWS_AS(vlm::forward(s.ckpt, s.patch_px, {}, s.response), InputError);
}
