#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "gridvlm/anchoring.hpp"
#include "gridvlm/model.hpp"
#include "gridvlm/reinforcing.hpp"
#include "gridvlm/task.hpp"

using namespace gridvlm;
using vlm::Mat;

namespace {

struct Fixture {
  vlm::Checkpoint ckpt;
  world::Task task;
  Mat patch_px;
  std::vector<int> prompt;
  std::vector<int> response;

  Fixture() {
    ckpt = vlm::init_checkpoint(vlm::ModelConfig{}, 42);
    task = world::generate_task(7, world::Family::kLookup);
    patch_px = world::patch_pixels(task.image);
    prompt = anchor::inject_focus_prompt(task.question);
    response = world::gold_response(task);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

static void BM_Forward(benchmark::State& state) {
  Fixture& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(vlm::forward(f.ckpt, f.patch_px, f.prompt, f.response));
}
BENCHMARK(BM_Forward);

static void BM_GradCrossEntropy(benchmark::State& state) {
  Fixture& f = fixture();
  for (auto _ : state) {
    vlm::GradResult g = vlm::model_grad(
        f.ckpt, f.patch_px, f.prompt, f.response, [&](ad::Tape& t, const vlm::TapedTrace& tr) {
          auto cells = vlm::response_cells(tr.layout, f.response);
          return t.scale(t.sum_all(t.gather_coeffs(tr.logprobs, cells)), -1.0);
        });
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_GradCrossEntropy);

static void BM_SampleRollout(benchmark::State& state) {
  Fixture& f = fixture();
  vlm::SampleConfig sc;
  uint64_t seed = 0;
  for (auto _ : state) {
    sc.seed = seed++;
    benchmark::DoNotOptimize(vlm::sample_rollout(f.ckpt, f.patch_px, f.prompt, sc));
  }
}
BENCHMARK(BM_SampleRollout);

static void BM_BoxesToPatches(benchmark::State& state) {
  Fixture& f = fixture();
  for (auto _ : state)
    benchmark::DoNotOptimize(world::boxes_to_patches(f.task.evidence_boxes, f.task.image));
}
BENCHMARK(BM_BoxesToPatches);

static void BM_VisualSensitivity(benchmark::State& state) {
  Fixture& f = fixture();
  vlm::ForwardTrace a = vlm::forward(f.ckpt, f.patch_px, f.prompt, f.response);
  Mat masked_px = world::patch_pixels(world::mask_regions(f.task.image, f.task.evidence_boxes));
  vlm::ForwardTrace b = vlm::forward(f.ckpt, masked_px, f.prompt, f.response);
  for (auto _ : state) benchmark::DoNotOptimize(rl::visual_sensitivity(a, b));
}
BENCHMARK(BM_VisualSensitivity);

static void BM_GrpoAdvantage(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::vector<double> rewards(8);
  for (double& r : rewards) r = static_cast<double>(rng() % 2);
  rewards[0] = 1;
  rewards[1] = 0;
  for (auto _ : state) benchmark::DoNotOptimize(rl::grpo_advantage(rewards));
}
BENCHMARK(BM_GrpoAdvantage);

BENCHMARK_MAIN();
