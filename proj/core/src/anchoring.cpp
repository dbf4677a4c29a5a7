#include "gridvlm/anchoring.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>

#include "gridvlm/optim.hpp"
#include "gridvlm/vocab.hpp"

namespace gridvlm::anchor {

namespace voc = gridvlm::vocab;
using vlm::Mat;

std::vector<LayerHead> default_layer_head_set(const vlm::ModelConfig& cfg) {
  std::vector<LayerHead> s;
  int first = std::max(0, cfg.layers - 4);
  for (int l = first; l < cfg.layers; ++l)
    for (int h = 0; h < cfg.heads; ++h) s.push_back(LayerHead{l, h});
  return s;
}

std::vector<LayerHead> AnchorConfig::resolved_set(const vlm::ModelConfig& cfg) const {
  return layer_head_set.empty() ? default_layer_head_set(cfg) : layer_head_set;
}

void AnchorConfig::validate(const vlm::ModelConfig& cfg) const {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must be in (0,1)");
  if (lambda_focus < 0.0) throw ConfigError("lambda must be >= 0");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  for (const LayerHead& lh : resolved_set(cfg)) {
    if (lh.layer < 0 || lh.layer >= cfg.layers || lh.head < 0 || lh.head >= cfg.heads)
      throw ConfigError("layer_head_set entry outside model dimensions");
  }
}

std::vector<int> inject_focus_prompt(const std::vector<int>& question) {
  if (question.empty()) throw InputError("question must not be empty");
  for (int id : question) {
    if (id == voc::kFocus || id == voc::kPad || id == voc::kEos || id == voc::kBoxOpen ||
        id == voc::kBoxClose)
      throw InputError("question contains reserved token " + voc::token_text(id));
  }
  std::vector<int> prompt = question;
  prompt.insert(prompt.end(),
                {voc::kPerceive, voc::kCues, voc::kInto, voc::kFocus, voc::kThen, voc::kThink});
  return prompt;
}

namespace {
double clamp_mass(double s) { return std::clamp(s, kMassEps, 1.0 - kMassEps); }
}  // namespace

double focus_mass(const vlm::ForwardTrace& trace, const world::PatchSet& patches, LayerHead lh) {
  if (trace.layout.focus_pos < 0) throw InputError("trace has no <focus> position");
  if (patches.empty()) {
    std::cerr << "warning: empty evidence patch set, focus mass degenerates to " << kMassEps
              << "\n";
    return kMassEps;
  }
  const Mat& a = trace.attn(lh.layer, lh.head);
  double s = 0;
  for (int p : patches) {
    if (p < 0 || p >= trace.layout.patch_count) throw InputError("patch index out of range");
    s += a(trace.layout.focus_pos, p);
  }
  return clamp_mass(s);
}

double focus_loss(double s, double tau) {
  double c = clamp_mass(s);
  return -tau * std::log(c) - (1.0 - tau) * std::log(1.0 - c);
}

double focus_loss_total(const vlm::ForwardTrace& trace, const world::PatchSet& patches,
                        const AnchorConfig& cfg, const vlm::ModelConfig& mcfg) {
  auto set = cfg.resolved_set(mcfg);
  if (set.empty()) throw ConfigError("layer_head_set must not be empty");
  double total = 0;
  for (const LayerHead& lh : set) total += focus_loss(focus_mass(trace, patches, lh), cfg.tau);
  return total / static_cast<double>(set.size());
}

double mean_focus_mass(const vlm::ForwardTrace& trace, const world::PatchSet& patches,
                       const AnchorConfig& cfg, const vlm::ModelConfig& mcfg) {
  auto set = cfg.resolved_set(mcfg);
  if (set.empty()) throw ConfigError("layer_head_set must not be empty");
  double total = 0;
  for (const LayerHead& lh : set) total += focus_mass(trace, patches, lh);
  return total / static_cast<double>(set.size());
}

double ce_loss(const vlm::ForwardTrace& trace) {
  if (trace.response.empty()) throw InputError("response must not be empty");
  return -trace.total_response_logprob();
}

double sft_objective(const vlm::ForwardTrace& trace, const world::PatchSet& patches,
                     const AnchorConfig& cfg, const vlm::ModelConfig& mcfg) {
  return ce_loss(trace) + cfg.lambda_focus * focus_loss_total(trace, patches, cfg, mcfg);
}

namespace {

struct SampleDiag {
  double ce = 0;
  double focus = 0;
  double mean_s = 0;
};

// Taped CE: -sum of response-token logprobs.
ad::Var build_ce(ad::Tape& t, const vlm::TapedTrace& tr, const std::vector<int>& response) {
  auto cells = vlm::response_cells(tr.layout, response);
  ad::Var lp = t.gather_coeffs(tr.logprobs, cells);
  return t.scale(t.sum_all(lp), -1.0);
}

// Taped focus loss mean over the measurement set.
ad::Var build_focus(ad::Tape& t, const vlm::TapedTrace& tr, const world::PatchSet& patches,
                    const std::vector<LayerHead>& set, double tau) {
  std::vector<std::pair<int, int>> cells;
  cells.reserve(patches.size());
  for (int p : patches) cells.emplace_back(tr.layout.focus_pos, p);
  ad::Var total;
  for (const LayerHead& lh : set) {
    ad::Var s = t.sum_all(t.gather_coeffs(tr.attn(lh.layer, lh.head), cells));
    ad::Var c = t.clamp(s, kMassEps, 1.0 - kMassEps);
    ad::Var one_minus = t.add_scalar(t.scale(c, -1.0), 1.0);
    ad::Var term =
        t.scale(t.add(t.scale(t.log(c), tau), t.scale(t.log(one_minus), 1.0 - tau)), -1.0);
    total = total.valid() ? t.add(total, term) : term;
  }
  return t.scale(total, 1.0 / static_cast<double>(set.size()));
}

// Mean mass read off recorded values; adds no tape nodes, so the metrics do
// not perturb the training graph.
double mean_mass_value(const ad::Tape& t, const vlm::TapedTrace& tr,
                       const world::PatchSet& patches, const std::vector<LayerHead>& set) {
  double total = 0;
  for (const LayerHead& lh : set) {
    const Mat& a = t.val(tr.attn(lh.layer, lh.head));
    double s = 0;
    for (int p : patches) s += a(tr.layout.focus_pos, p);
    total += std::clamp(s, kMassEps, 1.0 - kMassEps);
  }
  return total / static_cast<double>(set.size());
}

struct PreparedSample {
  Mat patch_px;
  std::vector<int> prompt;
  std::vector<int> response;
  world::PatchSet patches;
};

PreparedSample prepare(const world::Task& task) {
  PreparedSample s;
  s.patch_px = world::patch_pixels(task.image);
  s.prompt = inject_focus_prompt(task.question);
  s.response = world::gold_response(task);
  s.patches = world::boxes_to_patches(task.evidence_boxes, task.image);
  return s;
}

bool grads_finite(const std::vector<std::pair<std::string, Mat>>& grads) {
  for (const auto& [name, g] : grads)
    if (!g.allFinite()) return false;
  return true;
}

// Shared SFT loop. with_focus controls whether the focus term is recorded on
// the tape at all; when false the graph is exactly the plain CE trainer's.
TrainResult run_sft(const vlm::Checkpoint& init, const std::vector<world::Task>& corpus,
                    const AnchorConfig& cfg, bool with_focus) {
  cfg.validate(init.config);
  if (corpus.empty()) throw InputError("training corpus is empty");
  auto set = cfg.resolved_set(init.config);

  TrainResult out;
  out.checkpoint = init;
  vlm::Checkpoint& ckpt = out.checkpoint;

  std::vector<PreparedSample> samples;
  samples.reserve(corpus.size());
  for (const world::Task& task : corpus) samples.push_back(prepare(task));
  for (const auto& s : samples) {
    if (with_focus && s.patches.empty())
      std::cerr << "warning: task with empty evidence patch set in training corpus\n";
  }

  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  optim::Adam adam;
  adam.lr = cfg.learning_rate;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(cfg.seed, "shuffle", static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i) {
      size_t j = rng() % i;
      std::swap(order[i - 1], order[j]);
    }
    for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(cfg.batch_size)) {
      size_t b1 = std::min(order.size(), b0 + static_cast<size_t>(cfg.batch_size));
      double inv_b = 1.0 / static_cast<double>(b1 - b0);
      std::vector<std::pair<std::string, Mat>> acc;
      StepMetrics m;
      m.step = step;
      m.lambda = with_focus ? cfg.lambda_focus : 0.0;
      m.tau = cfg.tau;
      bool bad = false;
      for (size_t bi = b0; bi < b1; ++bi) {
        const PreparedSample& s = samples[order[bi]];
        SampleDiag diag;
        auto build = [&](ad::Tape& t, const vlm::TapedTrace& tr) {
          ad::Var ce = build_ce(t, tr, s.response);
          diag.ce = t.val(ce)(0, 0);
          diag.mean_s = mean_mass_value(t, tr, s.patches, set);
          ad::Var obj = ce;
          if (with_focus) {
            ad::Var focus = build_focus(t, tr, s.patches, set, cfg.tau);
            diag.focus = t.val(focus)(0, 0);
            obj = t.add(ce, t.scale(focus, cfg.lambda_focus));
          }
          return t.scale(obj, inv_b);
        };
        vlm::GradResult g;
        try {
          g = vlm::model_grad(ckpt, s.patch_px, s.prompt, s.response, build);
        } catch (const NumericError&) {
          bad = true;
          break;
        }
        if (!std::isfinite(g.value) || !grads_finite(g.grads)) {
          bad = true;
          break;
        }
        if (acc.empty()) {
          acc = std::move(g.grads);
        } else {
          for (size_t k = 0; k < acc.size(); ++k) acc[k].second += g.grads[k].second;
        }
        m.ce += diag.ce * inv_b;
        m.focus_loss += diag.focus * inv_b;
        m.mean_s += diag.mean_s * inv_b;
      }
      if (bad) {
        std::cerr << "warning: non-finite loss at step " << step
                  << ", stopping with last good checkpoint\n";
        out.diverged = true;
        return out;
      }
      adam.step(ckpt.params, acc);
      out.metrics.push_back(m);
      ++step;
    }
  }
  return out;
}

}  // namespace

TrainResult train_anchoring(const vlm::Checkpoint& init, const std::vector<world::Task>& corpus,
                            const AnchorConfig& cfg) {
  // lambda = 0 degrades to the plain CE graph so the trajectories coincide.
  TrainResult r = run_sft(init, corpus, cfg, cfg.lambda_focus != 0.0);
  r.checkpoint.stage = "anchored";
  r.checkpoint.provenance += ";anchored:lambda=" + format_double(cfg.lambda_focus) +
                             ",tau=" + format_double(cfg.tau) +
                             ",seed=" + std::to_string(cfg.seed);
  return r;
}

TrainResult train_vanilla_sft(const vlm::Checkpoint& init, const std::vector<world::Task>& corpus,
                              const AnchorConfig& cfg) {
  TrainResult r = run_sft(init, corpus, cfg, false);
  r.checkpoint.stage = "anchored";
  r.checkpoint.provenance += ";vanilla_sft:seed=" + std::to_string(cfg.seed);
  return r;
}

}  // namespace gridvlm::anchor
