#include "gridvlm/prd.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "gridvlm/reinforcing.hpp"
#include "gridvlm/vocab.hpp"

namespace gridvlm::prd {

using ordered_json = nlohmann::ordered_json;

namespace {

// Index of the opening bracket of the last complete boxed span; response
// length when there is none, so the whole response counts as pre-box.
size_t pre_box_end(const std::vector<int>& r) {
  for (size_t i = r.size(); i-- > 0;) {
    if (r[i] != vocab::kBoxClose) continue;
    for (size_t j = i; j-- > 0;)
      if (r[j] == vocab::kBoxOpen) return j;
    break;
  }
  return r.size();
}

std::vector<size_t> pattern_positions(const std::vector<int>& r, size_t end,
                                      const std::vector<int>& pat) {
  std::vector<size_t> out;
  if (pat.empty() || end < pat.size()) return out;
  for (size_t i = 0; i + pat.size() <= end; ++i) {
    bool hit = true;
    for (size_t k = 0; k < pat.size(); ++k)
      if (r[i + k] != pat[k]) {
        hit = false;
        break;
      }
    if (hit) out.push_back(i);
  }
  return out;
}

// Value tokens standing in an operand role in the last derivation statement
// before `end`. Results of the statement (the count, the sum) do not count.
std::vector<int> final_operands(const std::vector<int>& r, size_t end) {
  int so = -1;
  for (size_t i = 0; i < end; ++i)
    if (r[i] == vocab::kSo) so = static_cast<int>(i);
  if (so < 0) return {};
  std::vector<int> w(r.begin() + so + 1, r.begin() + static_cast<long>(end));
  while (!w.empty() && w.back() == vocab::kSep) w.pop_back();
  auto num = [](int id) { return vocab::is_number(id); };
  if (w.size() == 2 && w[0] == vocab::kAnswer && num(w[1])) return {w[1]};
  if (w.size() == 3 && num(w[0]) && w[1] == vocab::kCount && num(w[2])) return {w[0]};
  if (w.size() == 3 && num(w[0]) && num(w[2]) &&
      (w[1] == vocab::kGreater || w[1] == vocab::kLess || w[1] == vocab::kEqual))
    return {w[0], w[2]};
  if (w.size() == 5 && num(w[0]) && w[1] == vocab::kPlus && num(w[2]) && w[3] == vocab::kIs &&
      num(w[4]))
    return {w[0], w[2]};
  return {};
}

// A later restatement of the same cell with a different value.
bool contradicted(const std::vector<int>& r, size_t end, const std::vector<int>& pat,
                  size_t after) {
  for (size_t i = after; i + 4 <= end; ++i) {
    if (r[i] == pat[0] && r[i + 1] == pat[1] && r[i + 2] == vocab::kIs &&
        vocab::is_number(r[i + 3]) && r[i + 3] != pat[3])
      return true;
  }
  return false;
}

}  // namespace

std::vector<FactJudgment> judge_facts(const std::vector<int>& response,
                                      const std::vector<world::GoldFact>& facts) {
  size_t end = pre_box_end(response);
  bool has_box = world::extract_boxed_answer(response).has_value();
  std::vector<int> operands = final_operands(response, end);
  std::vector<FactJudgment> out;
  out.reserve(facts.size());
  for (const world::GoldFact& f : facts) {
    if (f.pattern.size() != 4) throw InputError("malformed fact pattern " + f.id);
    FactJudgment j;
    j.fact_id = f.id;
    std::vector<size_t> pos = pattern_positions(response, end, f.pattern);
    j.perceived = pos.empty() ? 0 : 1;
    if (j.perceived && has_box) {
      bool cited = std::find(operands.begin(), operands.end(), world::fact_value_token(f)) !=
                   operands.end();
      j.used = cited && !contradicted(response, end, f.pattern, pos.back() + 4) ? 1 : 0;
    }
    out.push_back(std::move(j));
  }
  return out;
}

double perception_coverage(const std::vector<FactJudgment>& judgments) {
  if (judgments.empty()) return 0.0;
  double p = 0;
  for (const FactJudgment& j : judgments) p += j.perceived;
  return p / static_cast<double>(judgments.size());
}

std::optional<double> faithful_use(const std::vector<FactJudgment>& judgments) {
  int perceived = 0;
  double used = 0;
  for (const FactJudgment& j : judgments) {
    if (j.perceived) {
      ++perceived;
      used += j.used;
    }
  }
  if (perceived == 0) return std::nullopt;
  return used / static_cast<double>(perceived);
}

WcaResult worst_case_accuracy(const std::vector<GroupBits>& groups) {
  if (groups.empty()) throw InputError("no variant groups");
  size_t k = groups.front().bits.size();
  if (k == 0) throw InputError("empty variant group " + groups.front().group_id);
  double all_ok = 0, sum = 0;
  for (const GroupBits& g : groups) {
    if (g.bits.size() != k)
      throw InputError("variant groups are ragged: group " + g.group_id + " has " +
                       std::to_string(g.bits.size()) + " variants, expected " +
                       std::to_string(k));
    bool all = true;
    for (int b : g.bits) {
      sum += b;
      if (b != 1) all = false;
    }
    if (all) all_ok += 1;
  }
  WcaResult r;
  r.wca = all_ok / static_cast<double>(groups.size());
  r.avg_acc = sum / static_cast<double>(groups.size() * k);
  return r;
}

std::optional<double> reasoning_robustness(double wca, double avg_acc) {
  if (avg_acc == 0) return std::nullopt;
  return wca / avg_acc;
}

namespace {

world::BoundingBox patch_box(const world::GridImage& img, int p) {
  int ps = img.patch_size;
  int px = p % img.patches_x();
  int py = p / img.patches_x();
  return {px * ps, py * ps, (px + 1) * ps, (py + 1) * ps};
}

// Grayscale render with per-patch red glow proportional to the heat value.
void write_patch_heatmap(const std::filesystem::path& path, const world::GridImage& img,
                         const std::vector<double>& heat) {
  Mat gray = world::render(img);
  double lo = 0, hi = 0;
  for (double h : heat) {
    lo = std::min(lo, h);
    hi = std::max(hi, h);
  }
  double scale = hi > lo ? 1.0 / (hi - lo) : 0.0;
  std::string bytes = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                      "\n255\n";
  bytes.reserve(bytes.size() + static_cast<size_t>(img.width * img.height * 3));
  auto to_byte = [](double v) {
    return static_cast<char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
  };
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      int p = (y / img.patch_size) * img.patches_x() + x / img.patch_size;
      double w = 0.65 * (heat[static_cast<size_t>(p)] - lo) * scale;
      double g = gray(y, x);
      bytes.push_back(to_byte(g * (1 - w) + w));
      bytes.push_back(to_byte(g * (1 - w)));
      bytes.push_back(to_byte(g * (1 - w)));
    }
  }
  write_file_atomic(path, bytes);
}

void write_heatmaps(const vlm::Checkpoint& ckpt, const world::Task& task,
                    const std::vector<int>& response,
                    const std::vector<anchor::LayerHead>& set, const EvalConfig& cfg) {
  Mat px = world::patch_pixels(task.image);
  std::vector<int> prompt = anchor::inject_focus_prompt(task.question);
  vlm::ForwardTrace tr = vlm::forward(ckpt, px, prompt, response);
  int pc = task.image.patch_count();

  std::vector<double> focus_heat(static_cast<size_t>(pc), 0.0);
  for (const anchor::LayerHead& lh : set) {
    const Mat& a = tr.attn(lh.layer, lh.head);
    for (int p = 0; p < pc; ++p)
      focus_heat[static_cast<size_t>(p)] += a(tr.layout.focus_pos, p);
  }
  for (double& v : focus_heat) v /= static_cast<double>(set.size());

  std::vector<double> dt_heat(static_cast<size_t>(pc), 0.0);
  if (!response.empty()) {
    for (int p = 0; p < pc; ++p) {
      world::GridImage masked = world::mask_regions(task.image, {patch_box(task.image, p)});
      vlm::ForwardTrace trm = vlm::forward(ckpt, world::patch_pixels(masked), prompt, response);
      std::vector<double> D = rl::visual_sensitivity(tr, trm);
      double s = 0;
      for (double d : D) s += d;
      dt_heat[static_cast<size_t>(p)] = s;
    }
  }

  write_patch_heatmap(cfg.image_dir / (task.task_id + "_focus.ppm"), task.image, focus_heat);
  write_patch_heatmap(cfg.image_dir / (task.task_id + "_dt.ppm"), task.image, dt_heat);
}

}  // namespace

PRDReport evaluate_checkpoint(const vlm::Checkpoint& ckpt, const std::vector<world::Task>& tasks,
                              const EvalConfig& cfg) {
  if (tasks.empty()) throw InputError("evaluation corpus is empty");
  if (cfg.max_new <= 0) throw ConfigError("max_new must be positive");
  if (cfg.heatmap_top_n > 0 && cfg.image_dir.empty())
    throw ConfigError("image_dir required when heatmap_top_n > 0");
  std::vector<anchor::LayerHead> set = cfg.layer_head_set.empty()
                                           ? anchor::default_layer_head_set(ckpt.config)
                                           : cfg.layer_head_set;

  PRDReport rep;
  rep.tasks.resize(tasks.size());
  parallel_for(static_cast<int>(tasks.size()), cfg.workers, [&](int i) {
    const world::Task& t = tasks[static_cast<size_t>(i)];
    Mat px = world::patch_pixels(t.image);
    std::vector<int> prompt = anchor::inject_focus_prompt(t.question);
    TaskResult r;
    r.task_id = t.task_id;
    r.group_id = t.variant_group_id;
    r.family = world::family_name(t.family);
    r.response = vlm::greedy_decode(ckpt, px, prompt, cfg.max_new);
    auto boxed = world::extract_boxed_answer(r.response);
    r.correct = boxed && *boxed == t.gold_answer ? 1 : 0;
    r.facts = judge_facts(r.response, t.facts);
    rep.tasks[static_cast<size_t>(i)] = std::move(r);
  });

  std::vector<FactJudgment> all;
  double acc = 0;
  for (const TaskResult& r : rep.tasks) {
    acc += r.correct;
    all.insert(all.end(), r.facts.begin(), r.facts.end());
  }
  rep.accuracy = acc / static_cast<double>(rep.tasks.size());
  rep.perception = perception_coverage(all);
  rep.faithful = faithful_use(all);

  std::vector<GroupBits> groups;
  std::unordered_map<std::string, size_t> group_index;
  for (const TaskResult& r : rep.tasks) {
    auto [it, fresh] = group_index.emplace(r.group_id, groups.size());
    if (fresh) groups.push_back({r.group_id, {}});
    groups[it->second].bits.push_back(r.correct);
  }
  WcaResult w = worst_case_accuracy(groups);
  rep.groups = static_cast<int>(groups.size());
  rep.variants_per_group = static_cast<int>(groups.front().bits.size());
  rep.wca = w.wca;
  rep.robustness = reasoning_robustness(w.wca, w.avg_acc);

  int n_img = std::min<int>(cfg.heatmap_top_n, static_cast<int>(tasks.size()));
  for (int i = 0; i < n_img; ++i)
    write_heatmaps(ckpt, tasks[static_cast<size_t>(i)], rep.tasks[static_cast<size_t>(i)].response,
                   set, cfg);
  return rep;
}

std::string report_to_json(const PRDReport& rep, const std::string& config_hash,
                           const vlm::Checkpoint& ckpt) {
  ordered_json j;
  j["config_hash"] = config_hash;
  j["code_version"] = kCodeVersion;
  j["checkpoint"] = {{"stage", ckpt.stage}, {"provenance", ckpt.provenance}};
  j["accuracy"] = rep.accuracy;
  j["perception_coverage"] = rep.perception;
  j["faithful_use"] = rep.faithful ? ordered_json(*rep.faithful) : ordered_json(nullptr);
  j["worst_case_accuracy"] = rep.wca;
  j["reasoning_robustness"] =
      rep.robustness ? ordered_json(*rep.robustness) : ordered_json(nullptr);
  j["groups"] = rep.groups;
  j["variants_per_group"] = rep.variants_per_group;

  std::vector<std::pair<std::string, std::pair<int, int>>> fam;
  for (const TaskResult& r : rep.tasks) {
    auto it = std::find_if(fam.begin(), fam.end(),
                           [&](const auto& f) { return f.first == r.family; });
    if (it == fam.end()) {
      fam.push_back({r.family, {0, 0}});
      it = std::prev(fam.end());
    }
    it->second.first += 1;
    it->second.second += r.correct;
  }
  ordered_json jf;
  for (const auto& [name, counts] : fam)
    jf[name] = static_cast<double>(counts.second) / static_cast<double>(counts.first);
  j["family_accuracy"] = jf;

  ordered_json jt = ordered_json::array();
  for (const TaskResult& r : rep.tasks) {
    ordered_json e;
    e["task_id"] = r.task_id;
    e["group_id"] = r.group_id;
    e["family"] = r.family;
    e["correct"] = r.correct;
    e["response"] = r.response;
    ordered_json facts = ordered_json::array();
    for (const FactJudgment& f : r.facts)
      facts.push_back({{"fact_id", f.fact_id}, {"P", f.perceived}, {"U", f.used}});
    e["facts"] = facts;
    jt.push_back(e);
  }
  j["tasks"] = jt;
  return j.dump(2) + "\n";
}

}  // namespace gridvlm::prd
