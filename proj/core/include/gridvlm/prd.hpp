#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gridvlm/anchoring.hpp"
#include "gridvlm/model.hpp"
#include "gridvlm/task.hpp"

namespace gridvlm::prd {

using vlm::Mat;

// Verdict for one gold fact against one response.
struct FactJudgment {
  std::string fact_id;
  int perceived = 0;  // the fact's statement appears before the boxed answer
  int used = 0;       // perceived, cited as an operand of the final derivation,
                      // and never contradicted afterwards
};

std::vector<FactJudgment> judge_facts(const std::vector<int>& response,
                                      const std::vector<world::GoldFact>& facts);

// Pr(P = 1) over all judged facts.
double perception_coverage(const std::vector<FactJudgment>& judgments);
// Pr(U = 1 | P = 1); empty when no fact was perceived.
std::optional<double> faithful_use(const std::vector<FactJudgment>& judgments);

struct GroupBits {
  std::string group_id;
  std::vector<int> bits;  // per-variant correctness, in variant order
};

struct WcaResult {
  double wca = 0;      // fraction of groups with every variant correct
  double avg_acc = 0;  // plain accuracy over all variants
};

// All groups must have the same variant count.
WcaResult worst_case_accuracy(const std::vector<GroupBits>& groups);

// wca / avg_acc; empty when avg_acc = 0.
std::optional<double> reasoning_robustness(double wca, double avg_acc);

struct EvalConfig {
  int max_new = 32;
  int heatmap_top_n = 0;            // tasks to render diagnostic images for
  std::filesystem::path image_dir;  // required when heatmap_top_n > 0
  std::vector<anchor::LayerHead> layer_head_set;  // empty = anchoring default
  int workers = 1;
};

struct TaskResult {
  std::string task_id;
  std::string group_id;
  std::string family;
  int correct = 0;
  std::vector<int> response;
  std::vector<FactJudgment> facts;
};

struct PRDReport {
  std::vector<TaskResult> tasks;
  int groups = 0;
  int variants_per_group = 0;
  double accuracy = 0;
  double perception = 0;
  std::optional<double> faithful;
  double wca = 0;
  std::optional<double> robustness;
};

// Greedy decoding over the corpus, fact judging, groupwise worst-case
// aggregation. Groups follow first appearance order; image files are named
// {task_id}_focus.ppm and {task_id}_dt.ppm.
PRDReport evaluate_checkpoint(const vlm::Checkpoint& ckpt, const std::vector<world::Task>& tasks,
                              const EvalConfig& cfg);

// Full report as a JSON string, stamped with the config hash and the
// checkpoint's stage and provenance.
std::string report_to_json(const PRDReport& report, const std::string& config_hash,
                           const vlm::Checkpoint& ckpt);

}  // namespace gridvlm::prd
