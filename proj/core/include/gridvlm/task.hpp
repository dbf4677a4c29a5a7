#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gridvlm/geometry.hpp"

namespace gridvlm::world {

enum class Family { kLookup, kCount, kCompare, kArithmetic };

const std::string& family_name(Family f);
Family family_from_name(const std::string& name);
constexpr int kFamilyCount = 4;

// One atomic piece of visual evidence the gold reasoning relies on.
// pattern is the canonical statement [row_tok, col_tok, "is", value_tok].
struct GoldFact {
  std::string id;
  std::vector<int> pattern;
};

int fact_row(const GoldFact& f);
int fact_col(const GoldFact& f);
int fact_value_token(const GoldFact& f);

struct Task {
  std::string task_id;
  uint64_t seed = 0;
  Family family = Family::kLookup;
  GridImage image;
  std::vector<int> question;     // question tokens, ends with "?"
  std::vector<int> gold_answer;  // tokens expected inside the boxed answer
  std::vector<BoundingBox> evidence_boxes;
  std::vector<GoldFact> facts;
  std::string variant_group_id;
};

Task generate_task(uint64_t seed, Family family);

// k siblings sharing the question (and variant_group_id) with the evidence
// re-randomized, so the gold answers generally differ across the group.
std::vector<Task> make_variants(const Task& base, int k, uint64_t seed);

// Gold chain-of-evidence response: fact statements, a derivation clause, the
// boxed answer, then <eos>.
std::vector<int> gold_response(const Task& task);

// Answer tokens inside the last complete <box>..</box> span, if any.
std::optional<std::vector<int>> extract_boxed_answer(const std::vector<int>& response);

std::string corpus_to_jsonl(const std::vector<Task>& tasks);
std::vector<Task> corpus_from_jsonl(const std::string& text);
void write_corpus(const std::filesystem::path& path, const std::vector<Task>& tasks);
std::vector<Task> read_corpus(const std::filesystem::path& path);

}  // namespace gridvlm::world
