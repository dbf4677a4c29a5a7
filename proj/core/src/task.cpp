#include "gridvlm/task.hpp"

#include <json.hpp>

#include <algorithm>
#include <random>

#include "gridvlm/vocab.hpp"

namespace gridvlm::world {

namespace voc = gridvlm::vocab;
using ordered_json = nlohmann::ordered_json;

namespace {

const std::string kFamilyNames[kFamilyCount] = {"lookup", "count", "compare", "arithmetic"};

uint64_t rand_below(std::mt19937_64& rng, uint64_t n) {
  uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

void fill_grid(std::mt19937_64& rng, GridImage& img) {
  for (Cell& c : img.cells) {
    c.symbol = static_cast<int>(rand_below(rng, kSymbolCount));
    c.color = static_cast<int>(rand_below(rng, kColorCount));
  }
}

// What the question asks about, independent of the grid contents.
struct QuestionSpec {
  Family family = Family::kLookup;
  int r0 = 0, c0 = 0;       // lookup / compare / arithmetic first cell
  int r1 = 0, c1 = 0;       // compare / arithmetic second cell
  int target_value = 0;     // count
};

QuestionSpec random_spec(std::mt19937_64& rng, Family family) {
  QuestionSpec q;
  q.family = family;
  switch (family) {
    case Family::kLookup:
      q.r0 = static_cast<int>(rand_below(rng, 4));
      q.c0 = static_cast<int>(rand_below(rng, 4));
      break;
    case Family::kCount:
      q.target_value = static_cast<int>(rand_below(rng, kSymbolCount));
      break;
    case Family::kCompare:
    case Family::kArithmetic: {
      int a = static_cast<int>(rand_below(rng, 16));
      int b = static_cast<int>(rand_below(rng, 15));
      if (b >= a) ++b;
      q.r0 = a / 4;
      q.c0 = a % 4;
      q.r1 = b / 4;
      q.c1 = b % 4;
      break;
    }
  }
  return q;
}

// Count tasks pin the multiplicity: exactly k cells carry the target value.
void enforce_count_structure(std::mt19937_64& rng, GridImage& img, int target_value) {
  int k = 1 + static_cast<int>(rand_below(rng, 4));
  std::vector<int> idx(16);
  for (int i = 0; i < 16; ++i) idx[static_cast<size_t>(i)] = i;
  for (int i = 0; i < k; ++i) {
    int j = i + static_cast<int>(rand_below(rng, static_cast<uint64_t>(16 - i)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  std::vector<bool> chosen(16, false);
  for (int i = 0; i < k; ++i) chosen[static_cast<size_t>(idx[static_cast<size_t>(i)])] = true;
  for (int i = 0; i < 16; ++i) {
    Cell& cell = img.cells[static_cast<size_t>(i)];
    if (chosen[static_cast<size_t>(i)]) {
      cell.symbol = target_value;
    } else {
      int v = static_cast<int>(rand_below(rng, kSymbolCount - 1));
      if (v >= target_value) ++v;
      cell.symbol = v;
    }
  }
}

GoldFact cell_fact(const GridImage& img, int r, int c, int ordinal) {
  GoldFact f;
  f.id = "f" + std::to_string(ordinal);
  f.pattern = {voc::row_token(r), voc::col_token(c), voc::kIs,
               voc::number_token(img.cell(r, c).symbol)};
  return f;
}

// Question, answer, facts, and evidence boxes all derive from the spec plus
// the grid, so re-randomized variants stay internally consistent.
void assemble(Task& t, const QuestionSpec& q) {
  t.family = q.family;
  t.question.clear();
  t.gold_answer.clear();
  t.facts.clear();
  t.evidence_boxes.clear();
  const GridImage& img = t.image;
  switch (q.family) {
    case Family::kLookup: {
      t.question = {voc::kWhat, voc::kValue, voc::kAt, voc::row_token(q.r0),
                    voc::col_token(q.c0), voc::kQMark};
      int v = img.cell(q.r0, q.c0).symbol;
      t.gold_answer = {voc::number_token(v)};
      t.facts = {cell_fact(img, q.r0, q.c0, 0)};
      t.evidence_boxes = {img.cell_box(q.r0, q.c0)};
      break;
    }
    case Family::kCount: {
      t.question = {voc::kCount, voc::kCells, voc::kWith, voc::kValue,
                    voc::number_token(q.target_value), voc::kQMark};
      int k = 0;
      for (int r = 0; r < img.cell_rows; ++r) {
        for (int c = 0; c < img.cell_cols; ++c) {
          if (img.cell(r, c).symbol != q.target_value) continue;
          t.facts.push_back(cell_fact(img, r, c, k));
          t.evidence_boxes.push_back(img.cell_box(r, c));
          ++k;
        }
      }
      t.gold_answer = {voc::number_token(k)};
      break;
    }
    case Family::kCompare: {
      t.question = {voc::kCompare, voc::row_token(q.r0), voc::col_token(q.c0), voc::kAnd,
                    voc::row_token(q.r1), voc::col_token(q.c1), voc::kQMark};
      int va = img.cell(q.r0, q.c0).symbol;
      int vb = img.cell(q.r1, q.c1).symbol;
      t.gold_answer = {va > vb ? voc::kFirst : (va < vb ? voc::kSecond : voc::kSame)};
      t.facts = {cell_fact(img, q.r0, q.c0, 0), cell_fact(img, q.r1, q.c1, 1)};
      t.evidence_boxes = {img.cell_box(q.r0, q.c0), img.cell_box(q.r1, q.c1)};
      break;
    }
    case Family::kArithmetic: {
      t.question = {voc::kSum, voc::row_token(q.r0), voc::col_token(q.c0), voc::kAnd,
                    voc::row_token(q.r1), voc::col_token(q.c1), voc::kQMark};
      int va = img.cell(q.r0, q.c0).symbol;
      int vb = img.cell(q.r1, q.c1).symbol;
      t.gold_answer = {voc::number_token(va + vb)};
      t.facts = {cell_fact(img, q.r0, q.c0, 0), cell_fact(img, q.r1, q.c1, 1)};
      t.evidence_boxes = {img.cell_box(q.r0, q.c0), img.cell_box(q.r1, q.c1)};
      break;
    }
  }
}

int row_from_token(int id) { return id - voc::kRowBase; }
int col_from_token(int id) { return id - voc::kColBase; }

// Recovers the spec from question tokens; the question grammar is closed.
QuestionSpec spec_from_question(Family family, const std::vector<int>& question) {
  QuestionSpec q;
  q.family = family;
  switch (family) {
    case Family::kLookup:
      if (question.size() != 6) throw InputError("malformed lookup question");
      q.r0 = row_from_token(question[3]);
      q.c0 = col_from_token(question[4]);
      break;
    case Family::kCount:
      if (question.size() != 6) throw InputError("malformed count question");
      q.target_value = voc::number_value(question[4]);
      break;
    case Family::kCompare:
    case Family::kArithmetic:
      if (question.size() != 7) throw InputError("malformed two-cell question");
      q.r0 = row_from_token(question[1]);
      q.c0 = col_from_token(question[2]);
      q.r1 = row_from_token(question[4]);
      q.c1 = col_from_token(question[5]);
      break;
  }
  return q;
}

std::string hex16(uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

}  // namespace

const std::string& family_name(Family f) { return kFamilyNames[static_cast<int>(f)]; }

Family family_from_name(const std::string& name) {
  for (int i = 0; i < kFamilyCount; ++i)
    if (kFamilyNames[i] == name) return static_cast<Family>(i);
  throw InputError("unknown task family: " + name);
}

int fact_row(const GoldFact& f) {
  if (f.pattern.size() != 4) throw InputError("fact pattern must have 4 tokens");
  return row_from_token(f.pattern[0]);
}
int fact_col(const GoldFact& f) {
  if (f.pattern.size() != 4) throw InputError("fact pattern must have 4 tokens");
  return col_from_token(f.pattern[1]);
}
int fact_value_token(const GoldFact& f) {
  if (f.pattern.size() != 4) throw InputError("fact pattern must have 4 tokens");
  return f.pattern[3];
}

Task generate_task(uint64_t seed, Family family) {
  std::mt19937_64 rng(mix_seed(seed, "task", static_cast<uint64_t>(family)));
  Task t;
  t.seed = seed;
  t.image = make_grid_image();
  fill_grid(rng, t.image);
  QuestionSpec q = random_spec(rng, family);
  if (family == Family::kCount) enforce_count_structure(rng, t.image, q.target_value);
  assemble(t, q);
  t.task_id = family_name(family) + "-" + hex16(seed);
  t.variant_group_id = t.task_id;
  return t;
}

std::vector<Task> make_variants(const Task& base, int k, uint64_t seed) {
  if (k <= 0) throw InputError("variant count must be positive");
  QuestionSpec q = spec_from_question(base.family, base.question);
  std::vector<Task> out;
  out.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    Task t;
    t.seed = mix_seed(seed, "variant", static_cast<uint64_t>(i));
    std::mt19937_64 rng(t.seed);
    t.image = make_grid_image(base.image.cell_rows, base.image.cell_cols, base.image.patch_size);
    fill_grid(rng, t.image);
    if (base.family == Family::kCount) enforce_count_structure(rng, t.image, q.target_value);
    assemble(t, q);
    t.task_id = base.task_id + "-v" + std::to_string(i);
    t.variant_group_id = base.task_id;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<int> gold_response(const Task& task) {
  std::vector<int> r;
  for (const GoldFact& f : task.facts) {
    r.insert(r.end(), f.pattern.begin(), f.pattern.end());
    r.push_back(voc::kSep);
  }
  switch (task.family) {
    case Family::kLookup:
      r.insert(r.end(), {voc::kSo, voc::kAnswer, fact_value_token(task.facts.at(0))});
      break;
    case Family::kCount:
      r.insert(r.end(), {voc::kSo, voc::number_token(spec_from_question(task.family, task.question).target_value),
                         voc::kCount, task.gold_answer.at(0)});
      break;
    case Family::kCompare: {
      int va = voc::number_value(fact_value_token(task.facts.at(0)));
      int vb = voc::number_value(fact_value_token(task.facts.at(1)));
      int rel = va > vb ? voc::kGreater : (va < vb ? voc::kLess : voc::kEqual);
      r.insert(r.end(), {voc::kSo, voc::number_token(va), rel, voc::number_token(vb)});
      break;
    }
    case Family::kArithmetic: {
      int va = voc::number_value(fact_value_token(task.facts.at(0)));
      int vb = voc::number_value(fact_value_token(task.facts.at(1)));
      r.insert(r.end(), {voc::kSo, voc::number_token(va), voc::kPlus, voc::number_token(vb),
                         voc::kIs, voc::number_token(va + vb)});
      break;
    }
  }
  r.push_back(voc::kSep);
  r.push_back(voc::kBoxOpen);
  r.insert(r.end(), task.gold_answer.begin(), task.gold_answer.end());
  r.push_back(voc::kBoxClose);
  r.push_back(voc::kEos);
  return r;
}

std::optional<std::vector<int>> extract_boxed_answer(const std::vector<int>& response) {
  std::optional<std::vector<int>> last;
  std::optional<size_t> open;
  for (size_t i = 0; i < response.size(); ++i) {
    if (response[i] == voc::kBoxOpen) {
      open = i;
    } else if (response[i] == voc::kBoxClose && open) {
      last.emplace(response.begin() + static_cast<long>(*open) + 1,
                   response.begin() + static_cast<long>(i));
      open.reset();
    }
  }
  return last;
}

namespace {

ordered_json task_to_json(const Task& t) {
  ordered_json j;
  j["task_id"] = t.task_id;
  j["seed"] = t.seed;
  j["family"] = family_name(t.family);
  ordered_json grid;
  grid["width"] = t.image.width;
  grid["height"] = t.image.height;
  grid["patch_size"] = t.image.patch_size;
  grid["rows"] = t.image.cell_rows;
  grid["cols"] = t.image.cell_cols;
  ordered_json cells = ordered_json::array();
  for (const Cell& c : t.image.cells) cells.push_back({c.symbol, c.color});
  grid["cells"] = cells;
  j["grid"] = grid;
  j["question_tokens"] = t.question;
  j["answer_tokens"] = t.gold_answer;
  ordered_json boxes = ordered_json::array();
  for (const BoundingBox& b : t.evidence_boxes) boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
  j["boxes"] = boxes;
  ordered_json facts = ordered_json::array();
  for (const GoldFact& f : t.facts) {
    ordered_json fj;
    fj["id"] = f.id;
    fj["pattern"] = f.pattern;
    facts.push_back(fj);
  }
  j["facts"] = facts;
  j["variant_group_id"] = t.variant_group_id;
  return j;
}

Task task_from_json(const ordered_json& j) {
  Task t;
  t.task_id = j.at("task_id").get<std::string>();
  t.seed = j.at("seed").get<uint64_t>();
  t.family = family_from_name(j.at("family").get<std::string>());
  const auto& grid = j.at("grid");
  t.image.width = grid.at("width").get<int>();
  t.image.height = grid.at("height").get<int>();
  t.image.patch_size = grid.at("patch_size").get<int>();
  t.image.cell_rows = grid.at("rows").get<int>();
  t.image.cell_cols = grid.at("cols").get<int>();
  for (const auto& c : grid.at("cells")) {
    if (!c.is_array() || c.size() != 2) throw InputError("cell must be [symbol, color]");
    t.image.cells.push_back(Cell{c.at(0).get<int>(), c.at(1).get<int>()});
  }
  t.image.validate();
  t.question = j.at("question_tokens").get<std::vector<int>>();
  t.gold_answer = j.at("answer_tokens").get<std::vector<int>>();
  for (const auto& b : j.at("boxes")) {
    if (!b.is_array() || b.size() != 4) throw InputError("box must be [x_min,y_min,x_max,y_max]");
    t.evidence_boxes.push_back(
        BoundingBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()});
  }
  for (const auto& fj : j.at("facts")) {
    GoldFact f;
    f.id = fj.at("id").get<std::string>();
    f.pattern = fj.at("pattern").get<std::vector<int>>();
    if (f.pattern.size() != 4) throw InputError("fact pattern must have 4 tokens");
    t.facts.push_back(std::move(f));
  }
  t.variant_group_id = j.at("variant_group_id").get<std::string>();
  for (int id : t.question)
    if (id < 0 || id >= voc::kSize) throw InputError("question token out of range");
  for (int id : t.gold_answer)
    if (id < 0 || id >= voc::kSize) throw InputError("answer token out of range");
  return t;
}

}  // namespace

std::string corpus_to_jsonl(const std::vector<Task>& tasks) {
  std::string out;
  for (const Task& t : tasks) {
    out += task_to_json(t).dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<Task> corpus_from_jsonl(const std::string& text) {
  std::vector<Task> tasks;
  size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (line.empty()) continue;
    try {
      tasks.push_back(task_from_json(ordered_json::parse(line)));
    } catch (const std::exception& e) {
      throw InputError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return tasks;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Task>& tasks) {
  write_file_atomic(path, corpus_to_jsonl(tasks));
}

std::vector<Task> read_corpus(const std::filesystem::path& path) {
  return corpus_from_jsonl(read_text_file(path));
}

}  // namespace gridvlm::world
