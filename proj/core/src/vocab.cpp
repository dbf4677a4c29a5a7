#include "gridvlm/vocab.hpp"

#include <array>

namespace gridvlm::vocab {

namespace {
std::array<std::string, kSize> build_table() {
  std::array<std::string, kSize> t;
  t[kPad] = "<pad>";
  t[kEos] = "<eos>";
  t[kFocus] = "<focus>";
  t[kBoxOpen] = "<box>";
  t[kBoxClose] = "</box>";
  t[kSep] = ";";
  t[kQMark] = "?";
  for (int n = 0; n < kNumCount; ++n) t[kNumBase + n] = std::to_string(n);
  for (int r = 0; r < 4; ++r) t[kRowBase + r] = "r" + std::to_string(r);
  for (int c = 0; c < 4; ++c) t[kColBase + c] = "c" + std::to_string(c);
  t[kWhat] = "what";
  t[kValue] = "value";
  t[kAt] = "at";
  t[kCount] = "count";
  t[kCells] = "cells";
  t[kWith] = "with";
  t[kCompare] = "compare";
  t[kAnd] = "and";
  t[kSum] = "sum";
  t[kSo] = "so";
  t[kAnswer] = "answer";
  t[kIs] = "is";
  t[kGreater] = "greater";
  t[kLess] = "less";
  t[kEqual] = "equal";
  t[kPlus] = "plus";
  t[kFirst] = "first";
  t[kSecond] = "second";
  t[kSame] = "same";
  t[kPerceive] = "perceive";
  t[kCues] = "cues";
  t[kInto] = "into";
  t[kThen] = "then";
  t[kThink] = "think";
  for (int i = kThink + 1; i < kSize; ++i) t[i] = "<unused" + std::to_string(i) + ">";
  return t;
}
const std::array<std::string, kSize> kTable = build_table();
}  // namespace

int number_token(int n) {
  if (n < 0 || n >= kNumCount) throw InputError("number out of vocabulary range");
  return kNumBase + n;
}

int row_token(int r) {
  if (r < 0 || r >= 4) throw InputError("row index out of range");
  return kRowBase + r;
}

int col_token(int c) {
  if (c < 0 || c >= 4) throw InputError("col index out of range");
  return kColBase + c;
}

bool is_number(int id) { return id >= kNumBase && id < kNumBase + kNumCount; }

int number_value(int id) {
  if (!is_number(id)) throw InputError("not a number token");
  return id - kNumBase;
}

const std::string& token_text(int id) {
  if (id < 0 || id >= kSize) throw InputError("token id out of range");
  return kTable[static_cast<size_t>(id)];
}

std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += token_text(ids[i]);
  }
  return out;
}

}  // namespace gridvlm::vocab
