#pragma once

#include <string>
#include <vector>

#include "gridvlm/common.hpp"

namespace gridvlm::vocab {

// Closed vocabulary; ids are frozen, appended-only.
constexpr int kPad = 0;
constexpr int kEos = 1;
constexpr int kFocus = 2;
constexpr int kBoxOpen = 3;
constexpr int kBoxClose = 4;
constexpr int kSep = 5;     // ";"
constexpr int kQMark = 6;   // "?"
constexpr int kNumBase = 7;  // "0".."18" -> 7..25
constexpr int kNumCount = 19;
constexpr int kRowBase = 26;  // r0..r3
constexpr int kColBase = 30;  // c0..c3
constexpr int kWhat = 34;
constexpr int kValue = 35;
constexpr int kAt = 36;
constexpr int kCount = 37;
constexpr int kCells = 38;
constexpr int kWith = 39;
constexpr int kCompare = 40;
constexpr int kAnd = 41;
constexpr int kSum = 42;
constexpr int kSo = 43;
constexpr int kAnswer = 44;
constexpr int kIs = 45;
constexpr int kGreater = 46;
constexpr int kLess = 47;
constexpr int kEqual = 48;
constexpr int kPlus = 49;
constexpr int kFirst = 50;
constexpr int kSecond = 51;
constexpr int kSame = 52;
constexpr int kPerceive = 53;
constexpr int kCues = 54;
constexpr int kInto = 55;
constexpr int kThen = 56;
constexpr int kThink = 57;

constexpr int kSize = 96;  // ids 58..95 reserved

int number_token(int n);
int row_token(int r);
int col_token(int c);
bool is_number(int id);
int number_value(int id);  // InputError if not a number token

const std::string& token_text(int id);
std::string detokenize(const std::vector<int>& ids);

}  // namespace gridvlm::vocab
