#include <cmath>

#include "doctest.h"
#include "gridvlm/prd.hpp"
#include "gridvlm/task.hpp"
#include "gridvlm/vocab.hpp"

using namespace gridvlm;
namespace voc = vocab;

namespace {

int num(int n) { return voc::number_token(n); }

world::GoldFact fact(int r, int c, int v) {
  world::GoldFact f;
  f.id = "f" + std::to_string(r) + std::to_string(c);
  f.pattern = {voc::row_token(r), voc::col_token(c), voc::kIs, num(v)};
  return f;
}

}  // namespace

TEST_CASE("stating a fact without using it scores perceived but not used") {
  // "r1 c2 is 5 ; so 5 plus 2 is 7 ; [7]" uses the fact as an operand.
  std::vector<int> used = {voc::row_token(1), voc::col_token(2), voc::kIs, num(5),
                           voc::kSep,         voc::kSo,          num(5),   voc::kPlus,
                           num(2),            voc::kIs,          num(7),   voc::kSep,
                           voc::kBoxOpen,     num(7),            voc::kBoxClose, voc::kEos};
  auto j = prd::judge_facts(used, {fact(1, 2, 5)});
  REQUIRE(j.size() == 1);
  CHECK(j[0].perceived == 1);
  CHECK(j[0].used == 1);

  // The fact value appearing only as the RESULT of the derivation is not use.
  std::vector<int> result_only = {voc::row_token(1), voc::col_token(2), voc::kIs, num(7),
                                  voc::kSep,         voc::kSo,          num(5),   voc::kPlus,
                                  num(2),            voc::kIs,          num(7),   voc::kSep,
                                  voc::kBoxOpen,     num(7),            voc::kBoxClose, voc::kEos};
  j = prd::judge_facts(result_only, {fact(1, 2, 7)});
  REQUIRE(j.size() == 1);
  CHECK(j[0].perceived == 1);
  CHECK(j[0].used == 0);
}

TEST_CASE("a fact stated after the box or never stated is not perceived") {
  std::vector<int> late = {voc::kSo,          voc::kAnswer,      num(5),    voc::kSep,
                           voc::kBoxOpen,     num(5),            voc::kBoxClose,
                           voc::row_token(1), voc::col_token(2), voc::kIs,  num(5),
                           voc::kEos};
  auto j = prd::judge_facts(late, {fact(1, 2, 5)});
  CHECK(j[0].perceived == 0);
  CHECK(j[0].used == 0);

  std::vector<int> silent = {voc::kSo, voc::kAnswer, num(5), voc::kSep,
                             voc::kBoxOpen, num(5), voc::kBoxClose, voc::kEos};
  j = prd::judge_facts(silent, {fact(1, 2, 5)});
  CHECK(j[0].perceived == 0);
  CHECK(j[0].used == 0);
}

TEST_CASE("use requires a boxed answer and no later contradiction") {
  std::vector<int> no_box = {voc::row_token(1), voc::col_token(2), voc::kIs, num(5),
                             voc::kSep, voc::kSo, voc::kAnswer, num(5), voc::kEos};
  auto j = prd::judge_facts(no_box, {fact(1, 2, 5)});
  CHECK(j[0].perceived == 1);
  CHECK(j[0].used == 0);

  // Restating the same cell with a different value poisons the earlier use.
  std::vector<int> contradicted = {voc::row_token(1), voc::col_token(2), voc::kIs, num(5),
                                   voc::kSep,         voc::row_token(1), voc::col_token(2),
                                   voc::kIs,          num(3),            voc::kSep,
                                   voc::kSo,          voc::kAnswer,      num(5),
                                   voc::kSep,         voc::kBoxOpen,     num(5),
                                   voc::kBoxClose,    voc::kEos};
  j = prd::judge_facts(contradicted, {fact(1, 2, 5)});
  CHECK(j[0].perceived == 1);
  CHECK(j[0].used == 0);
}

TEST_CASE("gold responses of every family earn perceived and used on all facts") {
  for (int fi = 0; fi < world::kFamilyCount; ++fi)
    for (uint64_t seed = 0; seed < 12; ++seed) {
      world::Task t = world::generate_task(seed, static_cast<world::Family>(fi));
      std::vector<int> gold = world::gold_response(t);
      auto j = prd::judge_facts(gold, t.facts);
      REQUIRE(j.size() == t.facts.size());
      for (const prd::FactJudgment& f : j) {
        CHECK(f.perceived == 1);
        CHECK(f.used == 1);
      }
    }
}

TEST_CASE("judge_facts rejects malformed fact patterns") {
  world::GoldFact broken;
  broken.id = "bad";
  broken.pattern = {voc::row_token(0), voc::kIs, num(3)};
  CHECK_THROWS_AS(prd::judge_facts({voc::kEos}, {broken}), InputError);
}

TEST_CASE("coverage rates are plain means with an undefined guard") {
  std::vector<prd::FactJudgment> js = {
      {"a", 1, 1}, {"b", 1, 0}, {"c", 0, 0}, {"d", 1, 1}};
  CHECK(prd::perception_coverage(js) == doctest::Approx(0.75));
  auto fu = prd::faithful_use(js);
  REQUIRE(fu.has_value());
  CHECK(*fu == doctest::Approx(2.0 / 3.0));

  std::vector<prd::FactJudgment> none = {{"a", 0, 0}, {"b", 0, 0}};
  CHECK(prd::perception_coverage(none) == 0.0);
  CHECK(!prd::faithful_use(none).has_value());

  CHECK(prd::perception_coverage({}) == 0.0);
  CHECK(!prd::faithful_use({}).has_value());
}

TEST_CASE("worst-case accuracy counts fully solved groups") {
  std::vector<prd::GroupBits> groups = {
      {"g0", {1, 1, 1}}, {"g1", {1, 0, 1}}, {"g2", {0, 0, 0}}, {"g3", {1, 1, 1}}};
  prd::WcaResult w = prd::worst_case_accuracy(groups);
  CHECK(w.wca == doctest::Approx(0.5));
  CHECK(w.avg_acc == doctest::Approx((3.0 + 2.0 + 0.0 + 3.0) / 12.0));
  CHECK(w.wca <= w.avg_acc + 1e-15);

  auto rr = prd::reasoning_robustness(w.wca, w.avg_acc);
  REQUIRE(rr.has_value());
  CHECK(*rr == doctest::Approx(0.5 / (8.0 / 12.0)));

  CHECK(!prd::reasoning_robustness(0.0, 0.0).has_value());

  std::vector<prd::GroupBits> ragged = {{"g0", {1, 1}}, {"g1", {1}}};
  CHECK_THROWS_AS(prd::worst_case_accuracy(ragged), InputError);
  CHECK_THROWS_AS(prd::worst_case_accuracy({}), InputError);
}
