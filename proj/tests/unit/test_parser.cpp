#include <doctest.h>

#include "critgen/corpus.hpp"
#include "critgen/criteria_parser.hpp"
#include "critgen/text.hpp"

using namespace critgen;

namespace {

Relation rel(std::string attr, Comparator c, std::vector<double> nums, std::vector<std::string> labels,
             std::string unit) {
  return {std::move(attr), c, std::move(nums), std::move(labels), std::move(unit)};
}

}  // namespace

TEST_CASE("anchored phrasings parse to their relations") {
  const CriteriaParser parser;
  CHECK(parser.parse("age is above 18 yrs old") ==
        RelationSet{rel("age", Comparator::kGreater, {18}, {}, "years")});
  CHECK(parser.parse("NYHA class is above II") ==
        RelationSet{rel("nyha", Comparator::kInSet, {}, {"III", "IV"}, "")});
  CHECK(parser.parse("Body mass index (BMI) within the range of 19-35 kg/m2") ==
        RelationSet{rel("bmi", Comparator::kInRange, {19, 35}, {}, "kg/m2")});
}

TEST_CASE("comparator cues and unit spellings") {
  const CriteriaParser parser;
  CHECK(parser.parse("Age 60 years or older") ==
        RelationSet{rel("age", Comparator::kGreaterEqual, {60}, {}, "years")});
  CHECK(parser.parse("BMI \xe2\x89\xa4 30 kg/m\xc2\xb2") ==
        RelationSet{rel("bmi", Comparator::kLessEqual, {30}, {}, "kg/m2")});
  CHECK(parser.parse("Heart failure (NYHA class III and IV)") ==
        RelationSet{rel("nyha", Comparator::kInSet, {}, {"III", "IV"}, "")});
  CHECK(parser.parse("Pregnant or breastfeeding") ==
        RelationSet{rel("pregnancy", Comparator::kBoolean, {}, {}, "")});
  CHECK(parser.parse("patient consents in writing").empty());
  CHECK(parser.parse("").empty());
}

TEST_CASE("every synthetic criterion parses to its gold relation") {
  const CriteriaParser parser;
  SynthConfig cfg;
  cfg.n_trials = 400;
  std::size_t checked = 0, exact = 0;
  for (const auto& trial : synthesize_corpus(cfg)) {
    for (const auto& c : trial.all_criteria()) {
      const RelationSet gold(c.gold.begin(), c.gold.end());
      const RelationSet got = parser.parse(c.text);
      ++checked;
      if (got == gold) {
        ++exact;
      } else {
        INFO(c.text);
        CHECK(got == gold);
      }
    }
    CHECK(relation_set(parser, trial.all_criteria()) == trial.gold_relations());
  }
  CHECK(checked > 2000);
  CHECK(exact == checked);
}

TEST_CASE("reparsing a detokenized rendering is idempotent") {
  const CriteriaParser parser;
  SynthConfig cfg;
  cfg.n_trials = 50;
  for (const auto& trial : synthesize_corpus(cfg)) {
    for (const auto& c : trial.all_criteria()) {
      const auto rendered = text::join(text::segment(text::normalize(c.text)));
      CHECK(parser.parse(rendered) == parser.parse(c.text));
    }
  }
}

TEST_CASE("compare_sets arithmetic") {
  const Relation r1 = rel("age", Comparator::kGreater, {18}, {}, "years");
  const Relation r2 = rel("bmi", Comparator::kInRange, {19, 35}, {}, "kg/m2");
  const Relation r3 = rel("pregnancy", Comparator::kBoolean, {}, {}, "");
  const Relation r4 = rel("sbp", Comparator::kGreater, {160}, {}, "mmHg");
  const auto c = compare_sets({r1, r2, r4}, {r1, r2, r3});
  CHECK(c.tp == 2);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
  CHECK(c.precision() == doctest::Approx(2.0 / 3));
  CHECK(c.recall() == doctest::Approx(2.0 / 3));
  CHECK(c.f1() == doctest::Approx(2.0 / 3));
  CHECK(c.jaccard() == doctest::Approx(0.5));

  const auto swapped = compare_sets({r1, r2, r3}, {r1, r2, r4});
  CHECK(swapped.tp == c.tp);
  CHECK(swapped.fp == c.fn);
  CHECK(swapped.fn == c.fp);

  const auto same = compare_sets({r1, r2}, {r1, r2});
  CHECK(same.f1() == 1.0);
  CHECK(same.jaccard() == 1.0);
  const auto disjoint = compare_sets({r1}, {r2});
  CHECK(disjoint.precision() == 0.0);
  CHECK(disjoint.f1() == 0.0);
  CHECK(disjoint.jaccard() == 0.0);
}

TEST_CASE("schema round-trips through its text form") {
  const auto& schema = AttributeSchema::default_schema();
  const auto again = AttributeSchema::parse(schema.serialize());
  CHECK(again.serialize() == schema.serialize());
  CHECK(again.tags() == schema.tags());
  CHECK(schema.tags().size() == 12);
}
