#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "critgen/error.hpp"
#include "critgen/metrics.hpp"
#include "critgen/training.hpp"
#include "fixtures.hpp"

using namespace critgen;

namespace {

Tokens T(std::string_view s) { return metric_tokens(s); }

Relation rel(const std::string& attr, double v) {
  Relation r;
  r.attribute = attr;
  r.comparator = Comparator::kGreaterEqual;
  r.numbers = {v};
  return r;
}

struct Fixture {
  const char* cand;
  const char* ref;
  double bleu1, rouge_l, meteor;
};

// Hand-computed, pre-scaling.
const Fixture kFixtures[] = {
    // clip 1/3, BP 1; LCS 1 -> P 1/3 R 1/2; one match, one chunk.
    {"a a a", "a b", 1.0 / 3, 2.44 * (1.0 / 6) / (0.5 + 1.44 / 3), (10 * (1.0 / 6) / 3.5) * 0.5},
    // clip 3/4; LCS 3 -> P 3/4 R 1; three matches in two chunks.
    {"a b c d", "a c d", 0.75, 2.44 * 0.75 / (1 + 1.44 * 0.75), (7.5 / 7.75) * (1 - 0.5 * 8.0 / 27)},
    // no exact unigram; both words align at the stem stage in one chunk.
    {"patients ages", "patient age", 0.0, 0.0, 1 - 0.5 / 8},
    // brevity penalty exp(1 - 4/2); LCS 2 -> P 1 R 1/2.
    {"a b", "a b c d", std::exp(-1.0), 2.44 * 0.5 / (0.5 + 1.44), (5 / 9.5) * (1 - 0.5 / 8)},
    // identity: one chunk of three.
    {"x y z", "x y z", 1.0, 1.0, 1 - 0.5 / 27},
};

}  // namespace

TEST_CASE("text metrics match hand-computed fixtures") {
  for (const auto& f : kFixtures) {
    CAPTURE(f.cand);
    CHECK(std::abs(bleu1(T(f.cand), {T(f.ref)}) / 100 - f.bleu1) < 1e-6);
    CHECK(std::abs(rouge_l(T(f.cand), T(f.ref)) / 100 - f.rouge_l) < 1e-6);
    CHECK(std::abs(meteor(T(f.cand), T(f.ref)) / 100 - f.meteor) < 1e-6);
  }
  CHECK(bleu1({}, {T("a")}) == 0);
  CHECK(bleu1(T("a b"), {T("c d")}) == 0);
  CHECK(rouge_l(T("a b"), T("c d")) == 0);
  CHECK(rouge_l(T("a"), {}) == 0);
  CHECK(meteor(T("a b"), T("c d")) == 0);
  // Closest reference length decides the brevity penalty.
  CHECK(bleu1(T("a b"), {T("a b c d e f"), T("a b c")}) == doctest::Approx(100 * std::exp(1 - 1.5)));
}

TEST_CASE("stemming rule") {
  CHECK(meteor_stem("ages") == "age");
  CHECK(meteor_stem("patients") == "patient");
  CHECK(meteor_stem("treated") == "treat");
  CHECK(meteor_stem("dosing") == "dos");
  CHECK(meteor_stem("is") == "is");
  CHECK(meteor(T("ages"), T("age")) > 0);
}

TEST_CASE("cider against a hand tf-idf computation") {
  const CiderIdf idf({T("a b"), T("a c"), T("b c")});
  CHECK(idf.documents() == 3);
  CHECK(idf.idf(T("a")) == doctest::Approx(std::log(1.5)));
  CHECK(idf.idf(T("a b")) == doctest::Approx(std::log(3.0)));
  CHECK(idf.idf(T("zz")) == doctest::Approx(std::log(3.0)));
  // n=1: cos({a,b,c},{a,b}) = 2/sqrt(6); n=2: cos({ab,bc},{ab}) = 1/sqrt(2);
  // n=3,4: the reference has no such n-grams.
  const double expect = (2 / std::sqrt(6.0) + 1 / std::sqrt(2.0)) / 4;
  CHECK(std::abs(cider(T("a b c"), {T("a b")}, idf) / 10 - expect) < 1e-6);
  CHECK(cider(T("q r"), {T("a b")}, idf) == 0);
  CHECK(cider({}, {T("a b")}, idf) == 0);

  const CiderIdf big({T("w x y z"), T("a b"), T("a c")});
  CHECK(cider(T("w x y z"), {T("w x y z")}, big) == doctest::Approx(10.0));
  const auto c1 = cider(T("a b x"), {T("a b"), T("w x y z")}, big);
  const auto c2 = cider(T("a b x"), {T("w x y z"), T("a b")}, big);
  CHECK(c1 == c2);
}

TEST_CASE("identity scores are maximal") {
  const CiderIdf idf({T("one two three four"), T("five six"), T("seven")});
  const auto x = T("one two three four");
  CHECK(bleu1(x, {x}) == doctest::Approx(100));
  CHECK(rouge_l(x, x) == doctest::Approx(100));
  CHECK(meteor(x, x) == doctest::Approx(100 * (1 - 0.5 / 64)));
  CHECK(meteor(x, x) >= meteor(T("one two three"), x));
  CHECK(cider(x, {x}, idf) == doctest::Approx(10));
}

TEST_CASE("clinical accuracy pools counts") {
  const RelationSet g1{rel("age", 18), rel("bmi", 19), rel("egfr", 30)};
  const RelationSet p1{rel("age", 18), rel("bmi", 19), rel("ecog", 2)};  // tp 2 fp 1 fn 1
  const RelationSet g2{rel("age", 21), rel("qtc", 450)};
  const RelationSet p2{rel("age", 21)};  // tp 1 fp 0 fn 1
  const auto acc = clinical_accuracy({{p1, g1}, {p2, g2}});
  CHECK(acc.precision == doctest::Approx(0.75));
  CHECK(acc.recall == doctest::Approx(0.6));
  CHECK(acc.jaccard == doctest::Approx(0.5));
  CHECK(acc.f1 == doctest::Approx(2 * 0.75 * 0.6 / 1.35));
  // Pooled, not the mean of per-trial scores.
  CHECK(acc.precision != doctest::Approx((2.0 / 3 + 1.0) / 2));
  const auto perfect = clinical_accuracy({{g1, g1}});
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.jaccard == 1.0);
  CHECK_THROWS_AS(clinical_accuracy({{p1, {}}}), Error);
}

TEST_CASE("score grouping and perfect items") {
  std::vector<EvalItem> items;
  for (int i = 0; i < 5; ++i) {
    EvalItem it;
    it.trial_id = "T" + std::to_string(i);
    it.disease = i < 2 ? "asthma" : "gout";
    it.generated = it.reference = "age 18 years or older";
    it.gold = it.pred = {rel("age", 18)};
    it.follows_instruction = true;
    items.push_back(it);
  }
  const auto r = score_items(items, EvalLevel::kCriteria, true);
  REQUIRE(r.reports.size() == 3);
  CHECK(r.reports[0].items == 5);
  CHECK(r.reports[1].items + r.reports[2].items == 5);
  CHECK(r.reports[0].bleu1 == doctest::Approx(100));
  CHECK(r.reports[0].clinical.f1 == 1.0);
  CHECK(*r.reports[0].instruction_accuracy == 1.0);
  CHECK(r.distribution.size() == 12);
  CHECK(r.distribution[0].median == doctest::Approx(100));
  const auto j = to_json(r);
  CHECK(j.at("reports").size() == 3);
  CHECK(format_table(r).find("asthma") != std::string::npos);
}

TEST_CASE("end-to-end evaluation is reproducible") {
  const auto corpus = fixtures::small_corpus(12);
  auto model = fixtures::small_model(corpus, fixtures::small_config(16));
  const auto pairs = extract_pairs(corpus, CriteriaParser{}, 1).pairs;
  OptimizerConfig oc;
  oc.learning_rate = 1e-2;
  oc.epochs = 3;
  train(model, pair_sequences(model, pairs, nullptr, {}), oc);
  const auto store = build_store(pairs, model);
  const Corpus test(corpus.begin(), corpus.begin() + 2);
  EvalConfig ec;
  ec.generation.num_candidates = 4;
  ec.generation.num_clusters = 2;
  ec.generation.max_new_tokens = 32;
  ec.group_by_disease = true;
  const auto a = evaluate(model, &store, test, ec);
  const auto b = evaluate(model, &store, test, ec);
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK_FALSE(a.reports.empty());
  CHECK(a.reports[0].instruction_accuracy.has_value());
  ec.level = EvalLevel::kTrial;
  const auto t = evaluate(model, &store, test, ec);
  CHECK_FALSE(t.reports.empty());
  CHECK_FALSE(t.reports[0].instruction_accuracy.has_value());
  CHECK_THROWS_AS(evaluate(model, &store, {}, ec), ConfigError);
  CHECK_THROWS_AS(eval_level_from_string("sentence"), ConfigError);
}
