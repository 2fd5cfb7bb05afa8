#pragma once

// Text-overlap metrics, relation-level clinical accuracy and the evaluation
// driver that produces per-polarity (and per-disease) reports.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "critgen/corpus.hpp"
#include "critgen/criteria_parser.hpp"
#include "critgen/generation.hpp"

namespace critgen {

using Tokens = std::vector<std::string>;

// Lowercased word segmentation used by every text metric.
Tokens metric_tokens(std::string_view text);

// Clipped unigram precision times brevity penalty; x100. The reference length
// is the one closest to the candidate's (shorter on ties).
double bleu1(const Tokens& candidate, const std::vector<Tokens>& references);
// LCS F-measure with beta = 1.2; x100.
double rouge_l(const Tokens& candidate, const Tokens& reference);

// Crude suffix stripping for the second METEOR stage.
std::string meteor_stem(const std::string& word);
// Exact then stem alignment, Fmean = 10PR/(R+9P), fragmentation penalty
// 0.5 (chunks/matches)^3; x100.
double meteor(const Tokens& candidate, const Tokens& reference);

// Document frequencies of 1..4-grams over a reference corpus.
class CiderIdf {
 public:
  explicit CiderIdf(const std::vector<Tokens>& documents);
  // log(max(1, N) / max(1, df)).
  double idf(const Tokens& ngram) const;
  std::size_t documents() const { return n_docs_; }

 private:
  std::size_t n_docs_ = 0;
  std::map<Tokens, std::size_t> df_;
};

// 10 x mean over n = 1..4 of the mean cosine between TF-IDF n-gram vectors.
double cider(const Tokens& candidate, const std::vector<Tokens>& references, const CiderIdf& idf);

struct ClinicalAccuracy {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0, recall = 0, f1 = 0, jaccard = 0;
};

// Micro aggregation of per-item (pred, gold) relation sets. Throws when the
// gold side holds no relation at all.
ClinicalAccuracy clinical_accuracy(const std::vector<std::pair<RelationSet, RelationSet>>& items);

enum class EvalLevel { kCriteria, kTrial };
std::string_view to_string(EvalLevel level);
EvalLevel eval_level_from_string(std::string_view s);

struct MetricReport {
  EvalLevel level = EvalLevel::kCriteria;
  Polarity polarity = Polarity::kInclusion;
  std::optional<std::string> group;  // disease, when grouped
  std::size_t items = 0;
  std::size_t trials = 0;
  double bleu1 = 0, meteor = 0, rouge_l = 0, cider = 0;
  ClinicalAccuracy clinical;
  // Criteria level: share of requests whose output parses to the requested
  // attribute.
  std::optional<double> instruction_accuracy;
};

// One scored generation: a criteria-level request or one polarity of a trial.
struct EvalItem {
  std::string trial_id;
  std::string disease;
  Polarity polarity = Polarity::kInclusion;
  std::string instruction;  // criteria level only
  std::string generated;
  std::string reference;
  RelationSet pred, gold;
  bool follows_instruction = false;
  double bleu1 = 0, meteor = 0, rouge_l = 0, cider = 0;
};

struct Quartiles {
  std::string group;
  std::string metric;
  Polarity polarity = Polarity::kInclusion;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

struct EvalConfig {
  EvalLevel level = EvalLevel::kCriteria;
  bool group_by_disease = false;
  GenerationConfig generation;
  SequenceOptions sequence;
  std::size_t prefix_tokens = 3;
  std::size_t max_chain = 2;
};

struct EvalResult {
  std::vector<MetricReport> reports;  // overall per polarity, then groups
  std::vector<EvalItem> items;
  std::vector<Quartiles> distribution;
};

// Scores already generated items: fills per-item metrics and aggregates.
EvalResult score_items(std::vector<EvalItem> items, EvalLevel level, bool group_by_disease);

EvalResult evaluate(const ModelState& model, const KnowledgeStore* store, const Corpus& split,
                    const EvalConfig& config, const CriteriaParser& parser = CriteriaParser{});

nlohmann::json to_json(const EvalResult& result);
// Text table with one row per report.
std::string format_table(const EvalResult& result);

}  // namespace critgen
