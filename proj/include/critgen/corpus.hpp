#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "critgen/criteria_parser.hpp"
#include "critgen/trial.hpp"

namespace critgen {

using Corpus = std::vector<TrialDocument>;

struct SynthConfig {
  std::size_t n_trials = 200;
  std::uint64_t seed = 7;
  // Attribute tags the generator may realize; must cover the 12 built-in ones.
  std::vector<std::string> attribute_lexicon = AttributeSchema::default_schema().tags();
};

// Attribute tags every synthetic lexicon must contain.
const std::vector<std::string>& required_attributes();

// Generates trials from disease profiles and per-attribute surface templates.
// Each attributed criterion records its gold relation at generation time.
Corpus synthesize_corpus(const SynthConfig& config);

// Ingests a JSON-lines registry export with fields title / condition /
// intervention / eligibility (optional nct_id). Drops records without title,
// condition or intervention, and records with void eligibility.
Corpus ingest_registry(const std::filesystem::path& path);

// Splits a free-text eligibility block into inclusion/exclusion criteria by
// its "Inclusion Criteria:" / "Exclusion Criteria:" headers.
void split_eligibility(const std::string& eligibility, std::vector<Criterion>& inclusion,
                       std::vector<Criterion>& exclusion);

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);
std::string serialize_trial(const TrialDocument& trial);
TrialDocument deserialize_trial(const std::string& line);

// Throws ConfigError when ids are empty/duplicated or a trial has no criteria.
void validate_corpus(const Corpus& corpus);

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> valid;
  std::vector<std::string> test;
  std::uint64_t seed = 0;

  void save(const std::filesystem::path& path) const;
  static DatasetSplit load(const std::filesystem::path& path);
};

struct SplitRatios {
  double train = 0.72;
  double valid = 0.08;
  double test = 0.20;
};

// Seeded shuffle, then largest-remainder rounding of the ratios.
DatasetSplit split(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed);

// Setup fields and criteria texts, the input to vocabulary building.
std::vector<std::string> corpus_texts(const Corpus& corpus);

// Trials whose ids are listed, in corpus order.
Corpus select_trials(const Corpus& corpus, const std::vector<std::string>& ids);

struct PretrainSample {
  std::string trial_id;
  TrialSetup setup;
  std::vector<Criterion> exemplar;   // x_e: other criteria of the same trial
  std::vector<Criterion> rationale;  // y_t: remaining criteria, document order
  Criterion target;                  // y_c
};

struct PretrainPolicy {
  // 0 = every criterion of every eligible trial becomes a target once.
  std::size_t targets_per_trial = 0;
  std::size_t exemplar_size = 2;
};

std::vector<PretrainSample> build_pretrain_set(const Corpus& corpus, std::uint64_t seed,
                                               const PretrainPolicy& policy = {});

struct InstructionCriterionPair {
  std::string trial_id;
  TrialSetup setup;
  std::string instruction;
  Criterion target;
  std::vector<Criterion> rationale_chain;
};

struct PairExtraction {
  std::vector<InstructionCriterionPair> pairs;
  std::size_t skipped = 0;
};

// One pair per criterion whose parse yields a relation. The chain is the
// `max_chain` criteria preceding the target in document order.
PairExtraction extract_pairs(const Corpus& corpus, const CriteriaParser& parser,
                             std::size_t max_chain = 2);

}  // namespace critgen
