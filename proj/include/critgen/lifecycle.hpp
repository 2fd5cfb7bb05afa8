#pragma once

// End-to-end workflow (pretrain, store, finetune), instruction extension with
// a frozen backbone, and the continual-learning and ablation harnesses.

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "critgen/corpus.hpp"
#include "critgen/embedstore.hpp"
#include "critgen/metrics.hpp"
#include "critgen/model.hpp"
#include "critgen/prompting.hpp"
#include "critgen/training.hpp"

namespace critgen {

struct PipelineConfig {
  ModelConfig model;
  std::size_t min_frequency = 1;
  std::size_t instruction_capacity = 32;  // vocabulary slots for instruction tags
  PretrainPolicy pretrain_policy;
  OptimizerConfig pretrain;
  OptimizerConfig finetune;
  SequenceOptions sequence;
  std::size_t max_chain = 2;
  EvalConfig eval;
};

// Labeled pairs whose instruction is one of `tags`.
std::vector<InstructionCriterionPair> labeled_pairs(const Corpus& corpus, const CriteriaParser& parser,
                                                    std::size_t max_chain, const std::vector<std::string>& tags);

// Criteria-level request for one trial. The block prefix comes from the
// trial's first criterion that parses to `instruction`, when there is one.
CriteriaRequest criteria_request(const TrialDocument& trial, const std::string& instruction,
                                 const CriteriaParser& parser, std::size_t prefix_tokens);

// Vocabulary from `train`, fresh model with `instructions` registered, then
// MLE pretraining without the neural prompt.
ModelState pretrain_model(const Corpus& train, const PipelineConfig& config,
                          const std::vector<std::string>& instructions, TrainResult* log = nullptr,
                          const TrainOptions& options = {});

// Finetunes on labeled pairs with exemplars retrieved from `store` (built
// from `model` first when empty), then rekeys the store for the new backbone.
TrainResult finetune_model(ModelState& model, KnowledgeStore& store, const std::vector<InstructionCriterionPair>& pairs,
                           const PipelineConfig& config, const TrainOptions& options = {});

// Registers new tags: vocabulary slot, fresh E_r row, registry entry. Earlier
// tags become the frozen prefix. Existing rows are untouched.
void extend_instructions(ModelState& state, const std::vector<std::string>& new_tags);

// Everything frozen except the instruction-table rows and token rows of the
// tags past the frozen prefix.
void apply_incremental_mask(ModelState& state);

struct TensorDiff {
  std::string name;
  std::size_t changed_rows = 0;
  double max_abs_change = 0.0;
};
std::vector<TensorDiff> diff_tensors(const ModelState& before, const ModelState& after);

struct UpdateResult {
  TrainResult training;
  std::vector<TensorDiff> diff;
  std::size_t store_upserts = 0;
};

// Trains only the new instruction rows on `new_pairs`, whose instructions must
// all lie past the frozen prefix; the pairs are upserted into `store`.
UpdateResult incremental_update(ModelState& state, KnowledgeStore& store,
                                const std::vector<InstructionCriterionPair>& new_pairs, const PipelineConfig& config,
                                const TrainOptions& options = {});

struct CurvePoint {
  std::string variant;  // "retrain" or "incremental"
  std::size_t step = 0;
  std::string metric;
  double value = 0.0;
};

struct ContinualResult {
  std::vector<std::vector<std::string>> subsets;
  // Training-set manifest: instructions each variant trained on per step.
  std::map<std::string, std::vector<std::vector<std::string>>> trained_on;
  std::vector<CurvePoint> curve;
};

// Splits instruction tags into `n_subsets` disjoint, near-equal subsets
// (seeded), reveals them one by one and evaluates both variants on every
// subset seen so far.
std::vector<std::vector<std::string>> partition_instructions(std::vector<std::string> tags, std::size_t n_subsets,
                                                             std::uint64_t seed);
ContinualResult continual_harness(const Corpus& train, const Corpus& test, std::size_t n_subsets,
                                  const PipelineConfig& config, std::uint64_t seed);

struct AblationRun {
  std::string variant;  // full, no_msr, no_rag, no_prompt
  EvalResult result;
};
std::vector<AblationRun> ablation_harness(const Corpus& train, const Corpus& test, const PipelineConfig& config);

nlohmann::json to_json(const ContinualResult& result);
nlohmann::json to_json(const std::vector<AblationRun>& runs);

}  // namespace critgen
