#pragma once

// Turns corpus samples into model sequences: pretraining samples carry a
// same-trial exemplar, labeled pairs a retrieved one.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "critgen/corpus.hpp"
#include "critgen/embedstore.hpp"
#include "critgen/model.hpp"
#include "critgen/textproto.hpp"

namespace critgen {

struct SequenceOptions {
  bool msr = true;           // supervise the rationale chain before the target
  bool use_exemplar = true;  // false: no <ref> span anywhere
  bool use_prompt = true;    // attach the neural prompt (labeled pairs only)
  bool instruction_first = false;
  std::size_t retrieval_k = 1;
};

// Retrieves up to k exemplars for (setup, instruction), never from `trial_id`.
// Nearest exemplar comes last, next to the instruction.
std::vector<Exemplar> retrieve_exemplars(const KnowledgeStore& store, const std::vector<float>& query,
                                         const std::string& trial_id, const std::string& instruction, std::size_t k);

// Setup-embedding cache keyed by trial id.
class SetupEncoder {
 public:
  explicit SetupEncoder(const ModelState& model) : model_(&model) {}
  const std::vector<float>& encode(const std::string& trial_id, const TrialSetup& setup);

 private:
  const ModelState* model_;
  std::map<std::string, std::vector<float>> cache_;
};

// Drops leading rationale criteria until the sequence fits the window; the
// number dropped is added to *trimmed.
PromptSequence pretrain_sequence(const ModelState& model, const PretrainSample& sample, const SequenceOptions& options,
                                 std::size_t* trimmed = nullptr);

PromptSequence pair_sequence(const ModelState& model, const InstructionCriterionPair& pair,
                             const std::vector<Exemplar>& exemplars, const SequenceOptions& options,
                             std::size_t* trimmed = nullptr);

std::vector<PromptSequence> pretrain_sequences(const ModelState& model, const std::vector<PretrainSample>& samples,
                                               const SequenceOptions& options);

// Exemplars come from `store` (when given and options.use_exemplar).
std::vector<PromptSequence> pair_sequences(const ModelState& model, const std::vector<InstructionCriterionPair>& pairs,
                                           const KnowledgeStore* store, const SequenceOptions& options);

}  // namespace critgen
