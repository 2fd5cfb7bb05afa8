#include "critgen/prompting.hpp"

#include <spdlog/spdlog.h>

#include "critgen/error.hpp"

namespace critgen {

std::vector<Exemplar> retrieve_exemplars(const KnowledgeStore& store, const std::vector<float>& query,
                                         const std::string& trial_id, const std::string& instruction, std::size_t k) {
  std::vector<Exemplar> out;
  if (store.size() == 0) return out;
  const auto hits = store.retrieve(query, k, trial_id, instruction);
  for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
    const auto& v = it->entry->value;
    out.push_back({v.chain, v.instruction, v.target});
  }
  return out;
}

const std::vector<float>& SetupEncoder::encode(const std::string& trial_id, const TrialSetup& setup) {
  auto it = cache_.find(trial_id);
  if (it == cache_.end()) it = cache_.emplace(trial_id, encode_setup(*model_, setup).values).first;
  return it->second;
}

namespace {

// Fits target + prompt into the window by trimming the chain first, then the
// exemplar (inside assemble_prompt).
PromptSequence fit(const ModelState& model, const TrialSetup& setup, const std::vector<Exemplar>& exemplars,
                   const std::optional<std::string>& instruction, std::vector<Criterion> chain, const Criterion& target,
                   const SequenceOptions& options, int instruction_index, std::size_t* trimmed) {
  const std::size_t window = model.config.context_window;
  const std::size_t prompt_rows = instruction_index >= 0 ? model.config.prompt_len : 0;
  PromptOptions po;
  po.instruction_first = options.instruction_first;
  const auto bare = assemble_prompt(model.vocab, setup, nullptr, instruction, po);
  const std::size_t fixed = prompt_rows + bare.input_ids.size();
  PromptSequence tail;
  for (;;) {
    assemble_target(model.vocab, chain, target, options.msr, tail);
    if (fixed + tail.target_ids.size() <= window) break;
    if (!options.msr || chain.empty()) {
      throw ConfigError("target segment of " + std::to_string(tail.target_ids.size()) +
                        " tokens does not fit the context window");
    }
    chain.erase(chain.begin());
    if (trimmed) ++*trimmed;
  }
  po.max_input_tokens = window - prompt_rows - tail.target_ids.size();
  PromptSequence seq = assemble_prompt(model.vocab, setup, exemplars, instruction, po);
  seq.target_ids = std::move(tail.target_ids);
  seq.target_segments = std::move(tail.target_segments);
  seq.instruction_index = instruction_index;
  return seq;
}

}  // namespace

PromptSequence pretrain_sequence(const ModelState& model, const PretrainSample& sample, const SequenceOptions& options,
                                 std::size_t* trimmed) {
  std::vector<Exemplar> ex;
  if (options.use_exemplar && !sample.exemplar.empty()) ex.push_back({sample.exemplar, std::nullopt, std::nullopt});
  return fit(model, sample.setup, ex, std::nullopt, sample.rationale, sample.target, options, -1, trimmed);
}

PromptSequence pair_sequence(const ModelState& model, const InstructionCriterionPair& pair,
                             const std::vector<Exemplar>& exemplars, const SequenceOptions& options, std::size_t* trimmed) {
  const int index = model.registry.index_of(pair.instruction);
  if (index < 0) throw ConfigError("instruction '" + pair.instruction + "' is not registered");
  return fit(model, pair.setup, options.use_exemplar ? exemplars : std::vector<Exemplar>{}, pair.instruction,
             pair.rationale_chain, pair.target, options, options.use_prompt ? index : -1, trimmed);
}

std::vector<PromptSequence> pretrain_sequences(const ModelState& model, const std::vector<PretrainSample>& samples,
                                               const SequenceOptions& options) {
  std::vector<PromptSequence> out;
  out.reserve(samples.size());
  std::size_t trimmed = 0;
  for (const auto& s : samples) out.push_back(pretrain_sequence(model, s, options, &trimmed));
  if (trimmed) spdlog::info("trimmed {} leading rationale criteria to fit the context window", trimmed);
  return out;
}

std::vector<PromptSequence> pair_sequences(const ModelState& model, const std::vector<InstructionCriterionPair>& pairs,
                                           const KnowledgeStore* store, const SequenceOptions& options) {
  std::vector<PromptSequence> out;
  out.reserve(pairs.size());
  if (store && options.use_exemplar && store->size() && store->encoder_version() != backbone_digest(model)) {
    throw FormatError("store keys are stale for this model (encoder " + store->encoder_version() + "); rekey the store");
  }
  SetupEncoder encoder(model);
  std::size_t trimmed = 0;
  for (const auto& p : pairs) {
    std::vector<Exemplar> ex;
    if (store && options.use_exemplar) {
      ex = retrieve_exemplars(*store, encoder.encode(p.trial_id, p.setup), p.trial_id, p.instruction,
                              options.retrieval_k);
    }
    out.push_back(pair_sequence(model, p, ex, options, &trimmed));
  }
  if (trimmed) spdlog::info("trimmed {} leading rationale criteria to fit the context window", trimmed);
  return out;
}

}  // namespace critgen
