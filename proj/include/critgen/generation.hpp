#pragma once

// Decoding: repeated top-k sampling, candidate clustering and minimum-
// perplexity selection, plus the greedy trial-level mode.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "critgen/embedstore.hpp"
#include "critgen/model.hpp"
#include "critgen/prompting.hpp"
#include "critgen/rng.hpp"

namespace critgen {

struct GenerationConfig {
  std::size_t top_k = 50;
  std::size_t num_candidates = 20;
  std::size_t num_clusters = 5;
  std::size_t max_new_tokens = 64;
  double temperature = 1.0;
  std::uint64_t seed = 1;

  void validate(std::size_t vocab_size) const;
};

struct Candidate {
  std::vector<TokenId> ids;  // generated tokens, <eos> included when reached
  std::string text;          // parsed target text ("" when none)
  std::vector<double> nll;   // per sampled token; forced tokens are skipped
  double ppl = 0.0;          // +inf for an empty generation
  std::vector<float> embedding;
  int cluster = -1;
};

// Top-k restriction of softmax(logits / temperature) over the allowed tokens,
// renormalized; sorted by descending probability, ties by lower id.
std::vector<std::pair<TokenId, double>> top_k_distribution(const Eigen::VectorXf& logits, std::size_t k,
                                                           double temperature,
                                                           const std::vector<bool>* banned = nullptr);
TokenId sample_step(const Eigen::VectorXf& logits, std::size_t k, double temperature, Rng& rng,
                    const std::vector<bool>* banned = nullptr);

// Tokens that may only appear in prompts (setup and reference markers,
// instruction tags, reserved slots, pad/unk/bos). Never generated.
std::vector<bool> prompt_only_tokens(const Vocabulary& vocab);

// Seeding of the target block: when the model opens a block, the block kind,
// the polarity marker and these words are forced instead of sampled.
struct ForcedPrefix {
  Polarity polarity = Polarity::kInclusion;
  std::vector<TokenId> words;
};

// Q rollouts from `prompt.input_ids`, candidate q drawing from its own stream
// derived from (seed, q).
std::vector<Candidate> sample_candidates(const ModelState& model, const PromptSequence& prompt,
                                         const GenerationConfig& config,
                                         const std::optional<ForcedPrefix>& prefix = std::nullopt);

struct Clustering {
  std::vector<int> assignment;
  std::size_t k = 0;  // after lowering to the number of distinct points
  double initial_wcss = 0.0;
  double final_wcss = 0.0;
};

// k-means++ seeding then Lloyd (<= 100 iterations or centroid shift < 1e-6).
Clustering kmeans(const std::vector<std::vector<float>>& points, std::size_t k, std::uint64_t seed);
// Sets Candidate::cluster.
Clustering cluster_candidates(std::vector<Candidate>& candidates, std::size_t k, std::uint64_t seed);

// Per cluster in index order, the minimum-ppl candidate (ties by lower index).
// Clusters holding only empty generations are dropped.
std::vector<std::size_t> select_candidates(const std::vector<Candidate>& candidates);

struct CriteriaRequest {
  std::string trial_id;
  TrialSetup setup;
  std::string instruction;
  // Gold criterion whose first words seed the target block (criteria level).
  std::optional<Criterion> gold;
  std::size_t prefix_tokens = 3;
};

struct CriteriaResult {
  std::string trial_id;
  std::string instruction;
  std::vector<Candidate> candidates;
  std::vector<std::size_t> selected;
  std::vector<Criterion> outputs;  // one per selected candidate
  bool used_exemplar = false;

  // Lowest-ppl selected output, the one scored in evaluation.
  std::optional<Criterion> best() const;
};

CriteriaResult generate_criteria(const ModelState& model, const KnowledgeStore* store, const CriteriaRequest& request,
                                 const GenerationConfig& config, const SequenceOptions& options = {});

struct TrialResult {
  std::string trial_id;
  std::vector<TokenId> ids;
  std::vector<Criterion> inclusion;
  std::vector<Criterion> exclusion;
};

// Greedy decoding of the full criteria sequence for one trial.
TrialResult generate_trial(const ModelState& model, const KnowledgeStore* store, const std::string& trial_id,
                           const TrialSetup& setup, std::size_t max_new_tokens, const SequenceOptions& options = {});

nlohmann::json to_json(const CriteriaResult& result);
nlohmann::json to_json(const TrialResult& result);

}  // namespace critgen
