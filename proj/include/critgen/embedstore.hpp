#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "critgen/criteria_parser.hpp"
#include "critgen/model.hpp"
#include "critgen/trial.hpp"

namespace critgen {

struct TrialEmbedding {
  std::vector<float> values;  // unit L2 norm
  std::string trial_id;
  std::string encoder_version;
};

// Mean of the final-layer states over the tokens, L2-normalized. Throws on
// an empty token list.
std::vector<float> encode_tokens(const ModelState& model, const std::vector<TokenId>& ids);
TrialEmbedding encode_setup(const ModelState& model, const TrialSetup& setup, std::string trial_id = {});

struct StoreValue {
  std::vector<Criterion> chain;
  std::string instruction;
  Criterion target;

  bool operator==(const StoreValue&) const = default;
};

struct StoreEntry {
  std::string trial_id;
  TrialSetup setup;  // kept so keys can be recomputed after backbone training
  std::vector<float> key;
  StoreValue value;
  std::uint64_t inserted = 0;  // insertion counter, the retrieval tie-breaker

  bool operator==(const StoreEntry&) const = default;
};

struct RetrievalHit {
  const StoreEntry* entry;
  double similarity;
};

// Exemplar store keyed by setup embeddings, searched by exact cosine scan.
// Const members may run concurrently; mutation needs exclusive access.
class KnowledgeStore {
 public:
  KnowledgeStore() = default;
  KnowledgeStore(std::size_t dim, std::string encoder_version);

  // Replaces an entry with the same (trial_id, target) in place, keeping its
  // insertion counter; otherwise appends with the next counter.
  void upsert(StoreEntry entry);
  std::size_t remove(const std::string& trial_id);

  // Descending cosine; ties by ascending insertion counter. Entries of
  // `exclude_trial_id` are skipped, and when `instruction` is set only
  // entries for that instruction are considered.
  std::vector<RetrievalHit> retrieve(const std::vector<float>& query, std::size_t k,
                                     const std::optional<std::string>& exclude_trial_id = std::nullopt,
                                     const std::optional<std::string>& instruction = std::nullopt) const;

  // Recomputes every key with `model` and adopts its encoder version.
  void rekey(const ModelState& model);

  void save(const std::filesystem::path& path) const;
  // Throws FormatError when `expected_version` is given and differs.
  static KnowledgeStore load(const std::filesystem::path& path,
                             const std::optional<std::string>& expected_version = std::nullopt);

  const std::vector<StoreEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t dim() const { return dim_; }
  const std::string& encoder_version() const { return encoder_version_; }
  bool operator==(const KnowledgeStore&) const = default;

 private:
  std::size_t dim_ = 0;
  std::string encoder_version_;
  std::uint64_t next_counter_ = 0;
  std::vector<StoreEntry> entries_;
};

struct InstructionCriterionPair;

// One entry per labeled pair; the key is the trial's setup embedding.
KnowledgeStore build_store(const std::vector<InstructionCriterionPair>& pairs, const ModelState& model);

}  // namespace critgen
