#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "critgen/trial.hpp"

namespace critgen {

using TokenId = std::int32_t;

namespace tok {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kTitle = 4;
inline constexpr TokenId kDisease = 5;
inline constexpr TokenId kTreatment = 6;
inline constexpr TokenId kRef = 7;
inline constexpr TokenId kRefEnd = 8;
inline constexpr TokenId kInstr = 9;
inline constexpr TokenId kInstrEnd = 10;
inline constexpr TokenId kIncs = 11;
inline constexpr TokenId kIncsEnd = 12;
inline constexpr TokenId kExcs = 13;
inline constexpr TokenId kExcsEnd = 14;
inline constexpr TokenId kInc = 15;
inline constexpr TokenId kExc = 16;
inline constexpr TokenId kFixedCount = 17;
}  // namespace tok

enum class TokenCategory { kControl, kStructure, kPolarity, kInstruction, kReserved, kWord };

// Word-level vocabulary. Layout: 17 fixed specials, then `capacity` slots for
// instruction tokens (`<reserved_k>` until a tag is registered), then words
// sorted by descending count. Registering an instruction never moves an id.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary(32) {}
  explicit Vocabulary(std::size_t instruction_capacity);

  // Counts words over `texts` and keeps those seen at least `min_frequency` times.
  static Vocabulary build(const std::vector<std::string>& texts, std::size_t min_frequency = 1,
                          std::size_t instruction_capacity = 32);

  TokenId register_instruction(const std::string& tag);
  std::optional<TokenId> instruction_token(std::string_view tag) const;
  std::vector<std::string> instructions() const;

  TokenId id(std::string_view token) const;  // <unk> when absent
  bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }
  const std::string& token(TokenId id) const;
  TokenCategory category(TokenId id) const;
  bool is_special(std::string_view token) const;

  std::size_t size() const { return tokens_.size(); }
  std::size_t instruction_capacity() const { return capacity_; }
  TokenId first_word_id() const { return static_cast<TokenId>(tok::kFixedCount + capacity_); }

  std::vector<TokenId> tokenize(std::string_view text) const;
  std::string detokenize(const std::vector<TokenId>& ids) const;

  // One token per line; line number is the id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  std::string serialize() const;
  static Vocabulary deserialize(std::string_view text);

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_ && capacity_ == o.capacity_; }

 private:
  void push(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t capacity_ = 0;
  std::size_t registered_ = 0;
};

// Surface spelling for an instruction tag ("bmi" -> "<bmi>").
std::string instruction_surface(std::string_view tag);

// Rewrites the alternate block spelling onto the canonical one:
// <statement>..</statement> -> <instr>..</instr>, and <target> <inc>..</target>
// -> <incs> <inc>..</incs> (<excs> when the marker is <exc>).
std::vector<std::string> canonicalize_scheme(std::vector<std::string> tokens);

enum class Segment : std::uint8_t { kSetup, kExemplar, kInstruction, kRationale, kTarget };

struct Exemplar {
  std::vector<Criterion> chain;
  std::optional<std::string> instruction;
  std::optional<Criterion> target;
};

struct PromptSequence {
  std::vector<TokenId> input_ids;
  std::vector<TokenId> target_ids;
  std::vector<Segment> input_segments;
  std::vector<Segment> target_segments;
  int instruction_index = -1;  // into the model's instruction registry; -1 = none

  std::size_t size() const { return input_ids.size() + target_ids.size(); }
  std::vector<TokenId> ids() const;
  std::vector<Segment> segments() const;
};

struct PromptOptions {
  // Token budget for the input side; the exemplar is trimmed from its front
  // to fit. 0 = unlimited.
  std::size_t max_input_tokens = 0;
  // Put the instruction block before the exemplar instead of after it.
  bool instruction_first = false;
};

// Input side: setup, optional exemplar, optional instruction. Throws
// ConfigError naming the tag when the instruction is not registered and
// naming the segment when setup + instruction alone exceed the budget.
PromptSequence assemble_prompt(const Vocabulary& vocab, const TrialSetup& setup, const Exemplar* exemplar,
                               const std::optional<std::string>& instruction, const PromptOptions& options = {});
// Several exemplars share one <ref> span, in the given order.
PromptSequence assemble_prompt(const Vocabulary& vocab, const TrialSetup& setup, const std::vector<Exemplar>& exemplars,
                               const std::optional<std::string>& instruction, const PromptOptions& options = {});

// Target side: chain of polarity-marked criteria (when msr), then the
// wrapped target, then <eos>.
void assemble_target(const Vocabulary& vocab, const std::vector<Criterion>& rationale, const Criterion& target,
                     bool msr, PromptSequence& seq);

// Setup tokens only, used as the encoder input for retrieval keys.
std::vector<TokenId> setup_tokens(const Vocabulary& vocab, const TrialSetup& setup);

struct ParsedOutput {
  std::vector<Criterion> rationale;
  std::optional<Criterion> target;
  bool unterminated = false;
};

// Inverse of assemble_target; reads up to the first <eos>.
ParsedOutput parse_output(const Vocabulary& vocab, const std::vector<TokenId>& ids);

}  // namespace critgen
