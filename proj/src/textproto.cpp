#include "critgen/textproto.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "critgen/error.hpp"
#include "critgen/text.hpp"

namespace critgen {
namespace {

constexpr std::string_view kFixed[tok::kFixedCount] = {
    "<pad>", "<unk>", "<bos>", "<eos>", "<title>", "<disease>", "<treatment>", "<ref>", "</ref>",
    "<instr>", "</instr>", "<incs>", "</incs>", "<excs>", "</excs>", "<inc>", "<exc>"};

constexpr std::string_view kReservedPrefix = "<reserved_";

bool looks_special(std::string_view t) { return t.size() >= 3 && t.front() == '<' && t.back() == '>'; }

}  // namespace

std::string instruction_surface(std::string_view tag) { return "<" + std::string(tag) + ">"; }

Vocabulary::Vocabulary(std::size_t instruction_capacity) : capacity_(instruction_capacity) {
  for (auto t : kFixed) push(std::string(t));
  for (std::size_t k = 0; k < capacity_; ++k) push(std::string(kReservedPrefix) + std::to_string(k) + ">");
}

void Vocabulary::push(std::string token) {
  const auto id = static_cast<TokenId>(tokens_.size());
  if (!index_.emplace(token, id).second) throw FormatError("duplicate vocabulary token '" + token + "'");
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, std::size_t min_frequency,
                             std::size_t instruction_capacity) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& w : text::segment(t)) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> words(counts.begin(), counts.end());
  std::stable_sort(words.begin(), words.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v(instruction_capacity);
  for (auto& [w, c] : words) {
    if (c >= std::max<std::size_t>(min_frequency, 1) && !v.contains(w)) v.push(w);
  }
  return v;
}

TokenId Vocabulary::register_instruction(const std::string& tag) {
  if (tag.empty()) throw ConfigError("empty instruction tag");
  for (char c : tag) {
    if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_')) {
      throw ConfigError("instruction tag '" + tag + "' must be lowercase [a-z0-9_]");
    }
  }
  const std::string surface = instruction_surface(tag);
  if (auto it = index_.find(surface); it != index_.end()) {
    if (category(it->second) == TokenCategory::kInstruction) return it->second;
    throw ConfigError("instruction tag '" + tag + "' collides with a vocabulary token");
  }
  if (registered_ >= capacity_) {
    throw ConfigError("instruction capacity " + std::to_string(capacity_) + " exhausted registering '" + tag + "'");
  }
  const auto id = static_cast<TokenId>(tok::kFixedCount + registered_);
  index_.erase(tokens_[static_cast<std::size_t>(id)]);
  tokens_[static_cast<std::size_t>(id)] = surface;
  index_.emplace(surface, id);
  ++registered_;
  return id;
}

std::optional<TokenId> Vocabulary::instruction_token(std::string_view tag) const {
  auto it = index_.find(instruction_surface(tag));
  if (it == index_.end() || category(it->second) != TokenCategory::kInstruction) return std::nullopt;
  return it->second;
}

std::vector<std::string> Vocabulary::instructions() const {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < registered_; ++k) {
    const auto& s = tokens_[tok::kFixedCount + k];
    out.push_back(s.substr(1, s.size() - 2));
  }
  return out;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? tok::kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenCategory Vocabulary::category(TokenId id) const {
  if (id < tok::kTitle) return TokenCategory::kControl;
  if (id < tok::kInc) return TokenCategory::kStructure;
  if (id < tok::kFixedCount) return TokenCategory::kPolarity;
  if (static_cast<std::size_t>(id) < tok::kFixedCount + registered_) return TokenCategory::kInstruction;
  if (static_cast<std::size_t>(id) < tok::kFixedCount + capacity_) return TokenCategory::kReserved;
  return TokenCategory::kWord;
}

bool Vocabulary::is_special(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it != index_.end() && category(it->second) != TokenCategory::kWord;
}

std::vector<TokenId> Vocabulary::tokenize(std::string_view raw) const {
  auto special = [this](std::string_view t) {
    return is_special(t) || t == "<statement>" || t == "</statement>" || t == "<target>" || t == "</target>";
  };
  std::vector<TokenId> ids;
  for (const auto& t : canonicalize_scheme(text::segment(raw, special))) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::detokenize(const std::vector<TokenId>& ids) const {
  std::vector<std::string> parts;
  parts.reserve(ids.size());
  for (auto i : ids) parts.push_back(token(i));
  return text::join(parts);
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::deserialize(std::string_view text_form) {
  std::vector<std::string> lines;
  std::istringstream in{std::string(text_form)};
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.size() < tok::kFixedCount) throw FormatError("vocabulary file is missing fixed specials");
  for (std::size_t i = 0; i < tok::kFixedCount; ++i) {
    if (lines[i] != kFixed[i]) throw FormatError("vocabulary line " + std::to_string(i) + " is not " + std::string(kFixed[i]));
  }
  std::size_t capacity = 0, registered = 0;
  bool seen_reserved = false;
  for (std::size_t i = tok::kFixedCount; i < lines.size() && looks_special(lines[i]); ++i) {
    if (lines[i].rfind(kReservedPrefix, 0) == 0) {
      seen_reserved = true;
    } else if (seen_reserved) {
      throw FormatError("instruction token after a reserved slot at line " + std::to_string(i));
    } else {
      ++registered;
    }
    ++capacity;
  }
  Vocabulary v(0);
  v.capacity_ = capacity;
  v.registered_ = registered;
  v.tokens_.clear();
  v.index_.clear();
  for (auto& l : lines) v.push(l);
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write vocabulary " + path.string());
  out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read vocabulary " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

std::vector<std::string> canonicalize_scheme(std::vector<std::string> tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  std::vector<std::string> open_targets;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto& t = tokens[i];
    if (t == "<statement>") {
      out.emplace_back("<instr>");
    } else if (t == "</statement>") {
      out.emplace_back("</instr>");
    } else if (t == "<target>") {
      const bool exc = i + 1 < tokens.size() && tokens[i + 1] == "<exc>";
      open_targets.emplace_back(exc ? "</excs>" : "</incs>");
      out.emplace_back(exc ? "<excs>" : "<incs>");
    } else if (t == "</target>") {
      out.push_back(open_targets.empty() ? std::string("</incs>") : open_targets.back());
      if (!open_targets.empty()) open_targets.pop_back();
    } else {
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::vector<TokenId> PromptSequence::ids() const {
  std::vector<TokenId> out(input_ids);
  out.insert(out.end(), target_ids.begin(), target_ids.end());
  return out;
}

std::vector<Segment> PromptSequence::segments() const {
  std::vector<Segment> out(input_segments);
  out.insert(out.end(), target_segments.begin(), target_segments.end());
  return out;
}

namespace {

void append(std::vector<TokenId>& dst, const std::vector<TokenId>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

TokenId polarity_token(Polarity p) { return p == Polarity::kInclusion ? tok::kInc : tok::kExc; }

std::vector<TokenId> marked(const Vocabulary& vocab, const Criterion& c) {
  std::vector<TokenId> out{polarity_token(c.polarity)};
  append(out, vocab.tokenize(c.text));
  return out;
}

std::vector<TokenId> target_block(const Vocabulary& vocab, const Criterion& c) {
  const bool inc = c.polarity == Polarity::kInclusion;
  std::vector<TokenId> out{inc ? tok::kIncs : tok::kExcs};
  append(out, marked(vocab, c));
  out.push_back(inc ? tok::kIncsEnd : tok::kExcsEnd);
  return out;
}

std::vector<TokenId> instruction_block(const Vocabulary& vocab, const std::string& tag) {
  const auto id = vocab.instruction_token(tag);
  if (!id) throw ConfigError("instruction '" + tag + "' is not registered");
  return {tok::kInstr, *id, tok::kInstrEnd};
}

}  // namespace

std::vector<TokenId> setup_tokens(const Vocabulary& vocab, const TrialSetup& setup) {
  std::vector<TokenId> out{tok::kTitle};
  append(out, vocab.tokenize(setup.title));
  out.push_back(tok::kDisease);
  append(out, vocab.tokenize(setup.disease));
  out.push_back(tok::kTreatment);
  append(out, vocab.tokenize(setup.treatment));
  return out;
}

PromptSequence assemble_prompt(const Vocabulary& vocab, const TrialSetup& setup, const Exemplar* exemplar,
                               const std::optional<std::string>& instruction, const PromptOptions& options) {
  if (!exemplar) return assemble_prompt(vocab, setup, std::vector<Exemplar>{}, instruction, options);
  return assemble_prompt(vocab, setup, std::vector<Exemplar>{*exemplar}, instruction, options);
}

PromptSequence assemble_prompt(const Vocabulary& vocab, const TrialSetup& setup, const std::vector<Exemplar>& exemplars,
                               const std::optional<std::string>& instruction, const PromptOptions& options) {
  const std::vector<TokenId> setup_ids = setup_tokens(vocab, setup);
  std::vector<TokenId> instr_ids;
  if (instruction) instr_ids = instruction_block(vocab, *instruction);

  std::vector<TokenId> body;
  for (const auto& ex : exemplars) {
    for (const auto& c : ex.chain) append(body, marked(vocab, c));
    if (ex.instruction) append(body, instruction_block(vocab, *ex.instruction));
    if (ex.target) append(body, target_block(vocab, *ex.target));
  }

  const std::size_t fixed = setup_ids.size() + instr_ids.size();
  if (options.max_input_tokens && fixed > options.max_input_tokens) {
    throw ConfigError("context overflow in segment '" + std::string(instruction ? "setup+instruction" : "setup") +
                      "': " + std::to_string(fixed) + " tokens > budget " + std::to_string(options.max_input_tokens));
  }
  bool keep_exemplar = !exemplars.empty();
  if (keep_exemplar && options.max_input_tokens) {
    const std::size_t room = options.max_input_tokens - fixed;
    if (room < 2) {
      keep_exemplar = false;
    } else if (body.size() + 2 > room) {
      body.erase(body.begin(), body.begin() + static_cast<std::ptrdiff_t>(body.size() + 2 - room));
    }
  }

  PromptSequence seq;
  const auto put = [&seq](const std::vector<TokenId>& ids, Segment s) {
    append(seq.input_ids, ids);
    seq.input_segments.insert(seq.input_segments.end(), ids.size(), s);
  };
  put(setup_ids, Segment::kSetup);
  if (options.instruction_first) put(instr_ids, Segment::kInstruction);
  if (keep_exemplar) {
    std::vector<TokenId> ex{tok::kRef};
    append(ex, body);
    ex.push_back(tok::kRefEnd);
    put(ex, Segment::kExemplar);
  }
  if (!options.instruction_first) put(instr_ids, Segment::kInstruction);
  return seq;
}

void assemble_target(const Vocabulary& vocab, const std::vector<Criterion>& rationale, const Criterion& target,
                     bool msr, PromptSequence& seq) {
  seq.target_ids.clear();
  seq.target_segments.clear();
  if (msr) {
    for (const auto& c : rationale) append(seq.target_ids, marked(vocab, c));
  }
  seq.target_segments.assign(seq.target_ids.size(), Segment::kRationale);
  auto block = target_block(vocab, target);
  block.push_back(tok::kEos);
  append(seq.target_ids, block);
  seq.target_segments.insert(seq.target_segments.end(), block.size(), Segment::kTarget);
}

ParsedOutput parse_output(const Vocabulary& vocab, const std::vector<TokenId>& ids) {
  ParsedOutput out;
  std::vector<TokenId> words;
  std::optional<Polarity> current;  // open rationale criterion
  std::optional<Polarity> block;    // open target block
  std::optional<Polarity> block_marker;
  const auto flush_rationale = [&] {
    if (current && !words.empty()) out.rationale.push_back({vocab.detokenize(words), *current, std::nullopt, {}});
    words.clear();
    current.reset();
  };
  const auto finish_block = [&] {
    out.target = Criterion{vocab.detokenize(words), block_marker.value_or(*block), std::nullopt, {}};
    words.clear();
  };
  for (TokenId id : ids) {
    if (id == tok::kEos) break;
    if (block) {
      if (id == tok::kIncsEnd || id == tok::kExcsEnd) {
        finish_block();
        return out;
      }
      if ((id == tok::kInc || id == tok::kExc) && words.empty() && !block_marker) {
        block_marker = id == tok::kInc ? Polarity::kInclusion : Polarity::kExclusion;
      } else if (vocab.category(id) == TokenCategory::kWord || id == tok::kUnk) {
        words.push_back(id);
      }
      continue;
    }
    if (id == tok::kInc || id == tok::kExc) {
      flush_rationale();
      current = id == tok::kInc ? Polarity::kInclusion : Polarity::kExclusion;
    } else if (id == tok::kIncs || id == tok::kExcs) {
      flush_rationale();
      block = id == tok::kIncs ? Polarity::kInclusion : Polarity::kExclusion;
    } else if (vocab.category(id) == TokenCategory::kWord || id == tok::kUnk) {
      if (current) words.push_back(id);
    }
  }
  if (block) {
    finish_block();
    out.unterminated = true;
  } else {
    flush_rationale();
  }
  return out;
}

}  // namespace critgen
