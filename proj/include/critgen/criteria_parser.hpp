#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "critgen/trial.hpp"

namespace critgen {

enum class ValueType { kNumeric, kOrdinal, kCategorical, kBoolean };

std::string_view to_string(ValueType t);

struct AttributeSpec {
  std::string tag;
  ValueType type = ValueType::kNumeric;
  std::string unit;                   // canonical unit, empty when unitless
  std::vector<std::string> synonyms;  // lowercase surface phrases
  std::vector<std::string> labels;    // canonical labels, in ordinal order
  std::vector<std::vector<std::string>> label_aliases;  // per label, single-token spellings
};

struct UnitSpec {
  std::string canonical;
  std::vector<std::string> aliases;
};

// Attribute tag -> synonyms / value type / unit / labels. The text form is an
// INI-like file with one `[tag]` section per attribute and `[unit <name>]`
// sections for unit spellings; `default_schema()` parses the built-in copy.
class AttributeSchema {
 public:
  static const AttributeSchema& default_schema();
  static AttributeSchema parse(std::string_view text);
  static AttributeSchema load(const std::filesystem::path& path);

  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  const std::vector<AttributeSpec>& attributes() const { return attributes_; }
  const std::vector<UnitSpec>& units() const { return units_; }
  const AttributeSpec* find(std::string_view tag) const;
  std::vector<std::string> tags() const;

 private:
  std::vector<AttributeSpec> attributes_;
  std::vector<UnitSpec> units_;
};

// Rule-based relation extractor: synonym match -> comparator cue -> value and
// unit normalization. Ordinal open intervals expand against the label list
// ("nyha class is above ii" -> nyha in_set {III, IV}). Unmatched text yields
// an empty set.
class CriteriaParser {
 public:
  explicit CriteriaParser(AttributeSchema schema = AttributeSchema::default_schema());

  RelationSet parse(std::string_view text) const;
  const AttributeSchema& schema() const { return schema_; }

 private:
  struct Phrase {
    std::vector<std::string> tokens;
    std::size_t target;  // attribute index or unit index
  };
  struct Mention {
    std::size_t attribute;
    std::size_t begin;
    std::size_t end;
  };

  std::size_t match_unit(const std::vector<std::string>& tokens, std::size_t pos,
                         std::size_t* unit) const;
  void parse_numeric(const AttributeSpec& spec, const std::vector<std::string>& tokens,
                     std::size_t pre_begin, const Mention& group, std::size_t window_end,
                     RelationSet& out) const;
  void parse_ordinal(const AttributeSpec& spec, const std::vector<std::string>& tokens,
                     const Mention& group, std::size_t window_end, RelationSet& out) const;
  void parse_categorical(std::size_t attr, const std::vector<std::string>& tokens,
                         const Mention& group, std::size_t window_end, RelationSet& out) const;
  int label_index(std::size_t attr, const std::string& token) const;

  AttributeSchema schema_;
  std::vector<Phrase> synonyms_;      // longest first
  std::vector<Phrase> unit_aliases_;  // longest first
};

// Union of per-criterion parses, deduplicated.
RelationSet relation_set(const CriteriaParser& parser, const std::vector<Criterion>& criteria);

struct SetComparison {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  double precision() const;
  double recall() const;
  double f1() const;
  double jaccard() const;
};

SetComparison compare_sets(const RelationSet& pred, const RelationSet& gold);

}  // namespace critgen
