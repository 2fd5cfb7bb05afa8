#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace critgen {

enum class Comparator { kLess, kLessEqual, kGreater, kGreaterEqual, kEqual, kInRange, kInSet, kBoolean };

std::string_view to_string(Comparator c);
Comparator comparator_from_string(std::string_view s);

// Normalized (attribute, comparator, values, unit) tuple. Numeric relations
// use `numbers`; ordinal and categorical ones use `labels`. An empty unit
// means "none".
struct Relation {
  std::string attribute;
  Comparator comparator = Comparator::kEqual;
  std::vector<double> numbers;
  std::vector<std::string> labels;
  std::string unit;

  bool operator==(const Relation&) const = default;
  bool operator<(const Relation& o) const;
};

using RelationSet = std::set<Relation>;

std::string to_string(const Relation& r);

enum class Polarity { kInclusion, kExclusion };

std::string_view to_string(Polarity p);
Polarity polarity_from_string(std::string_view s);

struct Criterion {
  std::string text;
  Polarity polarity = Polarity::kInclusion;
  std::optional<std::string> attribute;
  // Generator-recorded relations; empty for ingested trials.
  std::vector<Relation> gold;

  bool operator==(const Criterion&) const = default;
};

struct TrialSetup {
  std::string title;
  std::string disease;
  std::string treatment;

  bool operator==(const TrialSetup&) const = default;
};

struct TrialDocument {
  std::string trial_id;
  std::string title;
  std::string disease;
  std::string treatment;
  std::vector<Criterion> inclusion;
  std::vector<Criterion> exclusion;

  bool operator==(const TrialDocument&) const = default;

  TrialSetup setup() const { return {title, disease, treatment}; }
  std::size_t criteria_count() const { return inclusion.size() + exclusion.size(); }
  // Inclusion criteria first, then exclusion, each in document order.
  std::vector<Criterion> all_criteria() const;
  RelationSet gold_relations() const;
  RelationSet gold_relations(Polarity p) const;
  bool has_gold() const;
};

}  // namespace critgen
