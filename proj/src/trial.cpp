#include "critgen/trial.hpp"

#include <tuple>

#include "critgen/error.hpp"
#include "critgen/text.hpp"

namespace critgen {

namespace {
constexpr std::string_view kComparatorNames[] = {"<", "<=", ">", ">=", "=", "in_range", "in_set", "boolean"};
}

std::string_view to_string(Comparator c) { return kComparatorNames[static_cast<int>(c)]; }

Comparator comparator_from_string(std::string_view s) {
  for (int i = 0; i < 8; ++i) {
    if (kComparatorNames[i] == s) return static_cast<Comparator>(i);
  }
  if (s == "\xe2\x89\xa4") return Comparator::kLessEqual;
  if (s == "\xe2\x89\xa5") return Comparator::kGreaterEqual;
  throw FormatError("unknown comparator '" + std::string(s) + "'");
}

bool Relation::operator<(const Relation& o) const {
  return std::tie(attribute, comparator, numbers, labels, unit) <
         std::tie(o.attribute, o.comparator, o.numbers, o.labels, o.unit);
}

std::string to_string(const Relation& r) {
  std::string out = "(" + r.attribute + ", " + std::string(to_string(r.comparator));
  if (!r.numbers.empty()) {
    out += ", ";
    if (r.numbers.size() > 1) out += "[";
    for (std::size_t i = 0; i < r.numbers.size(); ++i) {
      if (i) out += ", ";
      out += text::format_number(r.numbers[i]);
    }
    if (r.numbers.size() > 1) out += "]";
  }
  if (!r.labels.empty()) {
    out += ", {" + text::join(r.labels, ", ") + "}";
  }
  out += ", " + (r.unit.empty() ? std::string("none") : r.unit) + ")";
  return out;
}

std::string_view to_string(Polarity p) {
  return p == Polarity::kInclusion ? "inclusion" : "exclusion";
}

Polarity polarity_from_string(std::string_view s) {
  if (s == "inclusion" || s == "inc") return Polarity::kInclusion;
  if (s == "exclusion" || s == "exc") return Polarity::kExclusion;
  throw FormatError("unknown polarity '" + std::string(s) + "'");
}

std::vector<Criterion> TrialDocument::all_criteria() const {
  std::vector<Criterion> out(inclusion);
  out.insert(out.end(), exclusion.begin(), exclusion.end());
  return out;
}

RelationSet TrialDocument::gold_relations() const {
  RelationSet out = gold_relations(Polarity::kInclusion);
  out.merge(gold_relations(Polarity::kExclusion));
  return out;
}

RelationSet TrialDocument::gold_relations(Polarity p) const {
  RelationSet out;
  for (const auto& c : p == Polarity::kInclusion ? inclusion : exclusion) {
    out.insert(c.gold.begin(), c.gold.end());
  }
  return out;
}

bool TrialDocument::has_gold() const {
  for (const auto& c : inclusion) {
    if (!c.gold.empty()) return true;
  }
  for (const auto& c : exclusion) {
    if (!c.gold.empty()) return true;
  }
  return false;
}

}  // namespace critgen
