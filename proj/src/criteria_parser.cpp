#include "critgen/criteria_parser.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "critgen/error.hpp"
#include "critgen/text.hpp"

namespace critgen {
namespace {

constexpr std::string_view kDefaultSchema = R"(# critgen attribute schema
# [tag] sections: type = numeric|ordinal|categorical|boolean, unit, synonyms, labels
# labels: `Canonical: alias alias | Canonical: alias ...`

[age]
type = numeric
unit = years
synonyms = age; aged; ages

[bmi]
type = numeric
unit = kg/m2
synonyms = bmi; body mass index

[gender]
type = categorical
synonyms = gender; sex; male; female; males; females
labels = female: female females women woman | male: male males men man

[hba1c]
type = numeric
unit = %
synonyms = hba1c; a1c; hemoglobin a1c; glycated hemoglobin; glycosylated hemoglobin

[nyha]
type = ordinal
synonyms = nyha; new york heart association
labels = I: i | II: ii | III: iii | IV: iv

[sbp]
type = numeric
unit = mmHg
synonyms = sbp; systolic blood pressure; systolic pressure

[qtc]
type = numeric
unit = ms
synonyms = qtc; qtcf; qtc interval; corrected qt interval

[egfr]
type = numeric
unit = mL/min/1.73m2
synonyms = egfr; estimated glomerular filtration rate

[life_expectancy]
type = numeric
unit = weeks
synonyms = life expectancy; expected survival

[pregnancy]
type = boolean
synonyms = pregnant; pregnancy; breastfeeding; lactating; lactation; nursing

[ecog]
type = ordinal
synonyms = ecog; eastern cooperative oncology group
labels = 0: 0 | 1: 1 | 2: 2 | 3: 3 | 4: 4

[hemoglobin]
type = numeric
unit = g/dL
synonyms = hemoglobin; haemoglobin; hgb

[unit kg/m2]
aliases = kg/m2; kg/m 2; kg/m^2; kg per m2

[unit years]
aliases = years; year; yrs; yr; years old

[unit mmHg]
aliases = mmhg; mm hg

[unit ms]
aliases = ms; msec; milliseconds

[unit %]
aliases = %

[unit weeks]
aliases = weeks; week; wks

[unit g/dL]
aliases = g/dl; g / dl; gm/dl

[unit mL/min/1.73m2]
aliases = ml/min/1.73m2; ml/min/1.73 m2; ml/min
)";

enum class Cue { kNone, kRange, kGreater, kGreaterEqual, kLess, kLessEqual };

struct CuePhrase {
  std::vector<std::string> tokens;
  Cue cue;
};

const std::vector<CuePhrase>& cue_phrases() {
  static const std::vector<CuePhrase> phrases = [] {
    const std::vector<std::pair<std::string_view, Cue>> raw = {
        {"between", Cue::kRange},
        {"within the range of", Cue::kRange},
        {"in the range of", Cue::kRange},
        {"range of", Cue::kRange},
        {"from", Cue::kRange},
        {"greater than or equal to", Cue::kGreaterEqual},
        {"more than or equal to", Cue::kGreaterEqual},
        {"at least", Cue::kGreaterEqual},
        {"no less than", Cue::kGreaterEqual},
        {"not less than", Cue::kGreaterEqual},
        {"minimum of", Cue::kGreaterEqual},
        {">=", Cue::kGreaterEqual},
        {"above", Cue::kGreater},
        {"over", Cue::kGreater},
        {"more than", Cue::kGreater},
        {"greater than", Cue::kGreater},
        {"higher than", Cue::kGreater},
        {"exceeding", Cue::kGreater},
        {">", Cue::kGreater},
        {"less than or equal to", Cue::kLessEqual},
        {"at most", Cue::kLessEqual},
        {"no more than", Cue::kLessEqual},
        {"not more than", Cue::kLessEqual},
        {"maximum of", Cue::kLessEqual},
        {"up to", Cue::kLessEqual},
        {"<=", Cue::kLessEqual},
        {"below", Cue::kLess},
        {"under", Cue::kLess},
        {"less than", Cue::kLess},
        {"lower than", Cue::kLess},
        {"<", Cue::kLess},
    };
    std::vector<CuePhrase> out;
    for (const auto& [s, c] : raw) out.push_back({text::segment(s), c});
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      return a.tokens.size() > b.tokens.size();
    });
    return out;
  }();
  return phrases;
}

bool matches_at(const std::vector<std::string>& tokens, std::size_t pos,
                const std::vector<std::string>& phrase) {
  if (phrase.empty() || pos + phrase.size() > tokens.size()) return false;
  return std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<long>(pos));
}

// Last cue phrase fully inside [begin, end).
Cue find_cue(const std::vector<std::string>& tokens, std::size_t begin, std::size_t end) {
  Cue found = Cue::kNone;
  std::size_t i = begin;
  while (i < end) {
    bool hit = false;
    for (const auto& p : cue_phrases()) {
      if (i + p.tokens.size() <= end && matches_at(tokens, i, p.tokens)) {
        found = p.cue;
        i += p.tokens.size();
        hit = true;
        break;
      }
    }
    if (!hit) ++i;
  }
  return found;
}

// "or older", "and above", ... directly after a value.
Cue postfix_cue(const std::vector<std::string>& tokens, std::size_t pos, std::size_t end) {
  if (pos + 1 >= end) {
    if (pos < end && tokens[pos] == "+") return Cue::kGreaterEqual;
    return Cue::kNone;
  }
  if (tokens[pos] == "+") return Cue::kGreaterEqual;
  if (tokens[pos] != "or" && tokens[pos] != "and") return Cue::kNone;
  const std::string& w = tokens[pos + 1];
  if (w == "older" || w == "more" || w == "greater" || w == "above" || w == "higher" ||
      w == "over") {
    return Cue::kGreaterEqual;
  }
  if (w == "younger" || w == "less" || w == "below" || w == "lower" || w == "under" ||
      w == "fewer") {
    return Cue::kLessEqual;
  }
  return Cue::kNone;
}

Comparator to_comparator(Cue c) {
  switch (c) {
    case Cue::kGreater: return Comparator::kGreater;
    case Cue::kGreaterEqual: return Comparator::kGreaterEqual;
    case Cue::kLess: return Comparator::kLess;
    case Cue::kLessEqual: return Comparator::kLessEqual;
    default: return Comparator::kEqual;
  }
}

bool is_merge_gap(const std::string& t) {
  return t == "(" || t == ")" || t == "," || t == "/" || t == "or" || t == "and" || t == "-";
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = s.find(sep, start);
    const auto piece = trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (!piece.empty()) out.push_back(piece);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

ValueType value_type_from_string(std::string_view s) {
  if (s == "numeric") return ValueType::kNumeric;
  if (s == "ordinal") return ValueType::kOrdinal;
  if (s == "categorical") return ValueType::kCategorical;
  if (s == "boolean") return ValueType::kBoolean;
  throw FormatError("schema: unknown value type '" + std::string(s) + "'");
}

}  // namespace

std::string_view to_string(ValueType t) {
  switch (t) {
    case ValueType::kNumeric: return "numeric";
    case ValueType::kOrdinal: return "ordinal";
    case ValueType::kCategorical: return "categorical";
    case ValueType::kBoolean: return "boolean";
  }
  return "numeric";
}

const AttributeSchema& AttributeSchema::default_schema() {
  static const AttributeSchema schema = parse(kDefaultSchema);
  return schema;
}

AttributeSchema AttributeSchema::parse(std::string_view text) {
  AttributeSchema schema;
  AttributeSpec* attr = nullptr;
  UnitSpec* unit = nullptr;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw FormatError("schema line " + std::to_string(line_no) + ": bad section");
      const std::string name = trim(std::string_view(t).substr(1, t.size() - 2));
      if (name.rfind("unit ", 0) == 0) {
        schema.units_.push_back({trim(std::string_view(name).substr(5)), {}});
        unit = &schema.units_.back();
        attr = nullptr;
      } else {
        if (schema.find(name)) throw FormatError("schema: duplicate attribute '" + name + "'");
        schema.attributes_.push_back({});
        attr = &schema.attributes_.back();
        attr->tag = name;
        unit = nullptr;
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw FormatError("schema line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (unit) {
      if (key != "aliases") throw FormatError("schema: unknown unit key '" + key + "'");
      for (auto& a : split(value, ';')) unit->aliases.push_back(text::normalize(a));
    } else if (attr) {
      if (key == "type") {
        attr->type = value_type_from_string(value);
      } else if (key == "unit") {
        attr->unit = value;
      } else if (key == "synonyms") {
        for (auto& s : split(value, ';')) attr->synonyms.push_back(text::normalize(s));
      } else if (key == "labels") {
        for (const auto& group : split(value, '|')) {
          const auto colon = group.find(':');
          if (colon == std::string::npos) throw FormatError("schema: label needs 'Name: aliases'");
          attr->labels.push_back(trim(std::string_view(group).substr(0, colon)));
          attr->label_aliases.push_back(split(std::string_view(group).substr(colon + 1), ' '));
        }
      } else {
        throw FormatError("schema: unknown attribute key '" + key + "'");
      }
    } else {
      throw FormatError("schema line " + std::to_string(line_no) + ": key outside a section");
    }
  }
  for (const auto& a : schema.attributes_) {
    if (a.synonyms.empty()) throw FormatError("schema: attribute '" + a.tag + "' has no synonyms");
    if ((a.type == ValueType::kOrdinal || a.type == ValueType::kCategorical) && a.labels.empty()) {
      throw FormatError("schema: attribute '" + a.tag + "' needs labels");
    }
  }
  return schema;
}

AttributeSchema AttributeSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open schema file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string AttributeSchema::serialize() const {
  std::ostringstream out;
  out << "# critgen attribute schema\n";
  for (const auto& a : attributes_) {
    out << "\n[" << a.tag << "]\ntype = " << to_string(a.type) << "\n";
    if (!a.unit.empty()) out << "unit = " << a.unit << "\n";
    out << "synonyms = " << text::join(a.synonyms, "; ") << "\n";
    if (!a.labels.empty()) {
      out << "labels = ";
      for (std::size_t i = 0; i < a.labels.size(); ++i) {
        if (i) out << " | ";
        out << a.labels[i] << ": " << text::join(a.label_aliases[i], " ");
      }
      out << "\n";
    }
  }
  for (const auto& u : units_) {
    out << "\n[unit " << u.canonical << "]\naliases = " << text::join(u.aliases, "; ") << "\n";
  }
  return out.str();
}

void AttributeSchema::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write schema file " + path.string());
  out << serialize();
}

const AttributeSpec* AttributeSchema::find(std::string_view tag) const {
  for (const auto& a : attributes_) {
    if (a.tag == tag) return &a;
  }
  return nullptr;
}

std::vector<std::string> AttributeSchema::tags() const {
  std::vector<std::string> out;
  for (const auto& a : attributes_) out.push_back(a.tag);
  return out;
}

CriteriaParser::CriteriaParser(AttributeSchema schema) : schema_(std::move(schema)) {
  for (std::size_t i = 0; i < schema_.attributes().size(); ++i) {
    for (const auto& s : schema_.attributes()[i].synonyms) synonyms_.push_back({text::segment(s), i});
  }
  for (std::size_t i = 0; i < schema_.units().size(); ++i) {
    for (const auto& a : schema_.units()[i].aliases) unit_aliases_.push_back({text::segment(a), i});
  }
  const auto longer = [](const Phrase& a, const Phrase& b) { return a.tokens.size() > b.tokens.size(); };
  std::stable_sort(synonyms_.begin(), synonyms_.end(), longer);
  std::stable_sort(unit_aliases_.begin(), unit_aliases_.end(), longer);
}

std::size_t CriteriaParser::match_unit(const std::vector<std::string>& tokens, std::size_t pos,
                                       std::size_t* unit) const {
  for (const auto& p : unit_aliases_) {
    if (matches_at(tokens, pos, p.tokens)) {
      if (unit) *unit = p.target;
      return p.tokens.size();
    }
  }
  return 0;
}

int CriteriaParser::label_index(std::size_t attr, const std::string& token) const {
  const auto& spec = schema_.attributes()[attr];
  for (std::size_t i = 0; i < spec.label_aliases.size(); ++i) {
    for (const auto& alias : spec.label_aliases[i]) {
      if (alias == token) return static_cast<int>(i);
    }
  }
  return -1;
}

RelationSet CriteriaParser::parse(std::string_view raw) const {
  const std::vector<std::string> tokens = text::segment(raw);
  std::vector<Mention> mentions;
  for (std::size_t i = 0; i < tokens.size();) {
    const Phrase* best = nullptr;
    for (const auto& p : synonyms_) {
      if (matches_at(tokens, i, p.tokens)) {
        best = &p;
        break;
      }
    }
    if (best) {
      mentions.push_back({best->target, i, i + best->tokens.size()});
      i += best->tokens.size();
    } else {
      ++i;
    }
  }

  // Merge same-attribute mentions separated only by brackets/connectives.
  std::vector<Mention> groups;
  for (const auto& m : mentions) {
    if (!groups.empty() && groups.back().attribute == m.attribute) {
      bool gap_ok = true;
      for (std::size_t k = groups.back().end; k < m.begin; ++k) gap_ok &= is_merge_gap(tokens[k]);
      if (gap_ok) {
        groups.back().end = m.end;
        continue;
      }
    }
    groups.push_back(m);
  }

  RelationSet out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& group = groups[g];
    const std::size_t window_end = g + 1 < groups.size() ? groups[g + 1].begin : tokens.size();
    const std::size_t pre_begin = g > 0 ? groups[g - 1].end : 0;
    const auto& spec = schema_.attributes()[group.attribute];
    switch (spec.type) {
      case ValueType::kBoolean:
        out.insert(Relation{spec.tag, Comparator::kBoolean, {}, {}, {}});
        break;
      case ValueType::kCategorical:
        parse_categorical(group.attribute, tokens, group, window_end, out);
        break;
      case ValueType::kOrdinal:
        parse_ordinal(spec, tokens, group, window_end, out);
        break;
      case ValueType::kNumeric:
        parse_numeric(spec, tokens, pre_begin, group, window_end, out);
        break;
    }
  }
  return out;
}

void CriteriaParser::parse_numeric(const AttributeSpec& spec, const std::vector<std::string>& tokens,
                                   std::size_t pre_begin, const Mention& group,
                                   std::size_t window_end, RelationSet& out) const {
  std::size_t unit_index = 0;
  std::string unit;
  const auto unit_name = [&](std::size_t idx) { return schema_.units()[idx].canonical; };

  // "7 % <= hba1c <= 10 %"
  if (group.end + 1 < window_end && (tokens[group.end] == "<=" || tokens[group.end] == "<") &&
      group.begin >= pre_begin + 2) {
    const auto hi = text::parse_number(tokens[group.end + 1]);
    std::size_t k = group.begin - 1;
    if (hi && (tokens[k] == "<=" || tokens[k] == "<") && k > pre_begin) {
      --k;
      std::optional<double> lo = text::parse_number(tokens[k]);
      if (!lo) {
        // step over a unit between value and comparator
        for (std::size_t back = 1; back <= 3 && k >= pre_begin + back; ++back) {
          const std::size_t start = k - back + 1;
          std::size_t u = 0;
          if (match_unit(tokens, start, &u) == back && start > pre_begin) {
            lo = text::parse_number(tokens[start - 1]);
            if (lo) unit = unit_name(u);
            break;
          }
        }
      }
      if (lo) {
        if (match_unit(tokens, group.end + 2, &unit_index)) unit = unit_name(unit_index);
        out.insert(Relation{spec.tag, Comparator::kInRange,
                            {std::min(*lo, *hi), std::max(*lo, *hi)}, {}, unit});
        return;
      }
    }
  }

  std::size_t first = window_end;
  std::optional<double> n1;
  for (std::size_t k = group.end; k < window_end; ++k) {
    if (std::size_t skip = match_unit(tokens, k, nullptr); skip > 0) {
      k += skip - 1;
      continue;
    }
    if ((n1 = text::parse_number(tokens[k]))) {
      first = k;
      break;
    }
  }
  if (!n1) return;

  Cue cue = find_cue(tokens, group.end, first);
  std::size_t pos = first + 1;
  if (std::size_t len = match_unit(tokens, pos, &unit_index); len > 0) {
    unit = unit_name(unit_index);
    pos += len;
  }

  std::optional<double> n2;
  if (pos + 1 < window_end) {
    const std::string& conn = tokens[pos];
    const bool connector = conn == "-" || conn == "to" || (conn == "and" && cue == Cue::kRange);
    if (connector) n2 = text::parse_number(tokens[pos + 1]);
    if (n2) {
      pos += 2;
      if (std::size_t len = match_unit(tokens, pos, &unit_index); len > 0) {
        unit = unit_name(unit_index);
        pos += len;
      }
    }
  }
  if (unit.empty()) {
    for (std::size_t k = pos; k < window_end; ++k) {
      if (match_unit(tokens, k, &unit_index)) {
        unit = unit_name(unit_index);
        break;
      }
    }
  }

  if (n2) {
    out.insert(Relation{spec.tag, Comparator::kInRange, {std::min(*n1, *n2), std::max(*n1, *n2)}, {}, unit});
    return;
  }
  if (const Cue post = postfix_cue(tokens, pos, window_end); post != Cue::kNone) cue = post;
  out.insert(Relation{spec.tag, to_comparator(cue), {*n1}, {}, unit});
}

void CriteriaParser::parse_ordinal(const AttributeSpec& spec, const std::vector<std::string>& tokens,
                                   const Mention& group, std::size_t window_end,
                                   RelationSet& out) const {
  const std::size_t attr = static_cast<std::size_t>(&spec - schema_.attributes().data());
  std::size_t first = window_end;
  int label = -1;
  for (std::size_t k = group.end; k < window_end; ++k) {
    if ((label = label_index(attr, tokens[k])) >= 0) {
      first = k;
      break;
    }
  }
  if (label < 0) return;

  const int n = static_cast<int>(spec.labels.size());
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  chosen[static_cast<std::size_t>(label)] = true;
  bool enumerated = false;
  std::size_t pos = first + 1;
  while (pos + 1 < window_end) {
    const std::string& conn = tokens[pos];
    const int next = label_index(attr, tokens[pos + 1]);
    if (next < 0) break;
    if (conn == "-" || conn == "to") {
      const int lo = std::min(label, next), hi = std::max(label, next);
      for (int i = lo; i <= hi; ++i) chosen[static_cast<std::size_t>(i)] = true;
    } else if (conn == "or" || conn == "and" || conn == "," || conn == "/") {
      chosen[static_cast<std::size_t>(next)] = true;
    } else {
      break;
    }
    enumerated = true;
    label = next;
    pos += 2;
  }

  if (!enumerated) {
    Cue cue = find_cue(tokens, group.end, first);
    if (const Cue post = postfix_cue(tokens, pos, window_end); post != Cue::kNone) cue = post;
    const int l = label;
    chosen.assign(static_cast<std::size_t>(n), false);
    for (int i = 0; i < n; ++i) {
      bool keep = false;
      switch (cue) {
        case Cue::kGreater: keep = i > l; break;
        case Cue::kGreaterEqual: keep = i >= l; break;
        case Cue::kLess: keep = i < l; break;
        case Cue::kLessEqual: keep = i <= l; break;
        default: keep = i == l; break;
      }
      chosen[static_cast<std::size_t>(i)] = keep;
    }
  }

  Relation r{spec.tag, Comparator::kInSet, {}, {}, spec.unit};
  for (int i = 0; i < n; ++i) {
    if (chosen[static_cast<std::size_t>(i)]) r.labels.push_back(spec.labels[static_cast<std::size_t>(i)]);
  }
  if (!r.labels.empty()) out.insert(std::move(r));
}

void CriteriaParser::parse_categorical(std::size_t attr, const std::vector<std::string>& tokens,
                                       const Mention& group, std::size_t window_end,
                                       RelationSet& out) const {
  const auto& spec = schema_.attributes()[attr];
  std::vector<bool> chosen(spec.labels.size(), false);
  bool any = false;
  for (std::size_t k = group.begin; k < window_end; ++k) {
    const int idx = label_index(attr, tokens[k]);
    if (idx >= 0) {
      chosen[static_cast<std::size_t>(idx)] = true;
      any = true;
    }
  }
  if (!any) return;
  Relation r{spec.tag, Comparator::kInSet, {}, {}, spec.unit};
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    if (chosen[i]) r.labels.push_back(spec.labels[i]);
  }
  out.insert(std::move(r));
}

RelationSet relation_set(const CriteriaParser& parser, const std::vector<Criterion>& criteria) {
  RelationSet out;
  for (const auto& c : criteria) out.merge(parser.parse(c.text));
  return out;
}

SetComparison compare_sets(const RelationSet& pred, const RelationSet& gold) {
  SetComparison c;
  for (const auto& r : pred) {
    if (gold.count(r)) {
      ++c.tp;
    } else {
      ++c.fp;
    }
  }
  c.fn = gold.size() - c.tp;
  return c;
}

double SetComparison::precision() const {
  return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double SetComparison::recall() const {
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double SetComparison::f1() const {
  const double p = precision(), r = recall();
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

double SetComparison::jaccard() const {
  const std::size_t uni = tp + fp + fn;
  return uni == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(uni);
}

}  // namespace critgen
