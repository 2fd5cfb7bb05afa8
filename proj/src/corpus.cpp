#include "critgen/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "critgen/error.hpp"
#include "critgen/rng.hpp"

namespace critgen {

using nlohmann::json;

namespace {

json relation_to_json(const Relation& r) {
  json values = json::array();
  for (double v : r.numbers) values.push_back(v);
  for (const auto& l : r.labels) values.push_back(l);
  return {{"attribute", r.attribute},
          {"comparator", std::string(to_string(r.comparator))},
          {"values", values},
          {"unit", r.unit}};
}

Relation relation_from_json(const json& j) {
  Relation r;
  r.attribute = j.at("attribute").get<std::string>();
  r.comparator = comparator_from_string(j.at("comparator").get<std::string>());
  for (const auto& v : j.at("values")) {
    if (v.is_number()) {
      r.numbers.push_back(v.get<double>());
    } else {
      r.labels.push_back(v.get<std::string>());
    }
  }
  r.unit = j.value("unit", "");
  return r;
}

json criteria_to_json(const std::vector<Criterion>& cs) {
  json out = json::array();
  for (const auto& c : cs) {
    json item{{"text", c.text}};
    item["attribute"] = c.attribute ? json(*c.attribute) : json(nullptr);
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<Criterion> criteria_from_json(const json& arr, Polarity polarity) {
  std::vector<Criterion> out;
  for (const auto& item : arr) {
    Criterion c;
    c.polarity = polarity;
    if (item.is_string()) {
      c.text = item.get<std::string>();
    } else {
      c.text = item.at("text").get<std::string>();
      if (item.contains("attribute") && !item["attribute"].is_null()) {
        c.attribute = item["attribute"].get<std::string>();
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower_ascii(std::string s) {
  for (auto& ch : s) {
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  }
  return s;
}

// Strips bullets and enumeration marks ("-", "*", "•", "1.", "2)").
std::string strip_bullet(std::string line) {
  line = trim(line);
  if (line.rfind("\xe2\x80\xa2", 0) == 0) return trim(line.substr(3));
  if (!line.empty() && (line[0] == '-' || line[0] == '*')) return trim(line.substr(1));
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) return trim(line.substr(i + 1));
  return line;
}

}  // namespace

std::string serialize_trial(const TrialDocument& trial) {
  json gold = json::array();
  const auto add_gold = [&](const std::vector<Criterion>& cs, Polarity p) {
    for (std::size_t i = 0; i < cs.size(); ++i) {
      for (const auto& r : cs[i].gold) {
        json g = relation_to_json(r);
        g["polarity"] = std::string(to_string(p));
        g["index"] = i;
        gold.push_back(std::move(g));
      }
    }
  };
  add_gold(trial.inclusion, Polarity::kInclusion);
  add_gold(trial.exclusion, Polarity::kExclusion);

  json j;
  j["trial_id"] = trial.trial_id;
  j["title"] = trial.title;
  j["disease"] = trial.disease;
  j["treatment"] = trial.treatment;
  j["inclusion"] = criteria_to_json(trial.inclusion);
  j["exclusion"] = criteria_to_json(trial.exclusion);
  j["gold_relations"] = std::move(gold);
  return j.dump();
}

TrialDocument deserialize_trial(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(std::string("corpus record is not valid JSON: ") + e.what());
  }
  try {
    TrialDocument t;
    t.trial_id = j.at("trial_id").get<std::string>();
    t.title = j.at("title").get<std::string>();
    t.disease = j.at("disease").get<std::string>();
    t.treatment = j.at("treatment").get<std::string>();
    t.inclusion = criteria_from_json(j.at("inclusion"), Polarity::kInclusion);
    t.exclusion = criteria_from_json(j.at("exclusion"), Polarity::kExclusion);
    if (j.contains("gold_relations")) {
      for (const auto& g : j["gold_relations"]) {
        const Polarity p = polarity_from_string(g.at("polarity").get<std::string>());
        auto& list = p == Polarity::kInclusion ? t.inclusion : t.exclusion;
        const auto index = g.at("index").get<std::size_t>();
        if (index >= list.size()) {
          throw FormatError("gold relation index out of range in trial " + t.trial_id);
        }
        list[index].gold.push_back(relation_from_json(g));
      }
    }
    return t;
  } catch (const json::exception& e) {
    throw FormatError(std::string("corpus record has a bad field: ") + e.what());
  }
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write corpus file " + path.string());
  for (const auto& t : corpus) out << serialize_trial(t) << '\n';
  if (!out) throw Error("failed writing corpus file " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read corpus file " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      corpus.push_back(deserialize_trial(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate_corpus(corpus);
  return corpus;
}

void validate_corpus(const Corpus& corpus) {
  std::set<std::string> ids;
  const auto& registry = AttributeSchema::default_schema();
  for (const auto& t : corpus) {
    if (t.trial_id.empty()) throw ConfigError("trial with empty trial_id");
    if (!ids.insert(t.trial_id).second) throw ConfigError("duplicate trial_id " + t.trial_id);
    if (t.criteria_count() == 0) throw ConfigError("trial " + t.trial_id + " has no criteria");
    for (const auto& c : t.all_criteria()) {
      if (c.text.empty()) throw ConfigError("trial " + t.trial_id + " has an empty criterion");
      if (c.attribute && !registry.find(*c.attribute)) {
        throw ConfigError("trial " + t.trial_id + ": unknown attribute '" + *c.attribute + "'");
      }
    }
  }
}

void split_eligibility(const std::string& eligibility, std::vector<Criterion>& inclusion,
                       std::vector<Criterion>& exclusion) {
  std::vector<Criterion>* current = &inclusion;
  Polarity polarity = Polarity::kInclusion;
  std::size_t start = 0;
  while (start <= eligibility.size()) {
    std::size_t end = eligibility.find('\n', start);
    if (end == std::string::npos) end = eligibility.size();
    std::string line = trim(std::string_view(eligibility).substr(start, end - start));
    start = end + 1;
    if (line.empty()) continue;
    const std::string low = lower_ascii(line);
    if (low.rfind("inclusion criteria", 0) == 0) {
      current = &inclusion;
      polarity = Polarity::kInclusion;
      line = trim(line.substr(line.find_first_of(":") == std::string::npos ? line.size()
                                                                          : line.find(':') + 1));
      if (line.empty()) continue;
    } else if (low.rfind("exclusion criteria", 0) == 0) {
      current = &exclusion;
      polarity = Polarity::kExclusion;
      line = trim(line.substr(line.find_first_of(":") == std::string::npos ? line.size()
                                                                          : line.find(':') + 1));
      if (line.empty()) continue;
    }
    line = strip_bullet(line);
    if (line.empty()) continue;
    current->push_back({line, polarity, std::nullopt, {}});
  }
}

Corpus ingest_registry(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read registry export " + path.string());
  Corpus corpus;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      spdlog::warn("{}:{}: malformed record skipped", path.string(), lineno);
      continue;
    }
    const auto field = [&](const char* key) {
      return j.is_object() && j.contains(key) && j[key].is_string() ? trim(j[key].get<std::string>())
                                                                     : std::string();
    };
    TrialDocument t;
    t.title = field("title");
    t.disease = field("condition");
    t.treatment = field("intervention");
    if (t.title.empty() || t.disease.empty() || t.treatment.empty()) continue;
    split_eligibility(field("eligibility"), t.inclusion, t.exclusion);
    if (t.criteria_count() == 0) continue;
    t.trial_id = field("nct_id");
    if (t.trial_id.empty()) t.trial_id = "REG" + std::to_string(lineno);
    if (!ids.insert(t.trial_id).second) {
      spdlog::warn("{}:{}: duplicate id {} skipped", path.string(), lineno, t.trial_id);
      continue;
    }
    corpus.push_back(std::move(t));
  }
  if (corpus.empty()) throw Error("no valid trials in " + path.string());
  return corpus;
}

void DatasetSplit::save(const std::filesystem::path& path) const {
  json j{{"seed", seed}, {"train", train}, {"valid", valid}, {"test", test}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write split file " + path.string());
  out << j.dump(1) << '\n';
}

DatasetSplit DatasetSplit::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read split file " + path.string());
  try {
    const json j = json::parse(in);
    DatasetSplit s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train = j.at("train").get<std::vector<std::string>>();
    s.valid = j.at("valid").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
  } catch (const json::exception& e) {
    throw FormatError("bad split file " + path.string() + ": " + e.what());
  }
}

DatasetSplit split(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed) {
  const double r[3] = {ratios.train, ratios.valid, ratios.test};
  for (double x : r) {
    if (!(x > 0.0)) throw ConfigError("split ratios must be positive");
  }
  if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

  const std::size_t n = corpus.size();
  std::size_t counts[3];
  std::pair<double, int> rema[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = r[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rema[i] = {exact - static_cast<double>(counts[i]), i};
    assigned += counts[i];
  }
  std::stable_sort(std::begin(rema), std::end(rema),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[rema[k % 3].second];

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order);

  DatasetSplit out;
  out.seed = seed;
  std::vector<std::string>* parts[3] = {&out.train, &out.valid, &out.test};
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                 order.begin() + static_cast<std::ptrdiff_t>(pos + counts[i]));
    pos += counts[i];
    std::sort(idx.begin(), idx.end());
    for (auto k : idx) parts[i]->push_back(corpus[k].trial_id);
  }
  return out;
}

std::vector<std::string> corpus_texts(const Corpus& corpus) {
  std::vector<std::string> out;
  for (const auto& t : corpus) {
    out.push_back(t.title);
    out.push_back(t.disease);
    out.push_back(t.treatment);
    for (const auto& c : t.all_criteria()) out.push_back(c.text);
  }
  return out;
}

Corpus select_trials(const Corpus& corpus, const std::vector<std::string>& ids) {
  const std::set<std::string> wanted(ids.begin(), ids.end());
  Corpus out;
  for (const auto& t : corpus) {
    if (wanted.count(t.trial_id)) out.push_back(t);
  }
  if (out.size() != wanted.size()) throw ConfigError("split references trial ids missing from the corpus");
  return out;
}

std::vector<PretrainSample> build_pretrain_set(const Corpus& corpus, std::uint64_t seed,
                                               const PretrainPolicy& policy) {
  std::vector<PretrainSample> out;
  for (std::size_t ti = 0; ti < corpus.size(); ++ti) {
    const auto& trial = corpus[ti];
    const auto criteria = trial.all_criteria();
    if (criteria.size() < 2) {
      spdlog::debug("trial {} has fewer than 2 criteria; no pretraining samples", trial.trial_id);
      continue;
    }
    Rng rng(derive_seed(seed, "pretrain", ti));
    std::vector<std::size_t> targets(criteria.size());
    std::iota(targets.begin(), targets.end(), 0);
    if (policy.targets_per_trial > 0 && policy.targets_per_trial < targets.size()) {
      rng.shuffle(targets);
      targets.resize(policy.targets_per_trial);
      std::sort(targets.begin(), targets.end());
    }
    for (std::size_t t : targets) {
      PretrainSample s;
      s.trial_id = trial.trial_id;
      s.setup = trial.setup();
      s.target = criteria[t];
      std::vector<std::size_t> others;
      for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (i != t) {
          others.push_back(i);
          s.rationale.push_back(criteria[i]);
        }
      }
      rng.shuffle(others);
      others.resize(std::min(policy.exemplar_size, others.size()));
      std::sort(others.begin(), others.end());
      for (auto i : others) s.exemplar.push_back(criteria[i]);
      out.push_back(std::move(s));
    }
  }
  return out;
}

PairExtraction extract_pairs(const Corpus& corpus, const CriteriaParser& parser, std::size_t max_chain) {
  PairExtraction out;
  for (const auto& trial : corpus) {
    const auto criteria = trial.all_criteria();
    for (std::size_t i = 0; i < criteria.size(); ++i) {
      const RelationSet rels = parser.parse(criteria[i].text);
      if (rels.empty()) {
        ++out.skipped;
        continue;
      }
      InstructionCriterionPair p;
      p.trial_id = trial.trial_id;
      p.setup = trial.setup();
      p.instruction = rels.begin()->attribute;
      p.target = criteria[i];
      p.target.attribute = p.instruction;
      const std::size_t first = i > max_chain ? i - max_chain : 0;
      p.rationale_chain.assign(criteria.begin() + static_cast<std::ptrdiff_t>(first),
                               criteria.begin() + static_cast<std::ptrdiff_t>(i));
      out.pairs.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace critgen
