#include "critgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "critgen/error.hpp"
#include "critgen/text.hpp"

namespace critgen {

namespace {

std::map<Tokens, std::size_t> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Tokens, std::size_t> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i),
                                                              t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

ClinicalAccuracy pooled(const std::vector<const EvalItem*>& items) {
  ClinicalAccuracy acc;
  std::size_t inter = 0, uni = 0;
  for (const auto* it : items) {
    const auto c = compare_sets(it->pred, it->gold);
    acc.tp += c.tp;
    acc.fp += c.fp;
    acc.fn += c.fn;
    inter += c.tp;
    uni += c.tp + c.fp + c.fn;
  }
  const auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  acc.precision = ratio(acc.tp, acc.tp + acc.fp);
  acc.recall = ratio(acc.tp, acc.tp + acc.fn);
  acc.f1 = acc.precision + acc.recall > 0 ? 2 * acc.precision * acc.recall / (acc.precision + acc.recall) : 0.0;
  acc.jaccard = ratio(inter, uni);
  return acc;
}

MetricReport aggregate(const std::vector<const EvalItem*>& items, EvalLevel level, Polarity polarity,
                       std::optional<std::string> group) {
  MetricReport r;
  r.level = level;
  r.polarity = polarity;
  r.group = std::move(group);
  r.items = items.size();
  std::set<std::string> trials;
  std::size_t follows = 0;
  for (const auto* it : items) {
    trials.insert(it->trial_id);
    r.bleu1 += it->bleu1;
    r.meteor += it->meteor;
    r.rouge_l += it->rouge_l;
    r.cider += it->cider;
    follows += it->follows_instruction;
  }
  r.trials = trials.size();
  if (!items.empty()) {
    const auto n = static_cast<double>(items.size());
    r.bleu1 /= n;
    r.meteor /= n;
    r.rouge_l /= n;
    r.cider /= n;
    if (level == EvalLevel::kCriteria) r.instruction_accuracy = static_cast<double>(follows) / n;
  }
  r.clinical = pooled(items);
  return r;
}

std::string join_texts(const std::vector<Criterion>& criteria) {
  std::string out;
  for (const auto& c : criteria) {
    if (!out.empty()) out += ' ';
    out += c.text;
  }
  return out;
}

}  // namespace

Tokens metric_tokens(std::string_view text) { return text::segment(text::normalize(text)); }

double bleu1(const Tokens& candidate, const std::vector<Tokens>& references) {
  if (candidate.empty() || references.empty()) return 0.0;
  const auto cand = ngram_counts(candidate, 1);
  std::map<Tokens, std::size_t> max_ref;
  for (const auto& ref : references)
    for (const auto& [g, n] : ngram_counts(ref, 1)) max_ref[g] = std::max(max_ref[g], n);
  std::size_t clipped = 0;
  for (const auto& [g, n] : cand) {
    auto it = max_ref.find(g);
    if (it != max_ref.end()) clipped += std::min(n, it->second);
  }
  const double c = static_cast<double>(candidate.size());
  double r = static_cast<double>(references[0].size());
  for (const auto& ref : references) {
    const double len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = std::exp(std::min(0.0, 1.0 - r / c));
  return 100.0 * bp * static_cast<double>(clipped) / c;
}

double rouge_l(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double l = static_cast<double>(lcs(candidate, reference));
  if (l == 0) return 0.0;
  const double p = l / static_cast<double>(candidate.size());
  const double r = l / static_cast<double>(reference.size());
  const double b2 = 1.2 * 1.2;
  return 100.0 * (1 + b2) * r * p / (r + b2 * p);
}

std::string meteor_stem(const std::string& word) {
  for (const char* suffix : {"ing", "ed", "es", "s"}) {
    const std::string_view s(suffix);
    if (word.size() >= s.size() + 3 && word.compare(word.size() - s.size(), s.size(), s) == 0)
      return word.substr(0, word.size() - s.size());
  }
  return word;
}

double meteor(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> align(candidate.size(), kNone);
  std::vector<bool> used(reference.size(), false);
  // Left to right in each stage: the first free reference position wins.
  const auto stage = [&](auto&& key) {
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      if (align[i] != kNone) continue;
      for (std::size_t j = 0; j < reference.size(); ++j) {
        if (!used[j] && key(candidate[i]) == key(reference[j])) {
          align[i] = j;
          used[j] = true;
          break;
        }
      }
    }
  };
  stage([](const std::string& w) { return w; });
  stage([](const std::string& w) { return meteor_stem(w); });
  std::size_t m = 0, chunks = 0;
  std::size_t last = kNone;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (align[i] == kNone) {
      last = kNone;
      continue;
    }
    ++m;
    if (last == kNone || align[i] != last + 1) ++chunks;
    last = align[i];
  }
  if (m == 0) return 0.0;
  const double p = static_cast<double>(m) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(m) / static_cast<double>(reference.size());
  const double fmean = 10 * p * r / (r + 9 * p);
  const double penalty = 0.5 * std::pow(static_cast<double>(chunks) / static_cast<double>(m), 3);
  return 100.0 * fmean * (1 - penalty);
}

CiderIdf::CiderIdf(const std::vector<Tokens>& documents) : n_docs_(documents.size()) {
  for (const auto& doc : documents) {
    std::set<Tokens> seen;
    for (std::size_t n = 1; n <= 4; ++n)
      for (const auto& [g, c] : ngram_counts(doc, n)) seen.insert(g);
    for (const auto& g : seen) ++df_[g];
  }
}

double CiderIdf::idf(const Tokens& ngram) const {
  auto it = df_.find(ngram);
  const double df = it == df_.end() ? 1.0 : static_cast<double>(std::max<std::size_t>(1, it->second));
  return std::log(static_cast<double>(std::max<std::size_t>(1, n_docs_)) / df);
}

double cider(const Tokens& candidate, const std::vector<Tokens>& references, const CiderIdf& idf) {
  if (candidate.empty() || references.empty()) return 0.0;
  double total = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto vec = [&](const Tokens& t) {
      std::map<Tokens, double> v;
      for (const auto& [g, c] : ngram_counts(t, n)) v[g] = static_cast<double>(c) * idf.idf(g);
      return v;
    };
    const auto cv = vec(candidate);
    double cn = 0;
    for (const auto& [g, w] : cv) cn += w * w;
    double sum = 0;
    for (const auto& ref : references) {
      const auto rv = vec(ref);
      double rn = 0, dot = 0;
      for (const auto& [g, w] : rv) {
        rn += w * w;
        auto it = cv.find(g);
        if (it != cv.end()) dot += w * it->second;
      }
      if (cn > 0 && rn > 0) sum += dot / std::sqrt(cn * rn);
    }
    total += sum / static_cast<double>(references.size());
  }
  return 10.0 * total / 4.0;
}

ClinicalAccuracy clinical_accuracy(const std::vector<std::pair<RelationSet, RelationSet>>& items) {
  std::vector<EvalItem> wrapped;
  std::size_t gold = 0;
  for (const auto& [p, g] : items) {
    EvalItem it;
    it.pred = p;
    it.gold = g;
    gold += g.size();
    wrapped.push_back(std::move(it));
  }
  if (gold == 0) throw Error("clinical accuracy is undefined without gold relations");
  std::vector<const EvalItem*> ptrs;
  for (const auto& w : wrapped) ptrs.push_back(&w);
  return pooled(ptrs);
}

std::string_view to_string(EvalLevel level) { return level == EvalLevel::kCriteria ? "criteria" : "trial"; }

EvalLevel eval_level_from_string(std::string_view s) {
  if (s == "criteria") return EvalLevel::kCriteria;
  if (s == "trial") return EvalLevel::kTrial;
  throw ConfigError("unknown evaluation level '" + std::string(s) + "' (expected criteria or trial)");
}

EvalResult score_items(std::vector<EvalItem> items, EvalLevel level, bool group_by_disease) {
  EvalResult result;
  std::vector<Tokens> refs;
  for (const auto& it : items) refs.push_back(metric_tokens(it.reference));
  const CiderIdf idf(refs);
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& it = items[i];
    const auto cand = metric_tokens(it.generated);
    it.bleu1 = bleu1(cand, {refs[i]});
    it.meteor = meteor(cand, refs[i]);
    it.rouge_l = rouge_l(cand, refs[i]);
    it.cider = cider(cand, {refs[i]}, idf);
  }
  result.items = std::move(items);

  std::vector<std::optional<std::string>> groups{std::nullopt};
  if (group_by_disease) {
    std::set<std::string> diseases;
    for (const auto& it : result.items) diseases.insert(it.disease);
    groups.insert(groups.end(), diseases.begin(), diseases.end());
  }
  for (const auto& g : groups) {
    for (Polarity p : {Polarity::kInclusion, Polarity::kExclusion}) {
      std::vector<const EvalItem*> sel;
      for (const auto& it : result.items)
        if (it.polarity == p && (!g || it.disease == *g)) sel.push_back(&it);
      if (sel.empty()) continue;
      result.reports.push_back(aggregate(sel, level, p, g));
      const std::pair<const char*, double EvalItem::*> metrics[] = {
          {"bleu1", &EvalItem::bleu1}, {"meteor", &EvalItem::meteor}, {"rouge_l", &EvalItem::rouge_l}, {"cider", &EvalItem::cider}};
      for (const auto& [name, field] : metrics) {
        std::vector<double> v;
        for (const auto* it : sel) v.push_back(it->*field);
        result.distribution.push_back({g.value_or("all"), name, p, quantile(v, 0), quantile(v, 0.25), quantile(v, 0.5),
                                       quantile(v, 0.75), quantile(v, 1)});
      }
    }
  }
  return result;
}

EvalResult evaluate(const ModelState& model, const KnowledgeStore* store, const Corpus& split,
                    const EvalConfig& config, const CriteriaParser& parser) {
  if (split.empty()) throw ConfigError("evaluation split is empty");
  std::map<std::string, std::string> disease;
  for (const auto& t : split) disease[t.trial_id] = t.disease;
  std::vector<EvalItem> items;
  if (config.level == EvalLevel::kCriteria) {
    const auto pairs = extract_pairs(split, parser, config.max_chain).pairs;
    if (pairs.empty()) throw ConfigError("evaluation split has no labeled criteria");
    for (const auto& pair : pairs) {
      if (model.registry.index_of(pair.instruction) < 0) {
        spdlog::warn("skipping {}: instruction '{}' is not registered", pair.trial_id, pair.instruction);
        continue;
      }
      CriteriaRequest req{pair.trial_id, pair.setup, pair.instruction, pair.target, config.prefix_tokens};
      const auto res = generate_criteria(model, store, req, config.generation, config.sequence);
      EvalItem it;
      it.trial_id = pair.trial_id;
      it.disease = disease[pair.trial_id];
      it.polarity = pair.target.polarity;
      it.instruction = pair.instruction;
      if (const auto best = res.best()) it.generated = best->text;
      it.reference = pair.target.text;
      it.pred = parser.parse(it.generated);
      it.gold = parser.parse(it.reference);
      it.follows_instruction = std::any_of(it.pred.begin(), it.pred.end(),
                                           [&](const Relation& r) { return r.attribute == pair.instruction; });
      items.push_back(std::move(it));
    }
  } else {
    for (const auto& trial : split) {
      const auto res = generate_trial(model, store, trial.trial_id, trial.setup(), config.generation.max_new_tokens,
                                      config.sequence);
      for (Polarity p : {Polarity::kInclusion, Polarity::kExclusion}) {
        const auto& gold = p == Polarity::kInclusion ? trial.inclusion : trial.exclusion;
        if (gold.empty()) continue;
        const auto& pred = p == Polarity::kInclusion ? res.inclusion : res.exclusion;
        EvalItem it;
        it.trial_id = trial.trial_id;
        it.disease = trial.disease;
        it.polarity = p;
        it.generated = join_texts(pred);
        it.reference = join_texts(gold);
        it.pred = relation_set(parser, pred);
        it.gold = relation_set(parser, gold);
        items.push_back(std::move(it));
      }
    }
  }
  return score_items(std::move(items), config.level, config.group_by_disease);
}

nlohmann::json to_json(const EvalResult& result) {
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& r : result.reports) {
    nlohmann::json j{{"level", to_string(r.level)},
                     {"polarity", to_string(r.polarity)},
                     {"group", r.group ? nlohmann::json(*r.group) : nlohmann::json(nullptr)},
                     {"items", r.items},
                     {"trials", r.trials},
                     {"B1", r.bleu1},
                     {"METEOR", r.meteor},
                     {"ROUGE_L", r.rouge_l},
                     {"CIDEr", r.cider},
                     {"P", r.clinical.precision},
                     {"R", r.clinical.recall},
                     {"F1", r.clinical.f1},
                     {"micro_Jaccard", r.clinical.jaccard}};
    if (r.instruction_accuracy) j["instruction_accuracy"] = *r.instruction_accuracy;
    reports.push_back(std::move(j));
  }
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : result.items) {
    items.push_back({{"trial_id", it.trial_id},
                     {"disease", it.disease},
                     {"polarity", to_string(it.polarity)},
                     {"instruction", it.instruction},
                     {"generated", it.generated},
                     {"reference", it.reference},
                     {"follows_instruction", it.follows_instruction},
                     {"B1", it.bleu1},
                     {"METEOR", it.meteor},
                     {"ROUGE_L", it.rouge_l},
                     {"CIDEr", it.cider}});
  }
  nlohmann::json dist = nlohmann::json::array();
  for (const auto& q : result.distribution) {
    dist.push_back({{"group", q.group},
                    {"metric", q.metric},
                    {"polarity", to_string(q.polarity)},
                    {"min", q.min},
                    {"q1", q.q1},
                    {"median", q.median},
                    {"q3", q.q3},
                    {"max", q.max}});
  }
  return {{"reports", reports}, {"items", items}, {"distribution", dist}};
}

std::string format_table(const EvalResult& result) {
  std::ostringstream out;
  out << fmt::format("{:<9} {:<10} {:<28} {:>6} {:>7} {:>7} {:>7} {:>7} {:>6} {:>6} {:>6} {:>6} {:>6}\n", "level",
                     "polarity", "group", "items", "B1", "METEOR", "ROUGE_L", "CIDEr", "P", "R", "F1", "Jac", "Instr");
  for (const auto& r : result.reports) {
    out << fmt::format("{:<9} {:<10} {:<28} {:>6} {:>7.2f} {:>7.2f} {:>7.2f} {:>7.3f} {:>6.3f} {:>6.3f} {:>6.3f} {:>6.3f} {:>6}\n",
                       to_string(r.level), to_string(r.polarity), r.group.value_or("all"), r.items, r.bleu1, r.meteor,
                       r.rouge_l, r.cider, r.clinical.precision, r.clinical.recall, r.clinical.f1, r.clinical.jaccard,
                       r.instruction_accuracy ? fmt::format("{:.3f}", *r.instruction_accuracy) : std::string("-"));
  }
  return out.str();
}

}  // namespace critgen
