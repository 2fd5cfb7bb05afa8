// Synthetic clinical-trial generator. Values are fixed per (disease,
// attribute) so that thresholds are learnable from the trial setup; the
// surface template and the attribute subset vary per trial.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>

#include "critgen/corpus.hpp"
#include "critgen/error.hpp"
#include "critgen/rng.hpp"
#include "critgen/text.hpp"

namespace critgen {
namespace {

struct DiseaseProfile {
  std::string_view name;
  std::string_view drug_stem;
  double age_lo, age_hi;
  double bmi_lo, bmi_hi;
  int gender;  // 0 both, 1 female, 2 male
  double hba1c_lo, hba1c_hi;
  int nyha_above;  // label index: exclusion applies above this class
  double sbp, qtc, egfr, life_weeks;
  int ecog_max;
  double hemoglobin;
  // Inclusion weights for: age bmi gender hba1c egfr life_expectancy ecog hemoglobin
  std::array<double, 8> inc_weights;
  // Exclusion weights for: nyha sbp qtc pregnancy
  std::array<double, 4> exc_weights;
};

// clang-format off
const std::array<DiseaseProfile, 12> kDiseases{{
  {"Type 2 Diabetes Mellitus", "gliptin", 18, 75, 20, 45, 0, 7, 10, 1, 160, 450, 45, 52, 1, 10,
   {0.95, 0.9, 0.5, 0.95, 0.6, 0.1, 0.1, 0.3}, {0.6, 0.6, 0.4, 0.7}},
  {"Non-small Cell Lung Cancer", "tinib", 18, 80, 18, 35, 0, 6.5, 9, 1, 150, 470, 50, 12, 1, 9,
   {0.9, 0.2, 0.4, 0.1, 0.6, 0.9, 0.95, 0.8}, {0.5, 0.3, 0.7, 0.7}},
  {"Breast Cancer", "ciclib", 18, 70, 18, 35, 1, 6.5, 9, 1, 150, 470, 60, 12, 1, 9,
   {0.9, 0.2, 0.9, 0.1, 0.5, 0.8, 0.95, 0.8}, {0.5, 0.3, 0.6, 0.9}},
  {"Prostate Cancer", "lutamide", 40, 85, 18, 35, 2, 6.5, 9, 1, 160, 480, 45, 24, 2, 10,
   {0.9, 0.2, 0.9, 0.1, 0.6, 0.8, 0.95, 0.8}, {0.5, 0.4, 0.7, 0.05}},
  {"Chronic Heart Failure", "sartan", 40, 85, 18, 40, 0, 6.5, 10, 2, 180, 500, 30, 52, 2, 9,
   {0.9, 0.5, 0.4, 0.1, 0.8, 0.1, 0.1, 0.4}, {0.95, 0.7, 0.8, 0.5}},
  {"Essential Hypertension", "dipine", 18, 75, 18, 40, 0, 6.5, 10, 1, 180, 450, 45, 52, 1, 10,
   {0.95, 0.7, 0.5, 0.2, 0.5, 0.05, 0.05, 0.2}, {0.4, 0.95, 0.4, 0.7}},
  {"Chronic Kidney Disease", "stat", 18, 80, 18, 40, 0, 6.5, 9, 2, 170, 470, 15, 52, 2, 9,
   {0.9, 0.5, 0.4, 0.3, 0.95, 0.1, 0.1, 0.8}, {0.5, 0.7, 0.4, 0.6}},
  {"Rheumatoid Arthritis", "limumab", 18, 75, 18, 40, 0, 6.5, 9, 2, 160, 450, 40, 52, 1, 8,
   {0.95, 0.4, 0.5, 0.1, 0.5, 0.05, 0.1, 0.7}, {0.4, 0.4, 0.4, 0.8}},
  {"Major Depressive Disorder", "xetine", 18, 65, 18, 40, 0, 6.5, 9, 2, 160, 450, 60, 52, 1, 10,
   {0.95, 0.5, 0.6, 0.05, 0.3, 0.05, 0.05, 0.2}, {0.2, 0.4, 0.9, 0.9}},
  {"Asthma", "lukast", 12, 65, 18, 35, 0, 6.5, 9, 2, 160, 450, 60, 52, 1, 10,
   {0.95, 0.6, 0.6, 0.05, 0.3, 0.05, 0.05, 0.2}, {0.3, 0.4, 0.5, 0.8}},
  {"Colorectal Cancer", "fiban", 18, 80, 18, 35, 0, 6.5, 9, 1, 150, 470, 50, 12, 2, 9,
   {0.9, 0.2, 0.4, 0.1, 0.7, 0.9, 0.95, 0.9}, {0.5, 0.4, 0.6, 0.7}},
  {"Healthy Volunteers", "vimab", 18, 55, 18.5, 29.9, 0, 5.5, 6.5, 0, 140, 450, 90, 52, 0, 12,
   {0.95, 0.95, 0.6, 0.1, 0.5, 0.05, 0.05, 0.4}, {0.3, 0.6, 0.8, 0.9}},
}};
// clang-format on

constexpr std::array<std::string_view, 8> kIncAttributes{
    "age", "bmi", "gender", "hba1c", "egfr", "life_expectancy", "ecog", "hemoglobin"};
constexpr std::array<std::string_view, 4> kExcAttributes{"nyha", "sbp", "qtc", "pregnancy"};

constexpr std::array<std::string_view, 3> kIncFillers{
    "Signed written informed consent before any study procedure",
    "Able to comply with the study protocol",
    "Willing to use effective contraception during the study",
};
constexpr std::array<std::string_view, 4> kExcFillers{
    "Known hypersensitivity to {drug} or any of its excipients",
    "Participation in another clinical trial within the past 30 days",
    "Active hepatitis B or hepatitis C infection",
    "History of alcohol or drug abuse",
};
constexpr double kFillerWeight = 0.35;

constexpr std::array<std::string_view, 4> kRoman{"I", "II", "III", "IV"};

// Surface templates per attribute. The last one of each list is the "long"
// class. Placeholders: {lo} {hi} {v} {t} {set_and} {set_or} {g}.
const std::map<std::string_view, std::vector<std::string_view>>& templates() {
  static const std::map<std::string_view, std::vector<std::string_view>> t{
      {"age",
       {"Age is above {lo} yrs old", "Aged {lo} years or older", "Age {lo} to {hi} years",
        "Adult patients aged between {lo} and {hi} years inclusive at the time of signing the "
        "informed consent form for this study"}},
      {"bmi",
       {"Body mass index (BMI) within the range of {lo}-{hi} kg/m2", "BMI of {lo}-{hi} kg/m2",
        "BMI between {lo} and {hi} kg/m2",
        "Body mass index between {lo} and {hi} kg/m2 inclusive, with a stable body weight for "
        "at least three months before screening"}},
      {"gender",
       {"{g} patients", "Gender: {g}",
        "{g} participants who are willing and able to comply with all scheduled visits, "
        "treatment plans and laboratory tests"}},
      {"hba1c",
       {"HbA1c between {lo}% and {hi}%", "{lo}% <= HbA1c <= {hi}%",
        "Glycated hemoglobin (HbA1c) of {lo}-{hi}% at screening despite a stable dose of "
        "metformin for at least three months"}},
      {"nyha",
       {"NYHA class is above {t}", "Heart failure (NYHA class {set_and})",
        "History of congestive heart failure defined as New York Heart Association (NYHA) "
        "functional class {set_or} within the last six months"}},
      {"sbp",
       {"Systolic blood pressure > {v} mmHg", "SBP >= {v} mmHg at screening",
        "Uncontrolled hypertension defined as systolic blood pressure above {v} mmHg despite "
        "optimal treatment with antihypertensive drugs"}},
      {"qtc",
       {"QTc interval >= {v} ms", "QTcF > {v} ms at screening",
        "Prolonged corrected QT interval (QTc) above {v} ms on the screening electrocardiogram "
        "or a history of long QT syndrome"}},
      {"egfr",
       {"eGFR >= {v} mL/min/1.73m2",
        "Estimated glomerular filtration rate (eGFR) of at least {v} mL/min/1.73m2",
        "Adequate renal function defined as estimated glomerular filtration rate of at least "
        "{v} mL/min/1.73m2 at the screening visit"}},
      {"life_expectancy",
       {"Life expectancy \xe2\x89\xa5 {v} weeks", "Life expectancy of at least {v} weeks",
        "Estimated life expectancy of more than {v} weeks in the opinion of the investigator "
        "based on clinical and radiological assessment"}},
      {"pregnancy",
       {"Pregnant or breastfeeding", "Pregnancy or lactation",
        "Women of childbearing potential who are pregnant, breastfeeding, or planning to become "
        "pregnant during the study period or within six months"}},
      {"ecog",
       {"ECOG performance status of {set_or}", "ECOG performance status <= {v}",
        "Eastern Cooperative Oncology Group (ECOG) performance status of 0-{v} at screening and "
        "at the start of study treatment"}},
      {"hemoglobin",
       {"Hemoglobin >= {v} g/dL", "Hemoglobin level of at least {v} g/dL",
        "Adequate bone marrow function defined as hemoglobin of at least {v} g/dL without "
        "transfusion support within the previous two weeks"}},
  };
  return t;
}

constexpr std::array<std::string_view, 14> kSyllables{"za", "lo", "mi", "ve", "ta", "ri", "do",
                                                     "pe", "su", "ne", "ka", "bo", "fa", "gu"};
constexpr std::array<std::string_view, 3> kPhases{"Phase 1", "Phase 2", "Phase 3"};
constexpr std::array<std::string_view, 3> kForms{"tablets", "injection", "capsules"};

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

std::string join_labels(const std::vector<std::string>& labels, std::string_view last_sep) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out += (i + 1 == labels.size()) ? std::string(last_sep) : std::string(", ");
    out += labels[i];
  }
  return out;
}

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

// Realizes one attributed criterion and its gold relation.
Criterion realize(std::string_view attr, const DiseaseProfile& d, Polarity polarity, Rng& rng) {
  const auto& options = templates().at(attr);
  std::string s(options[rng.below(options.size())]);
  Relation gold;
  gold.attribute = std::string(attr);
  const auto num = [](double v) { return text::format_number(v); };

  if (attr == "age") {
    s = replace_all(replace_all(s, "{lo}", num(d.age_lo)), "{hi}", num(d.age_hi));
    gold.unit = "years";
    if (s.find("above") != std::string::npos) {
      gold.comparator = Comparator::kGreater;
      gold.numbers = {d.age_lo};
    } else if (s.find("older") != std::string::npos) {
      gold.comparator = Comparator::kGreaterEqual;
      gold.numbers = {d.age_lo};
    } else {
      gold.comparator = Comparator::kInRange;
      gold.numbers = {d.age_lo, d.age_hi};
    }
  } else if (attr == "bmi" || attr == "hba1c") {
    const bool bmi = attr == "bmi";
    const double lo = bmi ? d.bmi_lo : d.hba1c_lo, hi = bmi ? d.bmi_hi : d.hba1c_hi;
    s = replace_all(replace_all(s, "{lo}", num(lo)), "{hi}", num(hi));
    gold.comparator = Comparator::kInRange;
    gold.numbers = {lo, hi};
    gold.unit = bmi ? "kg/m2" : "%";
  } else if (attr == "gender") {
    const std::string g = d.gender == 1 ? "female" : d.gender == 2 ? "male" : "male or female";
    s = capitalize(replace_all(s, "{g}", g));
    gold.comparator = Comparator::kInSet;
    if (d.gender != 2) gold.labels.push_back("female");
    if (d.gender != 1) gold.labels.push_back("male");
  } else if (attr == "nyha") {
    std::vector<std::string> set;
    for (int i = d.nyha_above + 1; i < 4; ++i) set.emplace_back(kRoman[static_cast<std::size_t>(i)]);
    s = replace_all(s, "{t}", kRoman[static_cast<std::size_t>(d.nyha_above)]);
    s = replace_all(s, "{set_and}", join_labels(set, " and "));
    s = replace_all(s, "{set_or}", join_labels(set, " or "));
    gold.comparator = Comparator::kInSet;
    gold.labels = set;
  } else if (attr == "ecog") {
    std::vector<std::string> set;
    for (int i = 0; i <= d.ecog_max; ++i) set.push_back(std::to_string(i));
    s = replace_all(s, "{set_or}", join_labels(set, " or "));
    s = replace_all(s, "{v}", std::to_string(d.ecog_max));
    gold.comparator = Comparator::kInSet;
    gold.labels = set;
  } else if (attr == "pregnancy") {
    gold.comparator = Comparator::kBoolean;
  } else {
    double v = 0;
    if (attr == "sbp") {
      v = d.sbp;
      gold.unit = "mmHg";
    } else if (attr == "qtc") {
      v = d.qtc;
      gold.unit = "ms";
    } else if (attr == "egfr") {
      v = d.egfr;
      gold.unit = "mL/min/1.73m2";
    } else if (attr == "life_expectancy") {
      v = d.life_weeks;
      gold.unit = "weeks";
    } else if (attr == "hemoglobin") {
      v = d.hemoglobin;
      gold.unit = "g/dL";
    }
    s = replace_all(s, "{v}", num(v));
    if (s.find("more than") != std::string::npos || s.find("above") != std::string::npos ||
        s.find(" > ") != std::string::npos) {
      gold.comparator = Comparator::kGreater;
    } else {
      gold.comparator = Comparator::kGreaterEqual;
    }
    gold.numbers = {v};
  }

  Criterion c;
  c.text = s;
  c.polarity = polarity;
  c.attribute = std::string(attr);
  c.gold = {gold};
  return c;
}

// Weighted sampling without replacement (exponential keys), returns indices.
std::vector<std::size_t> weighted_pick(const std::vector<double>& weights, std::size_t n, Rng& rng) {
  std::vector<std::pair<double, std::size_t>> keys;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double u = std::max(rng.uniform(), 1e-300);
    keys.emplace_back(std::log(u) / weights[i], i);
  }
  std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(n, keys.size()); ++i) out.push_back(keys[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

std::string make_drug(Rng& rng, std::string_view stem, std::set<std::string>& used) {
  for (int attempt = 0;; ++attempt) {
    std::string name;
    const int n = 2 + static_cast<int>(rng.below(2));
    for (int i = 0; i < n; ++i) name += kSyllables[rng.below(kSyllables.size())];
    name += stem;
    if (attempt > 20) name += std::to_string(used.size());
    if (used.insert(name).second) return capitalize(name);
  }
}

}  // namespace

const std::vector<std::string>& required_attributes() {
  static const std::vector<std::string> tags{"age", "bmi", "gender", "hba1c", "nyha", "sbp",
                                             "qtc", "egfr", "life_expectancy", "pregnancy", "ecog",
                                             "hemoglobin"};
  return tags;
}

Corpus synthesize_corpus(const SynthConfig& config) {
  if (config.n_trials < 1) throw ConfigError("synthesize_corpus: n_trials must be >= 1");
  const std::set<std::string> lexicon(config.attribute_lexicon.begin(), config.attribute_lexicon.end());
  for (const auto& tag : required_attributes()) {
    if (!lexicon.count(tag)) throw ConfigError("synthesize_corpus: lexicon is missing attribute '" + tag + "'");
  }

  Rng rng(derive_seed(config.seed, "synth"));
  std::set<std::string> used_drugs;
  Corpus corpus;
  corpus.reserve(config.n_trials);
  for (std::size_t t = 0; t < config.n_trials; ++t) {
    const DiseaseProfile& d = kDiseases[rng.below(kDiseases.size())];
    TrialDocument trial;
    char id[16];
    std::snprintf(id, sizeof id, "SYN%05zu", t + 1);
    trial.trial_id = id;
    const std::string drug = make_drug(rng, d.drug_stem, used_drugs);
    trial.title = "A " + std::string(kPhases[rng.below(kPhases.size())]) + " Study of " + drug +
                  " in " + std::string(d.name);
    trial.disease = std::string(d.name);
    trial.treatment = drug + " " + std::string(kForms[rng.below(kForms.size())]);

    const std::size_t n_inc = static_cast<std::size_t>(rng.range(3, 8));
    const std::size_t n_exc = static_cast<std::size_t>(rng.range(2, 6));

    std::vector<double> inc_w(d.inc_weights.begin(), d.inc_weights.end());
    inc_w.insert(inc_w.end(), kIncFillers.size(), kFillerWeight);
    for (std::size_t idx : weighted_pick(inc_w, n_inc, rng)) {
      if (idx < kIncAttributes.size()) {
        trial.inclusion.push_back(realize(kIncAttributes[idx], d, Polarity::kInclusion, rng));
      } else {
        trial.inclusion.push_back({std::string(kIncFillers[idx - kIncAttributes.size()]),
                                   Polarity::kInclusion, std::nullopt, {}});
      }
    }
    std::vector<double> exc_w(d.exc_weights.begin(), d.exc_weights.end());
    exc_w.insert(exc_w.end(), kExcFillers.size(), kFillerWeight);
    for (std::size_t idx : weighted_pick(exc_w, n_exc, rng)) {
      if (idx < kExcAttributes.size()) {
        trial.exclusion.push_back(realize(kExcAttributes[idx], d, Polarity::kExclusion, rng));
      } else {
        std::string text = replace_all(std::string(kExcFillers[idx - kExcAttributes.size()]), "{drug}", drug);
        trial.exclusion.push_back({text, Polarity::kExclusion, std::nullopt, {}});
      }
    }
    corpus.push_back(std::move(trial));
  }
  return corpus;
}

}  // namespace critgen
