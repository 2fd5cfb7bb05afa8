#include "critgen/embedstore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "critgen/corpus.hpp"
#include "critgen/error.hpp"

namespace critgen {

using nlohmann::json;

std::vector<float> encode_tokens(const ModelState& model, const std::vector<TokenId>& ids) {
  if (ids.empty()) throw Error("cannot encode an empty token sequence");
  std::vector<TokenId> window(ids.begin(),
                              ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), model.config.context_window)));
  const Eigen::MatrixXf h = final_hidden(model, window);
  Eigen::VectorXd mean = h.cast<double>().colwise().mean().transpose();
  const double norm = mean.norm();
  if (norm > 0) mean /= norm;
  std::vector<float> out(static_cast<std::size_t>(mean.size()));
  for (Eigen::Index i = 0; i < mean.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(mean(i));
  return out;
}

TrialEmbedding encode_setup(const ModelState& model, const TrialSetup& setup, std::string trial_id) {
  if (setup.title.empty() && setup.disease.empty() && setup.treatment.empty()) throw Error("empty trial setup");
  return {encode_tokens(model, setup_tokens(model.vocab, setup)), std::move(trial_id), backbone_digest(model)};
}

KnowledgeStore::KnowledgeStore(std::size_t dim, std::string encoder_version)
    : dim_(dim), encoder_version_(std::move(encoder_version)) {}

void KnowledgeStore::upsert(StoreEntry entry) {
  if (entry.key.size() != dim_) {
    throw Error("store key has dimension " + std::to_string(entry.key.size()) + ", store expects " + std::to_string(dim_));
  }
  if (entry.trial_id.empty() || entry.value.instruction.empty() || entry.value.target.text.empty()) {
    throw Error("store entry needs a trial id, an instruction and a target");
  }
  // Values carry text and polarity only; the target is labeled by its instruction.
  for (auto& c : entry.value.chain) {
    c.attribute.reset();
    c.gold.clear();
  }
  entry.value.target.attribute = entry.value.instruction;
  entry.value.target.gold.clear();
  for (auto& e : entries_) {
    if (e.trial_id == entry.trial_id && e.value.target.text == entry.value.target.text &&
        e.value.target.polarity == entry.value.target.polarity) {
      entry.inserted = e.inserted;
      e = std::move(entry);
      return;
    }
  }
  entry.inserted = next_counter_++;
  entries_.push_back(std::move(entry));
}

std::size_t KnowledgeStore::remove(const std::string& trial_id) {
  const auto before = entries_.size();
  std::erase_if(entries_, [&](const StoreEntry& e) { return e.trial_id == trial_id; });
  return before - entries_.size();
}

std::vector<RetrievalHit> KnowledgeStore::retrieve(const std::vector<float>& query, std::size_t k,
                                                   const std::optional<std::string>& exclude_trial_id,
                                                   const std::optional<std::string>& instruction) const {
  if (k == 0) throw ConfigError("retrieve: k must be >= 1");
  if (query.size() != dim_) throw Error("query dimension does not match the store");
  double qn = 0;
  for (float v : query) qn += static_cast<double>(v) * v;
  qn = std::sqrt(qn);
  std::vector<RetrievalHit> hits;
  for (const auto& e : entries_) {
    if (exclude_trial_id && e.trial_id == *exclude_trial_id) continue;
    if (instruction && e.value.instruction != *instruction) continue;
    double dot = 0, kn = 0;
    for (std::size_t i = 0; i < dim_; ++i) {
      dot += static_cast<double>(e.key[i]) * query[i];
      kn += static_cast<double>(e.key[i]) * e.key[i];
    }
    const double denom = std::sqrt(kn) * qn;
    hits.push_back({&e, denom > 0 ? dot / denom : 0.0});
  }
  const auto better = [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.entry->inserted < b.entry->inserted;
  };
  const std::size_t n = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(), better);
  hits.resize(n);
  return hits;
}

void KnowledgeStore::rekey(const ModelState& model) {
  std::map<std::string, std::vector<float>> cache;
  for (auto& e : entries_) {
    auto it = cache.find(e.trial_id);
    if (it == cache.end()) it = cache.emplace(e.trial_id, encode_setup(model, e.setup).values).first;
    e.key = it->second;
  }
  dim_ = model.config.d_model;
  encoder_version_ = backbone_digest(model);
}

namespace {

json criterion_json(const Criterion& c) {
  return {{"text", c.text}, {"polarity", std::string(to_string(c.polarity))}};
}

Criterion criterion_from(const json& j) {
  return {j.at("text").get<std::string>(), polarity_from_string(j.at("polarity").get<std::string>()), std::nullopt, {}};
}

}  // namespace

void KnowledgeStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write store " + path.string());
  out << json{{"format", "critgen-store-1"},
              {"dim", dim_},
              {"encoder_version", encoder_version_},
              {"next_counter", next_counter_},
              {"entries", entries_.size()}}
             .dump()
      << '\n';
  for (const auto& e : entries_) {
    json chain = json::array();
    for (const auto& c : e.value.chain) chain.push_back(criterion_json(c));
    json key = json::array();
    for (float v : e.key) key.push_back(static_cast<double>(v));
    out << json{{"trial_id", e.trial_id},
                {"inserted", e.inserted},
                {"setup", {{"title", e.setup.title}, {"disease", e.setup.disease}, {"treatment", e.setup.treatment}}},
                {"key", key},
                {"instruction", e.value.instruction},
                {"chain", chain},
                {"target", criterion_json(e.value.target)}}
               .dump()
        << '\n';
  }
}

KnowledgeStore KnowledgeStore::load(const std::filesystem::path& path, const std::optional<std::string>& expected_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read store " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("store file is empty");
  KnowledgeStore s;
  std::size_t expected_entries = 0;
  try {
    const json h = json::parse(line);
    if (h.at("format") != "critgen-store-1") throw FormatError("unknown store format");
    s.dim_ = h.at("dim");
    s.encoder_version_ = h.at("encoder_version");
    s.next_counter_ = h.at("next_counter");
    expected_entries = h.at("entries");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      StoreEntry e;
      e.trial_id = j.at("trial_id");
      e.inserted = j.at("inserted");
      const auto& st = j.at("setup");
      e.setup = {st.at("title"), st.at("disease"), st.at("treatment")};
      for (const auto& v : j.at("key")) e.key.push_back(static_cast<float>(v.get<double>()));
      if (e.key.size() != s.dim_) throw FormatError("store key dimension mismatch for " + e.trial_id);
      e.value.instruction = j.at("instruction");
      for (const auto& c : j.at("chain")) e.value.chain.push_back(criterion_from(c));
      e.value.target = criterion_from(j.at("target"));
      e.value.target.attribute = e.value.instruction;
      s.entries_.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError("bad store file " + path.string() + ": " + e.what());
  }
  if (s.entries_.size() != expected_entries) throw FormatError("store file is truncated");
  if (expected_version && *expected_version != s.encoder_version_) {
    throw FormatError("store keys were built by encoder " + s.encoder_version_ + " but the model is " +
                      *expected_version + "; rebuild the store");
  }
  return s;
}

KnowledgeStore build_store(const std::vector<InstructionCriterionPair>& pairs, const ModelState& model) {
  KnowledgeStore store(model.config.d_model, backbone_digest(model));
  std::map<std::string, std::vector<float>> keys;
  for (const auto& p : pairs) {
    auto it = keys.find(p.trial_id);
    if (it == keys.end()) it = keys.emplace(p.trial_id, encode_setup(model, p.setup).values).first;
    StoreEntry e;
    e.trial_id = p.trial_id;
    e.setup = p.setup;
    e.key = it->second;
    e.value = {p.rationale_chain, p.instruction, p.target};
    store.upsert(std::move(e));
  }
  return store;
}

}  // namespace critgen
