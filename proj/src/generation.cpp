#include "critgen/generation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "critgen/error.hpp"

namespace critgen {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool allowed(const std::vector<bool>* banned, std::size_t id) { return !banned || !(*banned)[id]; }

// -log softmax(logits)[id] over the allowed tokens.
double token_nll(const Eigen::VectorXf& logits, TokenId id, const std::vector<bool>* banned) {
  double mx = -kInf;
  for (Eigen::Index v = 0; v < logits.size(); ++v)
    if (allowed(banned, static_cast<std::size_t>(v))) mx = std::max(mx, static_cast<double>(logits[v]));
  double z = 0;
  for (Eigen::Index v = 0; v < logits.size(); ++v)
    if (allowed(banned, static_cast<std::size_t>(v))) z += std::exp(static_cast<double>(logits[v]) - mx);
  return mx + std::log(z) - static_cast<double>(logits[id]);
}

TokenId block_token(Polarity p) { return p == Polarity::kInclusion ? tok::kIncs : tok::kExcs; }
TokenId marker_token(Polarity p) { return p == Polarity::kInclusion ? tok::kInc : tok::kExc; }

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::vector<float> candidate_embedding(const ModelState& model, const std::vector<TokenId>& generated,
                                       const std::optional<Criterion>& target) {
  std::vector<TokenId> words;
  if (target) words = model.vocab.tokenize(target->text);
  if (words.empty()) {
    const TokenId first = model.vocab.first_word_id();
    for (TokenId id : generated)
      if (id >= first) words.push_back(id);
  }
  if (words.empty()) return std::vector<float>(model.config.d_model, 0.0f);
  if (words.size() > model.config.context_window) words.resize(model.config.context_window);
  return encode_tokens(model, words);
}

Decoder prime(const ModelState& model, const PromptSequence& prompt) {
  Decoder dec(model, prompt.instruction_index);
  for (TokenId id : prompt.input_ids) dec.feed(id);
  return dec;
}

std::vector<Exemplar> exemplars_for(const ModelState& model, const KnowledgeStore* store, const std::string& trial_id,
                                    const TrialSetup& setup, const std::optional<std::string>& instruction,
                                    const SequenceOptions& options) {
  if (!options.use_exemplar) return {};
  if (!store || store->size() == 0) {
    spdlog::info("no exemplar store entries; generating for {} without retrieval", trial_id);
    return {};
  }
  if (store->encoder_version() != backbone_digest(model)) {
    throw FormatError("store keys were built by encoder " + store->encoder_version() +
                      "; rekey the store for this model");
  }
  const auto query = encode_setup(model, setup).values;
  if (instruction) return retrieve_exemplars(*store, query, trial_id, *instruction, options.retrieval_k);
  std::vector<Exemplar> out;
  const auto hits = store->retrieve(query, options.retrieval_k, trial_id);
  for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
    auto chain = it->entry->value.chain;
    chain.push_back(it->entry->value.target);
    out.push_back({chain, std::nullopt, std::nullopt});
  }
  return out;
}

}  // namespace

void GenerationConfig::validate(std::size_t vocab_size) const {
  std::vector<std::string> bad;
  if (top_k < 1 || top_k > vocab_size) bad.push_back("1 <= top_k <= |V|");
  if (num_candidates < 1) bad.push_back("num_candidates >= 1");
  if (num_clusters < 1 || num_clusters > num_candidates) bad.push_back("1 <= num_clusters <= num_candidates");
  if (max_new_tokens < 1) bad.push_back("max_new_tokens >= 1");
  if (!(temperature > 0)) bad.push_back("temperature > 0");
  if (!bad.empty()) {
    std::string msg = "invalid generation config:";
    for (const auto& b : bad) msg += " [" + b + "]";
    throw ConfigError(msg);
  }
}

std::vector<std::pair<TokenId, double>> top_k_distribution(const Eigen::VectorXf& logits, std::size_t k,
                                                           double temperature, const std::vector<bool>* banned) {
  if (k < 1) throw ConfigError("top_k must be >= 1");
  std::vector<TokenId> ids;
  for (Eigen::Index v = 0; v < logits.size(); ++v)
    if (allowed(banned, static_cast<std::size_t>(v))) ids.push_back(static_cast<TokenId>(v));
  if (ids.empty()) throw Error("every token is banned");
  k = std::min(k, ids.size());
  // Order by logit, which is order by probability at any temperature > 0.
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](TokenId a, TokenId b) { return logits[a] != logits[b] ? logits[a] > logits[b] : a < b; });
  ids.resize(k);
  std::vector<std::pair<TokenId, double>> out;
  const double top = static_cast<double>(logits[ids[0]]) / temperature;
  double z = 0;
  for (TokenId id : ids) {
    const double w = std::exp(static_cast<double>(logits[id]) / temperature - top);
    out.push_back({id, w});
    z += w;
  }
  for (auto& [id, p] : out) p /= z;
  return out;
}

TokenId sample_step(const Eigen::VectorXf& logits, std::size_t k, double temperature, Rng& rng,
                    const std::vector<bool>* banned) {
  const auto dist = top_k_distribution(logits, k, temperature, banned);
  if (dist.size() == 1) return dist[0].first;
  double u = rng.uniform();
  for (const auto& [id, p] : dist) {
    if (u < p) return id;
    u -= p;
  }
  return dist.back().first;
}

std::vector<bool> prompt_only_tokens(const Vocabulary& vocab) {
  std::vector<bool> banned(vocab.size(), false);
  for (TokenId id : {tok::kPad, tok::kUnk, tok::kBos, tok::kTitle, tok::kDisease, tok::kTreatment, tok::kRef,
                     tok::kRefEnd, tok::kInstr, tok::kInstrEnd})
    banned[static_cast<std::size_t>(id)] = true;
  for (auto id = static_cast<std::size_t>(tok::kFixedCount); id < static_cast<std::size_t>(vocab.first_word_id()); ++id)
    banned[id] = true;
  return banned;
}

std::vector<Candidate> sample_candidates(const ModelState& model, const PromptSequence& prompt,
                                         const GenerationConfig& config, const std::optional<ForcedPrefix>& prefix) {
  config.validate(model.vocab.size());
  const std::size_t prompt_rows = prompt.instruction_index >= 0 ? model.config.prompt_len : 0;
  if (prompt_rows + prompt.input_ids.size() + config.max_new_tokens > model.config.context_window) {
    throw ConfigError("prompt of " + std::to_string(prompt.input_ids.size()) + " tokens leaves no room for " +
                      std::to_string(config.max_new_tokens) + " new tokens");
  }
  const auto banned = prompt_only_tokens(model.vocab);
  const Decoder base = prime(model, prompt);
  std::vector<Candidate> out(config.num_candidates);
  for (std::size_t q = 0; q < config.num_candidates; ++q) {
    Candidate& c = out[q];
    Decoder dec = base;
    Rng rng(derive_seed(config.seed, "candidate", q));
    std::deque<TokenId> pending;
    bool prefix_used = false;
    while (c.ids.size() < config.max_new_tokens) {
      TokenId id;
      if (!pending.empty()) {
        id = pending.front();
        pending.pop_front();
      } else {
        id = sample_step(dec.logits(), config.top_k, config.temperature, rng, &banned);
        if (prefix && !prefix_used && (id == tok::kIncs || id == tok::kExcs)) {
          id = block_token(prefix->polarity);
          prefix_used = true;
          pending.push_back(marker_token(prefix->polarity));
          pending.insert(pending.end(), prefix->words.begin(), prefix->words.end());
        } else {
          c.nll.push_back(token_nll(dec.logits(), id, &banned));
        }
      }
      c.ids.push_back(id);
      if (id == tok::kEos || dec.capacity_left() == 0) break;
      dec.feed(id);
    }
    const bool empty = c.ids.empty() || c.ids.front() == tok::kEos || c.nll.empty();
    double mean = 0;
    for (double v : c.nll) mean += v;
    c.ppl = empty ? kInf : std::exp(mean / static_cast<double>(c.nll.size()));
    const auto parsed = parse_output(model.vocab, c.ids);
    if (parsed.target) c.text = parsed.target->text;
    c.embedding = candidate_embedding(model, c.ids, parsed.target);
  }
  return out;
}

Clustering kmeans(const std::vector<std::vector<float>>& points, std::size_t k, std::uint64_t seed) {
  Clustering out;
  const std::size_t n = points.size();
  if (n == 0) return out;
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  std::vector<std::vector<double>> x;
  for (const auto& p : points) x.emplace_back(p.begin(), p.end());
  const std::set<std::vector<double>> distinct(x.begin(), x.end());
  k = std::min(k, distinct.size());
  out.k = k;

  Rng rng(seed);
  std::vector<std::vector<double>> centers{x[rng.below(n)]};
  std::vector<double> d2(n);
  while (centers.size() < k) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = kInf;
      for (const auto& c : centers) d2[i] = std::min(d2[i], sq_dist(x[i], c));
      total += d2[i];
    }
    double u = rng.uniform() * total;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0) continue;
      pick = i;
      if (u < d2[i]) break;
      u -= d2[i];
    }
    centers.push_back(x[pick]);
  }

  const auto assign = [&] {
    double wcss = 0;
    out.assignment.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      double best = kInf;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = sq_dist(x[i], centers[c]);
        if (d < best) {
          best = d;
          out.assignment[i] = static_cast<int>(c);
        }
      }
      wcss += best;
    }
    return wcss;
  };
  out.initial_wcss = assign();
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<std::vector<double>> sums(k, std::vector<double>(x[0].size(), 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(out.assignment[i]);
      ++counts[c];
      for (std::size_t j = 0; j < x[i].size(); ++j) sums[c][j] += x[i][j];
    }
    double shift = 0;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // an empty cluster keeps its centroid
      for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
      shift = std::max(shift, std::sqrt(sq_dist(sums[c], centers[c])));
      centers[c] = std::move(sums[c]);
    }
    out.final_wcss = assign();
    if (shift < 1e-6) break;
  }
  return out;
}

Clustering cluster_candidates(std::vector<Candidate>& candidates, std::size_t k, std::uint64_t seed) {
  std::vector<std::vector<float>> points;
  for (const auto& c : candidates) points.push_back(c.embedding);
  auto result = kmeans(points, k, seed);
  for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i].cluster = result.assignment[i];
  return result;
}

std::vector<std::size_t> select_candidates(const std::vector<Candidate>& candidates) {
  int clusters = 0;
  for (const auto& c : candidates) {
    if (c.cluster < 0) throw Error("select_candidates: candidates are not clustered");
    clusters = std::max(clusters, c.cluster + 1);
  }
  std::vector<std::size_t> out;
  for (int k = 0; k < clusters; ++k) {
    std::optional<std::size_t> best;
    bool any = false;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (candidates[i].cluster != k) continue;
      any = true;
      if (std::isinf(candidates[i].ppl)) continue;
      if (!best || candidates[i].ppl < candidates[*best].ppl) best = i;
    }
    if (best) {
      out.push_back(*best);
    } else if (any) {
      spdlog::warn("cluster {} holds only empty generations; dropped", k);
    }
  }
  return out;
}

std::optional<Criterion> CriteriaResult::best() const {
  std::optional<std::size_t> pick;
  for (std::size_t s = 0; s < selected.size(); ++s)
    if (!pick || candidates[selected[s]].ppl < candidates[selected[*pick]].ppl) pick = s;
  if (!pick) return std::nullopt;
  return outputs[*pick];
}

CriteriaResult generate_criteria(const ModelState& model, const KnowledgeStore* store, const CriteriaRequest& request,
                                 const GenerationConfig& config, const SequenceOptions& options) {
  config.validate(model.vocab.size());
  const int index = model.registry.index_of(request.instruction);
  if (index < 0) throw ConfigError("instruction '" + request.instruction + "' is not registered");
  CriteriaResult result{request.trial_id, request.instruction, {}, {}, {}, false};

  const auto exemplars = exemplars_for(model, store, request.trial_id, request.setup, request.instruction, options);
  result.used_exemplar = !exemplars.empty();
  const std::size_t prompt_rows = options.use_prompt ? model.config.prompt_len : 0;
  if (prompt_rows + config.max_new_tokens >= model.config.context_window)
    throw ConfigError("max_new_tokens leaves no room for the prompt");
  PromptOptions po;
  po.instruction_first = options.instruction_first;
  po.max_input_tokens = model.config.context_window - prompt_rows - config.max_new_tokens;
  auto prompt = assemble_prompt(model.vocab, request.setup, exemplars, request.instruction, po);
  prompt.instruction_index = options.use_prompt ? index : -1;

  std::optional<ForcedPrefix> prefix;
  if (request.gold && request.prefix_tokens > 0) {
    auto words = model.vocab.tokenize(request.gold->text);
    if (words.size() > request.prefix_tokens) words.resize(request.prefix_tokens);
    prefix = ForcedPrefix{request.gold->polarity, std::move(words)};
  }
  result.candidates = sample_candidates(model, prompt, config, prefix);
  cluster_candidates(result.candidates, config.num_clusters, derive_seed(config.seed, "kmeans"));
  result.selected = select_candidates(result.candidates);
  for (std::size_t i : result.selected) {
    const auto parsed = parse_output(model.vocab, result.candidates[i].ids);
    result.outputs.push_back(parsed.target.value_or(Criterion{}));
  }
  return result;
}

TrialResult generate_trial(const ModelState& model, const KnowledgeStore* store, const std::string& trial_id,
                           const TrialSetup& setup, std::size_t max_new_tokens, const SequenceOptions& options) {
  const std::size_t window = model.config.context_window;
  max_new_tokens = std::min(max_new_tokens, window / 2);
  if (max_new_tokens == 0) throw ConfigError("max_new_tokens must be >= 1");
  const auto exemplars = exemplars_for(model, store, trial_id, setup, std::nullopt, options);
  PromptOptions po;
  po.max_input_tokens = window - max_new_tokens;
  const auto prompt = assemble_prompt(model.vocab, setup, exemplars, std::nullopt, po);

  const auto banned = prompt_only_tokens(model.vocab);
  Decoder dec = prime(model, prompt);
  Rng unused(0);
  TrialResult out{trial_id, {}, {}, {}};
  while (out.ids.size() < max_new_tokens) {
    const TokenId id = sample_step(dec.logits(), 1, 1.0, unused, &banned);
    out.ids.push_back(id);
    if (id == tok::kEos || dec.capacity_left() == 0) break;
    dec.feed(id);
  }
  const auto parsed = parse_output(model.vocab, out.ids);
  auto all = parsed.rationale;
  if (parsed.target) all.push_back(*parsed.target);
  for (auto& c : all) (c.polarity == Polarity::kInclusion ? out.inclusion : out.exclusion).push_back(std::move(c));
  return out;
}

nlohmann::json to_json(const CriteriaResult& result) {
  nlohmann::json candidates = nlohmann::json::array();
  for (const auto& c : result.candidates) {
    candidates.push_back({{"text", c.text},
                          {"ppl", std::isinf(c.ppl) ? nlohmann::json(nullptr) : nlohmann::json(c.ppl)},
                          {"cluster", c.cluster}});
  }
  nlohmann::json selected = nlohmann::json::array();
  for (std::size_t s = 0; s < result.selected.size(); ++s) {
    selected.push_back({{"candidate", result.selected[s]},
                        {"text", result.outputs[s].text},
                        {"polarity", to_string(result.outputs[s].polarity)},
                        {"ppl", result.candidates[result.selected[s]].ppl}});
  }
  return {{"trial_id", result.trial_id},
          {"instruction", result.instruction},
          {"used_exemplar", result.used_exemplar},
          {"candidates", candidates},
          {"selected", selected}};
}

nlohmann::json to_json(const TrialResult& result) {
  nlohmann::json inc = nlohmann::json::array(), exc = nlohmann::json::array();
  for (const auto& c : result.inclusion) inc.push_back(c.text);
  for (const auto& c : result.exclusion) exc.push_back(c.text);
  return {{"trial_id", result.trial_id}, {"inclusion", inc}, {"exclusion", exc}};
}

}  // namespace critgen
