#include "critgen/lifecycle.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/ranges.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "critgen/error.hpp"
#include "critgen/rng.hpp"

namespace critgen {

namespace {

std::vector<InstructionCriterionPair> pairs_for(const std::vector<InstructionCriterionPair>& pairs,
                                                const std::set<std::string>& tags) {
  std::vector<InstructionCriterionPair> out;
  for (const auto& p : pairs)
    if (tags.count(p.instruction)) out.push_back(p);
  return out;
}

void add_curve(ContinualResult& out, const std::string& variant, std::size_t step, const EvalResult& eval) {
  // Pooled over both polarities: rebuild the totals from the items.
  std::vector<const EvalItem*> items;
  for (const auto& it : eval.items) items.push_back(&it);
  ClinicalAccuracy acc;
  double b1 = 0, follows = 0;
  for (const auto* it : items) {
    const auto c = compare_sets(it->pred, it->gold);
    acc.tp += c.tp;
    acc.fp += c.fp;
    acc.fn += c.fn;
    b1 += it->bleu1;
    follows += it->follows_instruction;
  }
  const double p = acc.tp + acc.fp ? static_cast<double>(acc.tp) / static_cast<double>(acc.tp + acc.fp) : 0.0;
  const double r = acc.tp + acc.fn ? static_cast<double>(acc.tp) / static_cast<double>(acc.tp + acc.fn) : 0.0;
  const double n = items.empty() ? 1.0 : static_cast<double>(items.size());
  out.curve.push_back({variant, step, "P", p});
  out.curve.push_back({variant, step, "R", r});
  out.curve.push_back({variant, step, "F1", p + r > 0 ? 2 * p * r / (p + r) : 0.0});
  out.curve.push_back({variant, step, "B1", b1 / n});
  out.curve.push_back({variant, step, "instruction_accuracy", follows / n});
}

EvalResult evaluate_on(const ModelState& model, const KnowledgeStore& store, const Corpus& test,
                       const std::set<std::string>& tags, const PipelineConfig& config) {
  // Restrict the labeled criteria to the seen tags by blanking the others.
  const CriteriaParser parser;
  Corpus filtered = test;
  for (auto& t : filtered) {
    for (auto* list : {&t.inclusion, &t.exclusion}) {
      std::vector<Criterion> keep;
      for (const auto& c : *list) {
        const auto rel = parser.parse(c.text);
        if (!rel.empty() && tags.count(rel.begin()->attribute)) keep.push_back(c);
      }
      *list = std::move(keep);
    }
  }
  EvalConfig ec = config.eval;
  ec.level = EvalLevel::kCriteria;
  ec.sequence = config.sequence;
  return evaluate(model, &store, filtered, ec, parser);
}

}  // namespace

std::vector<InstructionCriterionPair> labeled_pairs(const Corpus& corpus, const CriteriaParser& parser,
                                                    std::size_t max_chain, const std::vector<std::string>& tags) {
  auto extraction = extract_pairs(corpus, parser, max_chain);
  const std::set<std::string> keep(tags.begin(), tags.end());
  std::vector<InstructionCriterionPair> out;
  for (auto& p : extraction.pairs)
    if (keep.count(p.instruction)) out.push_back(std::move(p));
  return out;
}

CriteriaRequest criteria_request(const TrialDocument& trial, const std::string& instruction,
                                 const CriteriaParser& parser, std::size_t prefix_tokens) {
  CriteriaRequest req;
  req.trial_id = trial.trial_id;
  req.setup = trial.setup();
  req.instruction = instruction;
  req.prefix_tokens = prefix_tokens;
  for (const auto* block : {&trial.inclusion, &trial.exclusion})
    for (const auto& c : *block)
      for (const auto& rel : parser.parse(c.text))
        if (rel.attribute == instruction) {
          req.gold = c;
          return req;
        }
  return req;
}

ModelState pretrain_model(const Corpus& corpus, const PipelineConfig& config,
                          const std::vector<std::string>& instructions, TrainResult* log,
                          const TrainOptions& options) {
  if (corpus.empty()) throw ConfigError("training corpus is empty");
  auto vocab = Vocabulary::build(corpus_texts(corpus), config.min_frequency, std::max(config.instruction_capacity, instructions.size()));
  auto model = init_model(config.model, std::move(vocab), instructions);
  const auto samples = build_pretrain_set(corpus, config.pretrain.seed, config.pretrain_policy);
  if (samples.empty()) throw ConfigError("no pretraining samples (every trial has fewer than 2 criteria)");
  auto seq_options = config.sequence;
  seq_options.use_prompt = false;
  const auto data = pretrain_sequences(model, samples, seq_options);
  auto result = train(model, data, config.pretrain, options);
  if (log) *log = std::move(result);
  return model;
}

TrainResult finetune_model(ModelState& model, KnowledgeStore& store, const std::vector<InstructionCriterionPair>& pairs,
                           const PipelineConfig& config, const TrainOptions& options) {
  if (pairs.empty()) throw ConfigError("no labeled pairs to finetune on");
  if (store.size() == 0) store = build_store(pairs, model);
  if (store.encoder_version() != backbone_digest(model)) store.rekey(model);
  const auto data = pair_sequences(model, pairs, config.sequence.use_exemplar ? &store : nullptr, config.sequence);
  TrainOptions opts = options;
  opts.contrastive = true;
  auto result = train(model, data, config.finetune, opts);
  store.rekey(model);
  return result;
}

void extend_instructions(ModelState& state, const std::vector<std::string>& new_tags) {
  if (new_tags.empty()) return;
  std::set<std::string> seen;
  for (const auto& tag : new_tags) {
    if (state.registry.index_of(tag) >= 0 || !seen.insert(tag).second)
      throw ConfigError("duplicate instruction tag '" + tag + "'");
  }
  if (state.vocab.instructions().size() + new_tags.size() > state.vocab.instruction_capacity()) {
    throw ConfigError("instruction capacity " + std::to_string(state.vocab.instruction_capacity()) +
                      " exhausted; rebuild the vocabulary with a larger capacity");
  }
  for (const auto& tag : new_tags) state.vocab.register_instruction(tag);

  auto& table = state.tensor("prompt.E_r");
  const std::size_t old_rows = table.rows;
  table.rows += new_tags.size();
  table.data.resize(table.rows * table.cols);
  for (std::size_t r = old_rows; r < table.rows; ++r) init_prompt_row(state.config, r, table.row(r));

  state.registry.frozen_prefix_len = state.registry.tags.size();
  state.registry.tags.insert(state.registry.tags.end(), new_tags.begin(), new_tags.end());
  apply_incremental_mask(state);
}

void apply_incremental_mask(ModelState& state) {
  state.freeze_all();
  const std::size_t first = state.registry.frozen_prefix_len, last = state.registry.tags.size();
  state.tensor("prompt.E_r").trainable = {first, last};
  if (first < last) {
    const auto lo = static_cast<std::size_t>(*state.vocab.instruction_token(state.registry.tags[first]));
    const auto hi = static_cast<std::size_t>(*state.vocab.instruction_token(state.registry.tags[last - 1])) + 1;
    if (hi - lo != last - first) throw Error("instruction tokens of the new tags are not contiguous");
    state.tensor("tok_emb").trainable = {lo, hi};
  }
}

std::vector<TensorDiff> diff_tensors(const ModelState& before, const ModelState& after) {
  std::vector<TensorDiff> out;
  for (const auto& t : after.tensors) {
    TensorDiff d{t.name, 0, 0.0};
    const Tensor* old = nullptr;
    for (const auto& b : before.tensors)
      if (b.name == t.name) old = &b;
    for (std::size_t r = 0; r < t.rows; ++r) {
      bool changed = !old || r >= old->rows || old->cols != t.cols;
      for (std::size_t c = 0; !changed && c < t.cols; ++c) changed = old->row(r)[c] != t.row(r)[c];
      if (!changed) continue;
      ++d.changed_rows;
      if (old && r < old->rows && old->cols == t.cols)
        for (std::size_t c = 0; c < t.cols; ++c)
          d.max_abs_change = std::max(d.max_abs_change, std::abs(static_cast<double>(t.row(r)[c]) - old->row(r)[c]));
    }
    out.push_back(d);
  }
  return out;
}

UpdateResult incremental_update(ModelState& state, KnowledgeStore& store,
                                const std::vector<InstructionCriterionPair>& new_pairs, const PipelineConfig& config,
                                const TrainOptions& options) {
  if (new_pairs.empty()) throw ConfigError("no pairs for the incremental update");
  for (const auto& p : new_pairs) {
    const int i = state.registry.index_of(p.instruction);
    if (i < 0) throw ConfigError("instruction '" + p.instruction + "' is not registered");
    if (static_cast<std::size_t>(i) < state.registry.frozen_prefix_len) {
      throw ConfigError("instruction '" + p.instruction +
                        "' belongs to the frozen prefix; incremental updates only train new instructions");
    }
  }
  const ModelState before = state;
  apply_incremental_mask(state);
  UpdateResult result;
  const auto fresh = build_store(new_pairs, state);
  if (store.size() == 0) store = KnowledgeStore(fresh.dim(), fresh.encoder_version());
  for (const auto& e : fresh.entries()) store.upsert(e);
  result.store_upserts = fresh.size();
  const auto data = pair_sequences(state, new_pairs, config.sequence.use_exemplar ? &store : nullptr, config.sequence);
  TrainOptions opts = options;
  opts.contrastive = true;
  result.training = train(state, data, config.finetune, opts);
  result.diff = diff_tensors(before, state);
  return result;
}

std::vector<std::vector<std::string>> partition_instructions(std::vector<std::string> tags, std::size_t n_subsets,
                                                             std::uint64_t seed) {
  std::sort(tags.begin(), tags.end());
  tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
  if (n_subsets < 1) throw ConfigError("n_subsets must be >= 1");
  if (tags.size() < n_subsets) {
    throw ConfigError(std::to_string(tags.size()) + " instruction types cannot fill " + std::to_string(n_subsets) +
                      " subsets");
  }
  Rng rng(derive_seed(seed, "partition"));
  rng.shuffle(tags);
  std::vector<std::vector<std::string>> out(n_subsets);
  for (std::size_t i = 0; i < tags.size(); ++i) out[i % n_subsets].push_back(tags[i]);
  for (auto& s : out) std::sort(s.begin(), s.end());
  return out;
}

ContinualResult continual_harness(const Corpus& train, const Corpus& test, std::size_t n_subsets,
                                  const PipelineConfig& config, std::uint64_t seed) {
  const CriteriaParser parser;
  const auto pairs = extract_pairs(train, parser, config.max_chain).pairs;
  std::vector<std::string> tags;
  for (const auto& p : pairs) tags.push_back(p.instruction);
  ContinualResult out;
  out.subsets = partition_instructions(tags, n_subsets, seed);

  const ModelState base = pretrain_model(train, config, {});
  ModelState incremental = base;
  KnowledgeStore inc_store;
  std::set<std::string> seen;
  std::vector<std::string> seen_order;
  for (std::size_t k = 0; k < out.subsets.size(); ++k) {
    const auto& subset = out.subsets[k];
    seen.insert(subset.begin(), subset.end());
    seen_order.insert(seen_order.end(), subset.begin(), subset.end());
    spdlog::info("continual step {}: revealing {}", k + 1, fmt::join(subset, ","));

    // Re-train: every tag seen so far, from the pretrained backbone.
    ModelState retrain = base;
    extend_instructions(retrain, seen_order);
    retrain.set_all_trainable();
    KnowledgeStore store;
    finetune_model(retrain, store, pairs_for(pairs, seen), config);
    out.trained_on["retrain"].push_back(seen_order);
    add_curve(out, "retrain", k + 1, evaluate_on(retrain, store, test, seen, config));

    // Incremental: the first subset trains everything, later ones only their rows.
    extend_instructions(incremental, subset);
    const std::set<std::string> current(subset.begin(), subset.end());
    if (k == 0) {
      incremental.set_all_trainable();
      finetune_model(incremental, inc_store, pairs_for(pairs, current), config);
    } else {
      incremental_update(incremental, inc_store, pairs_for(pairs, current), config);
    }
    out.trained_on["incremental"].push_back(subset);
    add_curve(out, "incremental", k + 1, evaluate_on(incremental, inc_store, test, seen, config));
  }
  return out;
}

std::vector<AblationRun> ablation_harness(const Corpus& train, const Corpus& test, const PipelineConfig& config) {
  const CriteriaParser parser;
  const auto pairs = extract_pairs(train, parser, config.max_chain).pairs;
  std::vector<std::string> tags;
  for (const auto& p : pairs)
    if (std::find(tags.begin(), tags.end(), p.instruction) == tags.end()) tags.push_back(p.instruction);
  std::sort(tags.begin(), tags.end());

  std::vector<AblationRun> out;
  for (const std::string variant : {"full", "no_msr", "no_rag", "no_prompt"}) {
    PipelineConfig c = config;
    if (variant == "no_msr") c.sequence.msr = false;
    if (variant == "no_rag") c.sequence.use_exemplar = false;
    if (variant == "no_prompt") c.sequence.use_prompt = false;
    spdlog::info("ablation variant {}", variant);
    auto model = pretrain_model(train, c, tags);
    KnowledgeStore store;
    finetune_model(model, store, pairs, c);
    EvalConfig ec = c.eval;
    ec.sequence = c.sequence;
    out.push_back({variant, evaluate(model, c.sequence.use_exemplar ? &store : nullptr, test, ec, parser)});
  }
  return out;
}

nlohmann::json to_json(const ContinualResult& result) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : result.curve)
    curve.push_back({{"variant", p.variant}, {"step", p.step}, {"metric", p.metric}, {"value", p.value}});
  return {{"subsets", result.subsets}, {"trained_on", result.trained_on}, {"curve", curve}};
}

nlohmann::json to_json(const std::vector<AblationRun>& runs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : runs) out.push_back({{"variant", r.variant}, {"evaluation", to_json(r.result)}});
  return out;
}

}  // namespace critgen
