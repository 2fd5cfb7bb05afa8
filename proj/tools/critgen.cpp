// critgen: one binary, one subcommand per pipeline stage. Every run writes
// config.resolved and manifest.json into the output directory.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "critgen/config.hpp"
#include "critgen/criteria_parser.hpp"
#include "critgen/error.hpp"
#include "critgen/generation.hpp"
#include "critgen/lifecycle.hpp"
#include "critgen/rng.hpp"

#ifndef CRITGEN_VERSION
#define CRITGEN_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace critgen;

namespace {

std::string kebab(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

// Files under `root` (or `root` itself) keyed by path relative to `base`.
void digest_tree(const fs::path& root, const fs::path& base, json& into, const std::set<fs::path>& skip = {}) {
  if (fs::is_regular_file(root)) {
    into[fs::relative(root, base).generic_string()] = sha256_file(root);
    return;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && !skip.count(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) into[fs::relative(f, base).generic_string()] = sha256_file(f);
}

class Run {
 public:
  Run(std::string command, RunConfig config) : command_(std::move(command)), c_(std::move(config)) {
    fs::create_directories(c_.out);
    out_ = fs::path(c_.out);
  }

  const RunConfig& config() const { return c_; }
  fs::path out(const std::string& name) const { return out_ / name; }

  const std::string& require(const std::string& key, const std::string& value) const {
    if (value.empty()) throw ConfigError(command_ + " requires --" + kebab(key));
    return value;
  }

  // Registers a file or directory read by the command.
  fs::path input(const std::string& key, const std::string& value) {
    const fs::path p = require(key, value);
    if (!fs::exists(p)) throw ConfigError(key + ": no such file " + p.string());
    inputs_.emplace_back(key, p);
    return p;
  }

  Corpus corpus() { return load_corpus(input("corpus", c_.corpus)); }

  // The named part of the split, or the whole corpus without one.
  Corpus part(const Corpus& corpus, const std::string& which) {
    if (c_.split.empty()) return corpus;
    const auto s = DatasetSplit::load(input("split", c_.split));
    return select_trials(corpus, which == "train" ? s.train : which == "valid" ? s.valid : s.test);
  }

  ModelState model() { return load_checkpoint(input("checkpoint", c_.checkpoint)); }

  CriteriaParser parser() {
    if (c_.schema.empty()) return CriteriaParser{};
    return CriteriaParser{AttributeSchema::load(input("schema", c_.schema))};
  }

  std::vector<std::string> instructions() {
    return c_.instructions.empty() ? parser().schema().tags() : c_.instructions;
  }

  void write_json(const std::string& name, const json& j) const {
    std::ofstream(out(name)) << j.dump(2) << '\n';
  }

  void finish(const std::string& config_file) {
    std::ofstream(out("config.resolved")) << render_config(c_);
    json manifest;
    manifest["command"] = command_;
    manifest["version"] = CRITGEN_VERSION;
    manifest["seed"] = c_.seed;
    manifest["config_file"] = "config.resolved";
    manifest["rerun"] = "critgen " + command_ + " --config " + (out_ / "config.resolved").generic_string();
    json in = json::object();
    if (!config_file.empty()) in["config"] = {{"path", config_file}, {"sha256", sha256_file(config_file)}};
    for (const auto& [key, path] : inputs_) {
      json files = json::object();
      digest_tree(path, fs::is_directory(path) ? path : path.parent_path(), files);
      in[key] = {{"path", path.generic_string()}, {"files", files}};
    }
    manifest["inputs"] = in;
    json outputs = json::object();
    digest_tree(out_, out_, outputs, {out_ / "manifest.json"});
    manifest["outputs"] = outputs;
    std::ofstream(out("manifest.json")) << manifest.dump(2) << '\n';
  }

 private:
  std::string command_;
  RunConfig c_;
  fs::path out_;
  std::vector<std::pair<std::string, fs::path>> inputs_;
};

json losses_json(const TrainResult& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) epochs.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"perplexity", e.perplexity}});
  return {{"steps", r.steps.size()}, {"epochs", epochs}, {"reached_target", r.reached_target}};
}

void cmd_synth(Run& run) {
  SynthConfig sc;
  sc.n_trials = run.config().n_trials;
  sc.seed = derive_seed(run.config().seed, "synth");
  const auto corpus = synthesize_corpus(sc);
  save_corpus(corpus, run.out("corpus.jsonl"));
  spdlog::info("synthesized {} trials", corpus.size());
}

void cmd_ingest(Run& run) {
  const auto corpus = ingest_registry(run.input("registry", run.config().registry));
  save_corpus(corpus, run.out("corpus.jsonl"));
  spdlog::info("ingested {} trials", corpus.size());
}

void cmd_split(Run& run) {
  const auto corpus = run.corpus();
  const auto s = split(corpus, split_ratios(run.config()), derive_seed(run.config().seed, "split"));
  s.save(run.out("split.json"));
  spdlog::info("split {} / {} / {}", s.train.size(), s.valid.size(), s.test.size());
}

void cmd_pretrain(Run& run) {
  const auto p = pipeline_config(run.config());
  const auto train = run.part(run.corpus(), "train");
  TrainResult log;
  TrainOptions opts;
  opts.log_path = run.out("pretrain_log.jsonl");
  const auto model = pretrain_model(train, p, run.instructions(), &log, opts);
  save_checkpoint(model, run.out("model"));
  run.write_json("pretrain.json", losses_json(log));
}

void cmd_store(Run& run) {
  const auto& c = run.config();
  const auto model = run.model();
  const auto train = run.part(run.corpus(), "train");
  const auto store = build_store(labeled_pairs(train, run.parser(), c.max_chain, model.registry.tags), model);
  store.save(run.out("store.bin"));
  spdlog::info("stored {} exemplars", store.size());
}

void cmd_finetune(Run& run) {
  const auto& c = run.config();
  const auto p = pipeline_config(c);
  auto model = run.model();
  const auto train = run.part(run.corpus(), "train");
  KnowledgeStore store = c.store.empty() ? KnowledgeStore(c.d_model, "") : KnowledgeStore::load(run.input("store", c.store));
  TrainOptions opts;
  opts.log_path = run.out("finetune_log.jsonl");
  const auto log = finetune_model(model, store, labeled_pairs(train, run.parser(), c.max_chain, model.registry.tags), p, opts);
  save_checkpoint(model, run.out("model"));
  store.save(run.out("store.bin"));
  run.write_json("finetune.json", losses_json(log));
}

void cmd_generate(Run& run) {
  const auto& c = run.config();
  const auto p = pipeline_config(c);
  const auto model = run.model();
  const auto corpus = run.corpus();
  run.require("trial_id", c.trial_id);
  const auto it = std::find_if(corpus.begin(), corpus.end(), [&](const TrialDocument& t) { return t.trial_id == c.trial_id; });
  if (it == corpus.end()) throw ConfigError("trial_id: no trial '" + c.trial_id + "' in the corpus");
  std::optional<KnowledgeStore> store;
  if (!c.store.empty()) store = KnowledgeStore::load(run.input("store", c.store), backbone_digest(model));
  const KnowledgeStore* sp = store ? &*store : nullptr;

  if (c.level == "trial") {
    const auto r = generate_trial(model, sp, it->trial_id, it->setup(), c.max_new_tokens, p.sequence);
    run.write_json("generation.json", to_json(r));
    return;
  }
  run.require("instruction", c.instruction);
  if (model.registry.index_of(c.instruction) < 0) throw ConfigError("instruction: '" + c.instruction + "' is not registered");
  const auto req = criteria_request(*it, c.instruction, run.parser(), c.prefix_tokens);
  const auto r = generate_criteria(model, sp, req, p.eval.generation, p.sequence);
  run.write_json("generation.json", to_json(r));
}

void cmd_evaluate(Run& run) {
  const auto& c = run.config();
  const auto p = pipeline_config(c);
  const auto model = run.model();
  const auto test = run.part(run.corpus(), "test");
  std::optional<KnowledgeStore> store;
  if (!c.store.empty()) store = KnowledgeStore::load(run.input("store", c.store), backbone_digest(model));
  const auto r = evaluate(model, store ? &*store : nullptr, test, p.eval, run.parser());
  run.write_json("eval.json", to_json(r));
  std::ofstream(run.out("eval.txt")) << format_table(r);
  std::cout << format_table(r);
}

void cmd_extend(Run& run) {
  const auto& c = run.config();
  const auto p = pipeline_config(c);
  if (c.new_instructions.empty()) throw ConfigError("extend requires --new-instructions");
  auto model = run.model();
  auto store = KnowledgeStore::load(run.input("store", c.store), backbone_digest(model));
  const auto train = run.part(run.corpus(), "train");
  extend_instructions(model, c.new_instructions);
  const auto pairs = labeled_pairs(train, run.parser(), c.max_chain, c.new_instructions);
  TrainOptions opts;
  opts.log_path = run.out("update_log.jsonl");
  const auto r = incremental_update(model, store, pairs, p, opts);
  save_checkpoint(model, run.out("model"));
  store.save(run.out("store.bin"));
  json diff = json::array();
  for (const auto& d : r.diff)
    diff.push_back({{"tensor", d.name}, {"changed_rows", d.changed_rows}, {"max_abs_change", d.max_abs_change}});
  run.write_json("update.json", {{"training", losses_json(r.training)}, {"diff", diff}, {"store_upserts", r.store_upserts}});
}

void cmd_continual(Run& run) {
  const auto& c = run.config();
  const auto corpus = run.corpus();
  const auto r = continual_harness(run.part(corpus, "train"), run.part(corpus, "test"), c.n_subsets, pipeline_config(c),
                                   derive_seed(c.seed, "continual"));
  run.write_json("continual.json", to_json(r));
}

void cmd_ablate(Run& run) {
  const auto corpus = run.corpus();
  const auto r = ablation_harness(run.part(corpus, "train"), run.part(corpus, "test"), pipeline_config(run.config()));
  run.write_json("ablation.json", to_json(r));
}

void cmd_gradcheck(Run& run) {
  const auto& c = run.config();
  const auto p = pipeline_config(c);
  const auto corpus = run.corpus();
  ModelState model = c.checkpoint.empty() ? init_model(p.model, Vocabulary::build(corpus_texts(corpus), c.min_frequency,
                                                                                   std::max(c.instruction_capacity, run.instructions().size())),
                                                       run.instructions())
                                          : run.model();
  auto data = pair_sequences(model, labeled_pairs(corpus, run.parser(), c.max_chain, model.registry.tags), nullptr, p.sequence);
  if (data.empty()) throw ConfigError("gradcheck: the corpus yields no labeled pairs");
  data.resize(std::min<std::size_t>(data.size(), 2));
  const auto r = grad_check(model, data, c.probes, derive_seed(c.seed, "gradcheck"), c.margin);
  run.write_json("gradcheck.json", {{"parameters", model.parameter_count()},
                                    {"probes", r.probes},
                                    {"excluded", r.excluded},
                                    {"max_relative_error", r.max_relative_error}});
  std::cout << "max relative error " << r.max_relative_error << " over " << r.probes << " probes\n";
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("critgen"));
  CLI::App app{"critgen: instruction-conditioned eligibility criteria generation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  app.add_option("--config", config_file, "flat key-value YAML config (default: $CRITGEN_CONFIG)");
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;
  for (const auto& key : config_keys()) options[key] = app.add_option("--" + kebab(key), flags[key]);

  const std::map<std::string, void (*)(Run&)> commands = {
      {"synth", cmd_synth},       {"ingest", cmd_ingest},     {"split", cmd_split},
      {"pretrain", cmd_pretrain}, {"finetune", cmd_finetune}, {"store", cmd_store},
      {"generate", cmd_generate}, {"evaluate", cmd_evaluate}, {"extend", cmd_extend},
      {"continual", cmd_continual}, {"ablate", cmd_ablate},   {"gradcheck", cmd_gradcheck},
  };
  for (const auto& [name, fn] : commands) app.add_subcommand(name);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (config_file.empty())
      if (const char* env = std::getenv("CRITGEN_CONFIG")) config_file = env;
    std::map<std::string, std::string> values;
    if (!config_file.empty()) values = read_config_file(config_file);
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) values[key] = flags[key];
    Run run(command, validate_config(values));
    commands.at(command)(run);
    run.finish(config_file);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "critgen " << command << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "critgen " << command << ": " << e.what() << '\n';
    return 2;
  }
}
