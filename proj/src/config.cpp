#include "critgen/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "critgen/error.hpp"
#include "critgen/rng.hpp"

namespace critgen {
namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "integer keys share one parser");

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void parse(const std::string& s, std::uint64_t& out) {
  auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("expected a non-negative integer");
}
void parse(const std::string& s, double& out) {
  auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(out))
    throw ConfigError("expected a finite number");
}
void parse(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") out = true;
  else if (s == "false" || s == "0" || s == "no" || s == "off") out = false;
  else throw ConfigError("expected true or false");
}
void parse(const std::string& s, std::string& out) { out = s; }
void parse(const std::string& s, std::vector<std::string>& out) { out = split_list(s); }

std::string show(std::uint64_t v) { return std::to_string(v); }
std::string show(double v) { return format_double(v); }
std::string show(bool v) { return v ? "true" : "false"; }
std::string show(const std::string& v) { return v; }
std::string show(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  bool list = false;
};

template <class T>
Field field(const char* key, T RunConfig::*member) {
  return {key, [member](RunConfig& c, const std::string& v) { parse(v, c.*member); },
          [member](const RunConfig& c) { return show(c.*member); },
          std::is_same_v<T, std::vector<std::string>>};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      field("profile", &RunConfig::profile),
      field("seed", &RunConfig::seed),
      field("threads", &RunConfig::threads),
      field("corpus", &RunConfig::corpus),
      field("split", &RunConfig::split),
      field("checkpoint", &RunConfig::checkpoint),
      field("store", &RunConfig::store),
      field("out", &RunConfig::out),
      field("schema", &RunConfig::schema),
      field("registry", &RunConfig::registry),
      field("n_trials", &RunConfig::n_trials),
      field("train_ratio", &RunConfig::train_ratio),
      field("valid_ratio", &RunConfig::valid_ratio),
      field("test_ratio", &RunConfig::test_ratio),
      field("n_layers", &RunConfig::n_layers),
      field("n_heads", &RunConfig::n_heads),
      field("d_model", &RunConfig::d_model),
      field("d_ff", &RunConfig::d_ff),
      field("context_window", &RunConfig::context_window),
      field("prompt_dim", &RunConfig::prompt_dim),
      field("prompt_hidden", &RunConfig::prompt_hidden),
      field("prompt_len", &RunConfig::prompt_len),
      field("instruction_capacity", &RunConfig::instruction_capacity),
      field("min_frequency", &RunConfig::min_frequency),
      field("instructions", &RunConfig::instructions),
      field("targets_per_trial", &RunConfig::targets_per_trial),
      field("exemplar_size", &RunConfig::exemplar_size),
      field("pretrain_batch_size", &RunConfig::pretrain_batch_size),
      field("pretrain_learning_rate", &RunConfig::pretrain_learning_rate),
      field("pretrain_weight_decay", &RunConfig::pretrain_weight_decay),
      field("pretrain_epochs", &RunConfig::pretrain_epochs),
      field("pretrain_target_ppl", &RunConfig::pretrain_target_ppl),
      field("finetune_batch_size", &RunConfig::finetune_batch_size),
      field("finetune_learning_rate", &RunConfig::finetune_learning_rate),
      field("finetune_weight_decay", &RunConfig::finetune_weight_decay),
      field("finetune_epochs", &RunConfig::finetune_epochs),
      field("margin", &RunConfig::margin),
      field("clip_norm", &RunConfig::clip_norm),
      field("max_chain", &RunConfig::max_chain),
      field("retrieval_k", &RunConfig::retrieval_k),
      field("top_k", &RunConfig::top_k),
      field("num_candidates", &RunConfig::num_candidates),
      field("num_clusters", &RunConfig::num_clusters),
      field("max_new_tokens", &RunConfig::max_new_tokens),
      field("prefix_tokens", &RunConfig::prefix_tokens),
      field("temperature", &RunConfig::temperature),
      field("msr", &RunConfig::msr),
      field("use_rag", &RunConfig::use_rag),
      field("use_prompt", &RunConfig::use_prompt),
      field("instruction_first", &RunConfig::instruction_first),
      field("level", &RunConfig::level),
      field("group_by", &RunConfig::group_by),
      field("instruction", &RunConfig::instruction),
      field("trial_id", &RunConfig::trial_id),
      field("new_instructions", &RunConfig::new_instructions),
      field("n_subsets", &RunConfig::n_subsets),
      field("probes", &RunConfig::probes),
  };
  return f;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

std::vector<std::string> check(const RunConfig& c) {
  std::vector<std::string> bad;
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  require(c.threads >= 1, "threads >= 1");
  require(c.n_trials >= 1, "n_trials >= 1");
  require(c.train_ratio >= 0 && c.valid_ratio >= 0 && c.test_ratio >= 0, "split ratios >= 0");
  require(std::abs(c.train_ratio + c.valid_ratio + c.test_ratio - 1.0) < 1e-9, "train_ratio + valid_ratio + test_ratio = 1");
  require(c.n_layers >= 1, "n_layers >= 1");
  require(c.n_heads >= 1 && c.d_model % std::max<std::size_t>(c.n_heads, 1) == 0, "d_model divisible by n_heads");
  require(c.d_ff >= 1, "d_ff >= 1");
  require(c.prompt_dim >= 1 && c.prompt_hidden >= 1, "prompt_dim, prompt_hidden >= 1");
  require(c.prompt_len >= 1, "prompt_len >= 1");
  require(c.context_window > c.prompt_len + c.max_new_tokens, "context_window > prompt_len + max_new_tokens");
  require(c.instruction_capacity >= 1, "instruction_capacity >= 1");
  require(c.instructions.size() <= c.instruction_capacity, "instructions fit instruction_capacity");
  require(c.min_frequency >= 1, "min_frequency >= 1");
  require(c.pretrain_batch_size >= 1 && c.finetune_batch_size >= 1, "batch sizes >= 1");
  require(c.pretrain_learning_rate >= 0 && c.finetune_learning_rate >= 0, "learning rates >= 0");
  require(c.pretrain_weight_decay >= 0 && c.finetune_weight_decay >= 0, "weight decays >= 0");
  require(c.pretrain_target_ppl == 0 || c.pretrain_target_ppl >= 1, "pretrain_target_ppl = 0 or >= 1");
  require(c.margin >= 0, "margin >= 0");
  require(c.clip_norm > 0, "clip_norm > 0");
  require(c.retrieval_k >= 1, "retrieval_k >= 1");
  require(c.top_k >= 1, "top_k >= 1");
  require(c.num_candidates >= 1, "num_candidates >= 1");
  require(c.num_clusters >= 1, "num_clusters >= 1");
  require(c.num_clusters <= c.num_candidates, "k_q <= Q (num_clusters <= num_candidates)");
  require(c.max_new_tokens >= 1, "max_new_tokens >= 1");
  require(c.temperature > 0, "temperature > 0");
  require(c.level == "criteria" || c.level == "trial", "level is criteria or trial");
  require(c.group_by == "none" || c.group_by == "disease", "group_by is none or disease");
  require(c.n_subsets >= 1, "n_subsets >= 1");
  require(c.probes >= 1, "probes >= 1");
  return bad;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

RunConfig default_config(const std::string& profile) {
  RunConfig c;
  if (profile == "desk") return c;
  if (profile != "paper") throw ConfigError("profile: unknown profile '" + profile + "' (desk or paper)");
  c.profile = "paper";
  // GPT-2 small backbone and the reported optimizer settings.
  c.n_layers = 12;
  c.n_heads = 12;
  c.d_model = 768;
  c.d_ff = 3072;
  c.context_window = 1024;
  c.prompt_dim = 768;
  c.prompt_hidden = 768;
  c.pretrain_batch_size = 64;
  c.pretrain_learning_rate = 5e-5;
  c.pretrain_weight_decay = 1e-4;
  c.pretrain_epochs = 5;
  c.finetune_batch_size = 16;
  c.finetune_learning_rate = 5e-5;
  c.finetune_weight_decay = 1e-5;
  c.finetune_epochs = 10;
  c.max_new_tokens = 128;
  return c;
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::BadFile&) {
    throw ConfigError("cannot read config file " + path.string());
  } catch (const YAML::Exception& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  std::map<std::string, std::string> out;
  if (root.IsNull()) return out;
  if (!root.IsMap()) throw FormatError("config " + path.string() + ": expected a key-value mapping");
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    const auto& v = kv.second;
    if (v.IsNull()) {
      out[key] = "";
    } else if (v.IsScalar()) {
      out[key] = v.as<std::string>();
    } else if (v.IsSequence()) {
      std::string joined;
      for (const auto& item : v) {
        if (!item.IsScalar()) throw FormatError("config key " + key + ": nested values are not supported");
        joined += (joined.empty() ? "" : ",") + item.as<std::string>();
      }
      out[key] = joined;
    } else {
      throw FormatError("config key " + key + ": nested values are not supported");
    }
  }
  return out;
}

RunConfig validate_config(const std::map<std::string, std::string>& values) {
  std::vector<std::string> bad;
  for (const auto& [key, value] : values)
    if (!find_field(key)) bad.push_back("unknown key '" + key + "'");

  std::string profile = "desk";
  if (auto it = values.find("profile"); it != values.end()) profile = trim(it->second);
  RunConfig c;
  try {
    c = default_config(profile);
  } catch (const ConfigError& e) {
    bad.push_back(e.what());
  }
  for (const auto& [key, value] : values) {
    const Field* f = find_field(key);
    if (!f || key == "profile") continue;
    try {
      f->set(c, trim(value));
    } catch (const ConfigError& e) {
      bad.push_back(key + ": " + e.what() + ", got '" + value + "'");
    }
  }
  for (auto& s : check(c)) bad.push_back(std::move(s));
  if (!bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw ConfigError(msg);
  }
  return c;
}

std::string render_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) {
    const std::string v = f.get(config);
    if (f.list) {
      out += f.key + ": [";
      auto items = split_list(v);
      for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + YAML::Dump(YAML::Node(items[i]));
      out += "]\n";
    } else {
      out += f.key + ": " + (v.empty() ? "\"\"" : YAML::Dump(YAML::Node(v))) + "\n";
    }
  }
  return out;
}

PipelineConfig pipeline_config(const RunConfig& c) {
  PipelineConfig p;
  p.model.n_layers = c.n_layers;
  p.model.n_heads = c.n_heads;
  p.model.d_model = c.d_model;
  p.model.d_ff = c.d_ff;
  p.model.context_window = c.context_window;
  p.model.prompt_dim = c.prompt_dim;
  p.model.prompt_hidden = c.prompt_hidden;
  p.model.prompt_len = c.prompt_len;
  p.model.seed = derive_seed(c.seed, "model");
  p.min_frequency = c.min_frequency;
  p.instruction_capacity = c.instruction_capacity;
  p.pretrain_policy.targets_per_trial = c.targets_per_trial;
  p.pretrain_policy.exemplar_size = c.exemplar_size;

  p.pretrain.batch_size = c.pretrain_batch_size;
  p.pretrain.learning_rate = c.pretrain_learning_rate;
  p.pretrain.weight_decay = c.pretrain_weight_decay;
  p.pretrain.epochs = c.pretrain_epochs;
  p.pretrain.target_ppl = c.pretrain_target_ppl;
  p.pretrain.margin = c.margin;
  p.pretrain.clip_norm = c.clip_norm;
  p.pretrain.seed = derive_seed(c.seed, "pretrain");

  p.finetune.batch_size = c.finetune_batch_size;
  p.finetune.learning_rate = c.finetune_learning_rate;
  p.finetune.weight_decay = c.finetune_weight_decay;
  p.finetune.epochs = c.finetune_epochs;
  p.finetune.margin = c.margin;
  p.finetune.clip_norm = c.clip_norm;
  p.finetune.seed = derive_seed(c.seed, "finetune");

  p.sequence.msr = c.msr;
  p.sequence.use_exemplar = c.use_rag;
  p.sequence.use_prompt = c.use_prompt;
  p.sequence.instruction_first = c.instruction_first;
  p.sequence.retrieval_k = c.retrieval_k;
  p.max_chain = c.max_chain;

  p.eval.level = eval_level_from_string(c.level);
  p.eval.group_by_disease = c.group_by == "disease";
  p.eval.generation.top_k = c.top_k;
  p.eval.generation.num_candidates = c.num_candidates;
  p.eval.generation.num_clusters = c.num_clusters;
  p.eval.generation.max_new_tokens = c.max_new_tokens;
  p.eval.generation.temperature = c.temperature;
  p.eval.generation.seed = derive_seed(c.seed, "generation");
  p.eval.sequence = p.sequence;
  p.eval.prefix_tokens = c.prefix_tokens;
  p.eval.max_chain = c.max_chain;
  return p;
}

SplitRatios split_ratios(const RunConfig& c) { return {c.train_ratio, c.valid_ratio, c.test_ratio}; }

}  // namespace critgen
