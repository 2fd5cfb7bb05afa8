#pragma once

// Run configuration: a flat key/value YAML file, overridden by --kebab-case
// flags, validated as a whole.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "critgen/lifecycle.hpp"

namespace critgen {

struct RunConfig {
  std::string profile = "desk";  // desk | paper
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  std::string corpus, split, checkpoint, store, out = "out", schema, registry;

  std::size_t n_trials = 300;
  double train_ratio = 0.72, valid_ratio = 0.08, test_ratio = 0.20;

  std::size_t n_layers = 2, n_heads = 4, d_model = 128, d_ff = 512, context_window = 256;
  std::size_t prompt_dim = 64, prompt_hidden = 128, prompt_len = 1, instruction_capacity = 32, min_frequency = 1;
  std::vector<std::string> instructions;  // empty: every schema tag

  std::size_t targets_per_trial = 2, exemplar_size = 2;
  std::size_t pretrain_batch_size = 16, pretrain_epochs = 20;
  double pretrain_learning_rate = 2e-3, pretrain_weight_decay = 1e-4, pretrain_target_ppl = 0.0;
  std::size_t finetune_batch_size = 16, finetune_epochs = 12;
  double finetune_learning_rate = 1e-3, finetune_weight_decay = 1e-5;
  double margin = 0.5, clip_norm = 1.0;
  std::size_t max_chain = 2, retrieval_k = 1;

  std::size_t top_k = 50, num_candidates = 20, num_clusters = 5, max_new_tokens = 64, prefix_tokens = 3;
  double temperature = 1.0;
  bool msr = true, use_rag = true, use_prompt = true, instruction_first = false;

  std::string level = "criteria";  // criteria | trial
  std::string group_by = "none";   // none | disease

  std::string instruction, trial_id;
  std::vector<std::string> new_instructions;
  std::size_t n_subsets = 4, probes = 50;
};

// Every known key, in the order config.resolved lists them.
const std::vector<std::string>& config_keys();

// Profile defaults ("desk" or "paper").
RunConfig default_config(const std::string& profile = "desk");

// Flat mapping; sequences are joined with commas. Throws FormatError.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

// Defaults of the selected profile, then `values`. Unknown keys and every
// failed check are reported together in one ConfigError.
RunConfig validate_config(const std::map<std::string, std::string>& values);

// Re-readable YAML with every key.
std::string render_config(const RunConfig& config);

// Per-module seeds derive from the global seed.
PipelineConfig pipeline_config(const RunConfig& config);
SplitRatios split_ratios(const RunConfig& config);

}  // namespace critgen
