#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "critgen/textproto.hpp"

namespace critgen {

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t context_window = 256;
  std::size_t vocab_size = 0;  // taken from the vocabulary at init
  std::size_t prompt_dim = 64;      // d' of the instruction embedding table
  std::size_t prompt_hidden = 128;  // hidden width of the prompt MLP
  std::size_t prompt_len = 1;       // vectors per instruction
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Rows [begin, end) of a tensor receive updates; everything else is frozen.
struct RowRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool empty() const { return begin >= end; }
  bool contains(std::size_t r) const { return r >= begin && r < end; }
  bool operator==(const RowRange&) const = default;
};

// Parameter storage aligned for Eigen's vector paths, so reductions do not
// change their summation order with the allocation address.
template <typename T>
using AlignedBuffer = std::vector<T, Eigen::aligned_allocator<T>>;

struct Tensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  AlignedBuffer<float> data;
  RowRange trainable;  // freeze mask entry

  std::size_t size() const { return rows * cols; }
  float* row(std::size_t r) { return data.data() + r * cols; }
  const float* row(std::size_t r) const { return data.data() + r * cols; }
  bool operator==(const Tensor&) const = default;
};

struct InstructionRegistry {
  std::vector<std::string> tags;
  std::size_t frozen_prefix_len = 0;  // tags carried over from earlier checkpoints

  int index_of(std::string_view tag) const;
  bool operator==(const InstructionRegistry&) const = default;
};

// Tensor positions inside ModelState::tensors.
struct Layout {
  std::size_t n_layers = 0;
  static constexpr std::size_t kTok = 0;
  static constexpr std::size_t kPos = 1;
  static constexpr std::size_t kPerLayer = 12;
  enum LayerSlot : std::size_t { kLn1G, kLn1B, kWqkv, kBqkv, kWo, kBo, kLn2G, kLn2B, kW1, kB1, kW2, kB2 };

  explicit Layout(std::size_t layers = 0) : n_layers(layers) {}
  std::size_t layer(std::size_t l, LayerSlot s) const { return 2 + l * kPerLayer + s; }
  std::size_t lnf_g() const { return 2 + n_layers * kPerLayer; }
  std::size_t lnf_b() const { return lnf_g() + 1; }
  std::size_t prompt_table() const { return lnf_g() + 2; }
  std::size_t prompt_w1() const { return prompt_table() + 1; }
  std::size_t prompt_b1() const { return prompt_table() + 2; }
  std::size_t prompt_w2() const { return prompt_table() + 3; }
  std::size_t prompt_b2() const { return prompt_table() + 4; }
  std::size_t prompt_pos() const { return prompt_table() + 5; }  // present only when prompt_len > 1
  std::size_t backbone_end() const { return prompt_table(); }
};

struct ModelState {
  ModelConfig config;
  Vocabulary vocab;
  InstructionRegistry registry;
  std::vector<Tensor> tensors;

  Layout layout() const { return Layout(config.n_layers); }
  Tensor& tensor(std::string_view name);
  const Tensor& tensor(std::string_view name) const;
  std::size_t parameter_count() const;
  void set_all_trainable();
  void freeze_all();
  bool operator==(const ModelState&) const = default;
};

// Builds every tensor deterministically from config.seed; registers `instructions`
// in both the vocabulary and the prompt table. All parameters trainable.
ModelState init_model(const ModelConfig& config, Vocabulary vocab, const std::vector<std::string>& instructions);

// Fresh values for row `row` of the instruction table (seeded per row, so
// extension is independent of how many rows already exist).
void init_prompt_row(const ModelConfig& config, std::size_t row, float* out);

// h_p for instruction i: P x d.
Eigen::MatrixXf embed_instruction(const ModelState& state, std::size_t i);

struct ForwardOptions {
  bool use_prompt = true;
  // Blocks attention from text positions to prompt positions.
  bool ablate_prompt_attention = false;
};

// Logits for every position (prompt rows included): (P*use_prompt + n) x V.
Eigen::MatrixXf forward_logits(const ModelState& state, const PromptSequence& seq, const ForwardOptions& options = {});

// Post-final-norm hidden states for a token sequence without prompt: n x d.
Eigen::MatrixXf final_hidden(const ModelState& state, const std::vector<TokenId>& ids);

// Softmax cross-entropy at masked rows (log-sum-exp). Throws on an empty mask.
std::vector<double> token_nll(const Eigen::MatrixXf& logits, const std::vector<TokenId>& targets,
                              const std::vector<bool>& mask);

// FNV-1a digest of all backbone tensors (hex).
std::string backbone_digest(const ModelState& state);

void save_checkpoint(const ModelState& state, const std::filesystem::path& dir);
ModelState load_checkpoint(const std::filesystem::path& dir);

// Incremental decoder with a key/value cache; cheap to copy for branching.
class Decoder {
 public:
  // instruction_index < 0 decodes without a neural prompt.
  Decoder(const ModelState& state, int instruction_index);

  void feed(TokenId id);
  // Next-token logits after the last fed token.
  const Eigen::VectorXf& logits() const { return logits_; }
  std::size_t text_length() const { return text_len_; }
  std::size_t capacity_left() const;

 private:
  void push_row(Eigen::VectorXf x);

  const ModelState* state_;
  std::size_t rows_ = 0;
  std::size_t text_len_ = 0;
  std::vector<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> k_, v_;
  Eigen::VectorXf logits_;
};

}  // namespace critgen
