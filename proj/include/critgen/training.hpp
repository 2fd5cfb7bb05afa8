#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "critgen/engine.hpp"
#include "critgen/model.hpp"
#include "critgen/textproto.hpp"

namespace critgen {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  double margin = 0.5;  // rho of the contrastive hinge
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Stop once the full-pass training perplexity reaches this (0 = off).
  double target_ppl = 0.0;

  void validate() const;
};

struct LossReport {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double mle = 0.0;
  double cl = 0.0;
  double ft = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double perplexity = 0.0;  // 0 when not evaluated
};

struct TrainOptions {
  bool contrastive = false;
  std::filesystem::path log_path;  // JSON-lines step log; empty = none
  std::function<void(const EpochSummary&)> on_epoch;
};

struct TrainResult {
  std::vector<LossReport> steps;
  std::vector<EpochSummary> epochs;
  bool reached_target = false;
};

// Batch mean of the per-sequence mean NLL over output positions.
double mle_loss(const ModelState& state, const std::vector<PromptSequence>& batch);
// Hinge over cosine similarities of the rows of `hidden` (L x d).
double contrastive_loss(const Eigen::MatrixXd& hidden, double margin);
LossReport finetune_loss(const ModelState& state, const std::vector<PromptSequence>& batch, double margin);

// Token-weighted perplexity exp(sum nll / tokens) over a full pass.
double perplexity(const ModelState& state, const std::vector<PromptSequence>& data, std::size_t batch_size = 16);

// AdamW with decoupled decay and a constant learning rate. Only rows inside
// each tensor's trainable range move (moments included).
class AdamW {
 public:
  AdamW(const ModelState& state, const OptimizerConfig& config);
  // Masks, clips and applies gradients; returns the pre-clip norm.
  double step(ModelState& state, engine::Grads<float>& grads);

 private:
  OptimizerConfig config_;
  std::vector<AlignedBuffer<float>> m_, v_;
  std::size_t t_ = 0;
};

// Mini-batch training with a seeded shuffle. On a non-finite loss the
// parameters are restored to the last good step and DivergenceError is thrown.
TrainResult train(ModelState& state, const std::vector<PromptSequence>& data, const OptimizerConfig& config,
                  const TrainOptions& options = {});

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t probes = 0;
  std::size_t excluded = 0;  // probes that landed in frozen rows
};

// Central differences (step 1e-3) in double precision on random parameters
// against the analytic gradient of L_MLE + L_CL.
GradCheckResult grad_check(const ModelState& state, const std::vector<PromptSequence>& batch, std::size_t n_probes,
                           std::uint64_t seed, double margin = 0.5, bool contrastive = true);

}  // namespace critgen
