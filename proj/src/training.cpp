#include "critgen/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "critgen/error.hpp"
#include "critgen/rng.hpp"

namespace critgen {
namespace {

struct Prepared {
  std::vector<TokenId> ids;
  std::vector<Segment> segments;
  int instruction = -1;
};

std::vector<Prepared> prepare(const std::vector<PromptSequence>& data) {
  std::vector<Prepared> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back({s.ids(), s.segments(), s.instruction_index});
  return out;
}

std::vector<engine::SequenceRef> refs(const std::vector<Prepared>& p, const std::size_t* idx, std::size_t n) {
  std::vector<engine::SequenceRef> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = p[idx ? idx[i] : i];
    out.push_back({&s.ids, &s.segments, s.instruction});
  }
  return out;
}

}  // namespace

void OptimizerConfig::validate() const {
  std::vector<std::string> bad;
  if (!(learning_rate >= 0)) bad.push_back("learning_rate >= 0");
  if (!(weight_decay >= 0)) bad.push_back("weight_decay >= 0");
  if (batch_size == 0) bad.push_back("batch_size >= 1");
  if (epochs == 0) bad.push_back("epochs >= 1");
  if (!(margin > 0 && margin <= 2)) bad.push_back("margin in (0, 2]");
  if (!(clip_norm > 0)) bad.push_back("clip_norm > 0");
  if (!(target_ppl >= 0)) bad.push_back("target_ppl >= 0");
  if (!bad.empty()) {
    std::string msg = "invalid optimizer config:";
    for (const auto& b : bad) msg += " [" + b + "]";
    throw ConfigError(msg);
  }
}

double mle_loss(const ModelState& state, const std::vector<PromptSequence>& batch) {
  const auto prepared = prepare(batch);
  return engine::loss_and_grad<float>(state.config, engine::view(state), refs(prepared, nullptr, prepared.size()),
                                      {true, false, 0.5, false}, nullptr)
      .mle;
}

double contrastive_loss(const Eigen::MatrixXd& hidden, double margin) {
  if (hidden.rows() < 2) {
    spdlog::warn("contrastive loss over fewer than 2 states is zero");
    return 0.0;
  }
  const engine::Mat<double> h = hidden;
  return engine::contrastive_loss<double>(h, margin, nullptr);
}

LossReport finetune_loss(const ModelState& state, const std::vector<PromptSequence>& batch, double margin) {
  const auto prepared = prepare(batch);
  const auto v = engine::loss_and_grad<float>(state.config, engine::view(state),
                                              refs(prepared, nullptr, prepared.size()), {true, true, margin, false}, nullptr);
  LossReport r;
  r.mle = v.mle;
  r.cl = v.cl;
  r.ft = v.mle + v.cl;
  return r;
}

double perplexity(const ModelState& state, const std::vector<PromptSequence>& data, std::size_t batch_size) {
  const auto prepared = prepare(data);
  double nll = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < prepared.size(); i += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, prepared.size() - i));
    std::iota(idx.begin(), idx.end(), i);
    const auto v = engine::loss_and_grad<float>(state.config, engine::view(state), refs(prepared, idx.data(), idx.size()),
                                                {true, false, 0.5, false}, nullptr);
    nll += v.nll_sum;
    count += v.nll_count;
  }
  if (count == 0) throw Error("perplexity: no output positions");
  return std::exp(nll / static_cast<double>(count));
}

AdamW::AdamW(const ModelState& state, const OptimizerConfig& config) : config_(config) {
  for (const auto& t : state.tensors) {
    m_.emplace_back(t.size(), 0.0f);
    v_.emplace_back(t.size(), 0.0f);
  }
}

double AdamW::step(ModelState& state, engine::Grads<float>& grads) {
  double sq = 0;
  for (std::size_t i = 0; i < state.tensors.size(); ++i) {
    const auto& t = state.tensors[i];
    auto& g = grads[i];
    for (std::size_t r = 0; r < t.rows; ++r) {
      float* row = g.data() + r * t.cols;
      if (!t.trainable.contains(r)) {
        std::fill(row, row + t.cols, 0.0f);
        continue;
      }
      for (std::size_t c = 0; c < t.cols; ++c) sq += static_cast<double>(row[c]) * row[c];
    }
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm; parameters left unchanged");
  const float clip = norm > config_.clip_norm ? static_cast<float>(config_.clip_norm / norm) : 1.0f;
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const auto lr = static_cast<float>(config_.learning_rate);
  const auto wd = static_cast<float>(config_.weight_decay);
  const auto eps = static_cast<float>(config_.epsilon);
  for (std::size_t i = 0; i < state.tensors.size(); ++i) {
    auto& t = state.tensors[i];
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = grads[i];
    for (std::size_t k = t.trainable.begin * t.cols; k < std::min(t.trainable.end, t.rows) * t.cols; ++k) {
      const float gk = g[k] * clip;
      m[k] = static_cast<float>(b1) * m[k] + static_cast<float>(1 - b1) * gk;
      v[k] = static_cast<float>(b2) * v[k] + static_cast<float>(1 - b2) * gk * gk;
      const float mh = m[k] / static_cast<float>(c1);
      const float vh = v[k] / static_cast<float>(c2);
      t.data[k] -= lr * (mh / (std::sqrt(vh) + eps) + wd * t.data[k]);
    }
  }
  return norm;
}

TrainResult train(ModelState& state, const std::vector<PromptSequence>& data, const OptimizerConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  const auto prepared = prepare(data);
  AdamW opt(state, config);
  Rng rng(derive_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);

  std::ofstream log;
  if (!options.log_path.empty()) {
    log.open(options.log_path, std::ios::binary);
    if (!log) throw Error("cannot write training log " + options.log_path.string());
  }
  const engine::LossConfig lc{true, options.contrastive, config.margin, false};
  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t i = 0; i < order.size(); i += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - i);
      auto grads = engine::zero_grads<float>(state);
      const auto v = engine::loss_and_grad<float>(state.config, engine::view(state), refs(prepared, &order[i], n), lc, &grads);
      if (!std::isfinite(v.total())) {
        throw DivergenceError("non-finite loss at step " + std::to_string(step + 1) +
                              "; parameters kept at the last good step");
      }
      const double norm = opt.step(state, grads);
      ++step;
      LossReport r{step, epoch, v.mle, v.cl, v.mle + v.cl, norm, config.learning_rate};
      if (log) {
        log << nlohmann::json{{"step", r.step}, {"epoch", r.epoch}, {"L_MLE", r.mle}, {"L_CL", r.cl},
                              {"L_FT", r.ft},   {"grad_norm", r.grad_norm}, {"lr", r.lr}}
                   .dump()
            << '\n';
      }
      result.steps.push_back(r);
      loss_sum += r.ft;
      ++batches;
    }
    EpochSummary summary{epoch, loss_sum / static_cast<double>(batches), 0.0};
    if (config.target_ppl > 0) summary.perplexity = perplexity(state, data);
    result.epochs.push_back(summary);
    spdlog::debug("epoch {} loss {:.4f} ppl {:.4f}", epoch, summary.mean_loss, summary.perplexity);
    if (options.on_epoch) options.on_epoch(summary);
    if (config.target_ppl > 0 && summary.perplexity <= config.target_ppl) {
      result.reached_target = true;
      break;
    }
  }
  return result;
}

GradCheckResult grad_check(const ModelState& state, const std::vector<PromptSequence>& batch, std::size_t n_probes,
                           std::uint64_t seed, double margin, bool contrastive) {
  const auto prepared = prepare(batch);
  const auto rs = refs(prepared, nullptr, prepared.size());
  auto params = engine::copy_params<double>(state);
  const engine::LossConfig lc{true, contrastive, margin, false};
  auto grads = engine::zero_grads<double>(state);
  engine::loss_and_grad<double>(state.config, params.ref(), rs, lc, &grads);

  std::size_t total = 0;
  for (const auto& t : state.tensors) total += t.size();
  Rng rng(derive_seed(seed, "gradcheck"));
  GradCheckResult out;
  const double h = 1e-3;
  for (std::size_t p = 0; p < n_probes; ++p) {
    std::size_t flat = rng.below(total), ti = 0;
    while (flat >= state.tensors[ti].size()) flat -= state.tensors[ti++].size();
    const auto& t = state.tensors[ti];
    ++out.probes;
    if (!t.trainable.contains(flat / t.cols)) {
      ++out.excluded;
      continue;
    }
    double& x = params.values[ti][flat];
    const double keep = x;
    x = keep + h;
    const double up = engine::loss_and_grad<double>(state.config, params.ref(), rs, lc, nullptr).total();
    x = keep - h;
    const double down = engine::loss_and_grad<double>(state.config, params.ref(), rs, lc, nullptr).total();
    x = keep;
    const double fd = (up - down) / (2 * h);
    const double an = grads[ti][flat];
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    out.max_relative_error = std::max(out.max_relative_error, rel);
  }
  return out;
}

}  // namespace critgen
