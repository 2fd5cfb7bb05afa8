#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "critgen/error.hpp"
#include "critgen/prompting.hpp"
#include "critgen/training.hpp"
#include "fixtures.hpp"

using namespace critgen;

namespace {

struct Setup {
  Corpus corpus = fixtures::small_corpus(6);
  ModelState model = fixtures::small_model(corpus, fixtures::small_config());
  std::vector<PromptSequence> pretrain = pretrain_sequences(model, build_pretrain_set(corpus, 5, {1, 2}), {});
  std::vector<PromptSequence> pairs() const {
    return pair_sequences(model, extract_pairs(corpus, CriteriaParser{}, 1).pairs, nullptr, {});
  }
};

// Independent L_MLE: full logits, log-softmax in double, per-sequence means.
double oracle_mle(const ModelState& m, const std::vector<PromptSequence>& batch) {
  double total = 0;
  for (const auto& s : batch) {
    const auto logits = forward_logits(m, s);
    const std::size_t offset = logits.rows() - s.size();
    const auto ids = s.ids();
    const auto seg = s.segments();
    double sum = 0;
    int n = 0;
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      if (seg[i + 1] != Segment::kRationale && seg[i + 1] != Segment::kTarget) continue;
      double mx = -1e300;
      for (Eigen::Index v = 0; v < logits.cols(); ++v) mx = std::max(mx, static_cast<double>(logits(offset + i, v)));
      double z = 0;
      for (Eigen::Index v = 0; v < logits.cols(); ++v) z += std::exp(logits(offset + i, v) - mx);
      sum += mx + std::log(z) - logits(offset + i, ids[i + 1]);
      ++n;
    }
    total += sum / n;
  }
  return total / static_cast<double>(batch.size());
}

bool same_tensors(const ModelState& a, const ModelState& b, std::size_t begin, std::size_t end) {
  for (std::size_t i = begin; i < end; ++i)
    if (a.tensors[i].data != b.tensors[i].data) return false;
  return true;
}

}  // namespace

TEST_CASE("a zeroed model predicts uniformly") {
  Setup s;
  for (auto& t : s.model.tensors)
    if (t.name.find(".g") == std::string::npos) std::fill(t.data.begin(), t.data.end(), 0.0f);
  const double expect = std::log(static_cast<double>(s.model.vocab.size()));
  CHECK(std::abs(mle_loss(s.model, s.pretrain) - expect) < 1e-6);
  CHECK(perplexity(s.model, s.pretrain) == doctest::Approx(s.model.vocab.size()).epsilon(1e-6));
}

TEST_CASE("mle loss matches the per-position reference") {
  Setup s;
  const std::vector<PromptSequence> batch(s.pretrain.begin(), s.pretrain.begin() + 3);
  CHECK(mle_loss(s.model, batch) == doctest::Approx(oracle_mle(s.model, batch)).epsilon(1e-5));
  const auto pairs = s.pairs();
  const std::vector<PromptSequence> pb(pairs.begin(), pairs.begin() + 3);
  CHECK(mle_loss(s.model, pb) == doctest::Approx(oracle_mle(s.model, pb)).epsilon(1e-5));
}

TEST_CASE("contrastive fixtures") {
  Eigen::MatrixXd same(3, 4);
  same << 1, 2, 3, 4, 1, 2, 3, 4, 2, 4, 6, 8;
  CHECK(std::abs(contrastive_loss(same, 0.5) - 0.5) < 1e-12);
  CHECK(std::abs(contrastive_loss(same, 0.3) - 0.3) < 1e-12);
  const Eigen::MatrixXd ortho = Eigen::MatrixXd::Identity(3, 3);
  CHECK(contrastive_loss(ortho, 0.5) == 0.0);
  CHECK(contrastive_loss(Eigen::MatrixXd::Ones(1, 3), 0.5) == 0.0);

  // Cosines by hand: s01 = 0.6, s02 = 0, s12 = 0.8.
  Eigen::MatrixXd h(3, 2);
  h << 1, 0, 0.6, 0.8, 0, 2;
  const double rho = 0.7;
  const double expect = 2 * (std::max(0.0, rho - 1 + 0.6) + 0 + std::max(0.0, rho - 1 + 0.8)) / 6.0;
  CHECK(std::abs(contrastive_loss(h, rho) - expect) < 1e-12);
}

TEST_CASE("finetune loss is the sum of its parts") {
  Setup s;
  SequenceOptions so;
  so.use_prompt = false;
  const auto pairs = pair_sequences(s.model, extract_pairs(s.corpus, CriteriaParser{}, 2).pairs, nullptr, so);
  const std::vector<PromptSequence> batch(pairs.begin(), pairs.begin() + 4);
  const auto r = finetune_loss(s.model, batch, 0.5);
  CHECK(std::abs(r.ft - (r.mle + r.cl)) < 1e-12);
  CHECK(std::abs(r.mle - mle_loss(s.model, batch)) < 1e-9);
  double cl = 0;
  for (const auto& seq : batch) {
    const auto ids = seq.ids();
    const auto seg = seq.segments();
    const Eigen::MatrixXf hidden = final_hidden(s.model, ids);
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (seg[i] == Segment::kRationale || seg[i] == Segment::kTarget) rows.push_back(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd h(rows.size(), hidden.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) h.row(k) = hidden.row(rows[k]).cast<double>();
    cl += contrastive_loss(h, 0.5);
  }
  CHECK(std::abs(r.cl - cl / static_cast<double>(batch.size())) < 1e-6);
}

TEST_CASE("gradient check including the instruction path") {
  const auto corpus = fixtures::small_corpus(4);
  auto config = fixtures::small_config(8);
  config.prompt_len = 2;
  auto model = fixtures::small_model(corpus, config);
  // Unit-scale embeddings: at init scale the first norm amplifies inputs
  // ~35x and step-1e-3 differences are dominated by truncation error.
  for (auto& x : model.tensor("tok_emb").data) x *= 10;
  for (auto& x : model.tensor("pos_emb").data) x *= 10;
  CHECK(model.parameter_count() <= 10000);
  auto pairs = pair_sequences(model, extract_pairs(corpus, CriteriaParser{}, 1).pairs, nullptr, {});
  const std::vector<PromptSequence> batch(pairs.begin(), pairs.begin() + 2);
  const auto r = grad_check(model, batch, 50, 17);
  CHECK(r.probes == 50);
  CHECK(r.max_relative_error <= 1e-4);

  // Probes on the instruction table only.
  model.freeze_all();
  model.tensor("prompt.E_r").trainable = {0, model.tensor("prompt.E_r").rows};
  model.tensor("prompt.w1").trainable = {0, model.tensor("prompt.w1").rows};
  const auto p = grad_check(model, batch, 200, 18);
  CHECK(p.excluded < p.probes);
  CHECK(p.max_relative_error <= 1e-4);
}

TEST_CASE("training moves only trainable rows") {
  Setup s;
  const auto pairs = s.pairs();
  const auto before = s.model;
  OptimizerConfig oc;
  oc.epochs = 1;
  oc.batch_size = 4;

  auto zero = s.model;
  auto z = oc;
  z.learning_rate = 0;
  train(zero, pairs, z);
  CHECK(same_tensors(zero, before, 0, zero.tensors.size()));

  auto m = s.model;
  m.freeze_all();
  auto& er = m.tensor("prompt.E_r");
  er.trainable = {2, 5};
  train(m, pairs, oc, {true, {}, {}});
  const std::size_t table = m.tensors.size() - (m.config.prompt_len > 1 ? 6 : 5);
  CHECK(same_tensors(m, before, 0, table));
  const auto& er0 = before.tensor("prompt.E_r");
  const std::size_t c = er.cols;
  CHECK(std::equal(er.data.begin(), er.data.begin() + 2 * c, er0.data.begin()));
  CHECK(std::equal(er.data.begin() + 5 * c, er.data.end(), er0.data.begin() + 5 * c));
  CHECK_FALSE(std::equal(er.data.begin() + 2 * c, er.data.begin() + 5 * c, er0.data.begin() + 2 * c));
}

TEST_CASE("training is deterministic and logs every step") {
  Setup s;
  OptimizerConfig oc;
  oc.epochs = 2;
  oc.batch_size = 3;
  oc.learning_rate = 3e-3;
  const auto log = std::filesystem::temp_directory_path() / "critgen_train_log.jsonl";
  auto a = s.model, b = s.model;
  const auto ra = train(a, s.pretrain, oc, {false, log, {}});
  train(b, s.pretrain, oc);
  CHECK(same_tensors(a, b, 0, a.tensors.size()));
  const std::size_t per_epoch = (s.pretrain.size() + 2) / 3;
  CHECK(ra.steps.size() == 2 * per_epoch);
  std::ifstream in(log);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("step") == n + 1);
    for (const char* k : {"epoch", "L_MLE", "L_CL", "L_FT", "grad_norm", "lr"}) CHECK(j.contains(k));
    ++n;
  }
  CHECK(n == ra.steps.size());
  CHECK(ra.steps.back().mle < ra.steps.front().mle);
  std::filesystem::remove(log);
}

TEST_CASE("early stopping and divergence") {
  Setup s;
  OptimizerConfig oc;
  oc.epochs = 50;
  oc.learning_rate = 1e-2;
  oc.target_ppl = 1e6;  // reached after the first epoch
  auto m = s.model;
  const auto r = train(m, s.pretrain, oc);
  CHECK(r.reached_target);
  CHECK(r.epochs.size() == 1);

  auto bad = s.model;
  bad.tensor("lnf.g").data[0] = std::numeric_limits<float>::quiet_NaN();
  const auto snapshot = bad;
  OptimizerConfig plain;
  CHECK_THROWS_AS(train(bad, s.pretrain, plain), DivergenceError);
  for (std::size_t i = 0; i < bad.tensors.size(); ++i)
    for (std::size_t k = 0; k < bad.tensors[i].data.size(); ++k) {
      const float x = bad.tensors[i].data[k], y = snapshot.tensors[i].data[k];
      CHECK((x == y || (std::isnan(x) && std::isnan(y))));
    }

  OptimizerConfig neg;
  neg.learning_rate = -1;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
  CHECK_THROWS_AS(train(m, {}, OptimizerConfig{}), ConfigError);
}
