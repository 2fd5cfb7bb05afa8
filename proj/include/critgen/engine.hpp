#pragma once

// Batched forward/backward over a parameter set of scalar type T. The float
// instantiation trains the model; the double one backs gradient checking.

#include <vector>

#include <Eigen/Core>

#include "critgen/model.hpp"
#include "critgen/textproto.hpp"

namespace critgen::engine {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct ParamRef {
  std::vector<const T*> data;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
};

ParamRef<float> view(const ModelState& state);

// Owned copy in another precision, with a matching view.
template <typename T>
struct ParamCopy {
  std::vector<AlignedBuffer<T>> values;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
  ParamRef<T> ref() const;
};
template <typename T>
ParamCopy<T> copy_params(const ModelState& state);

template <typename T>
using Grads = std::vector<AlignedBuffer<T>>;
template <typename T>
Grads<T> zero_grads(const ModelState& state);

struct SequenceRef {
  const std::vector<TokenId>* ids = nullptr;
  const std::vector<Segment>* segments = nullptr;  // nullptr: no loss rows
  int instruction_index = -1;                      // < 0: no neural prompt
};

// Loss is taken at positions whose next token is rationale or target; the
// contrastive term uses the final states at rationale/target tokens.
bool is_output_segment(Segment s);

struct LossConfig {
  bool mle = true;
  bool contrastive = false;
  double margin = 0.5;
  bool ablate_prompt_attention = false;
};

struct LossValue {
  double mle = 0.0;  // batch mean of per-sequence mean NLL
  double cl = 0.0;   // batch mean of per-sequence contrastive loss
  double nll_sum = 0.0;
  std::size_t nll_count = 0;
  double total() const { return mle + cl; }
};

// Loss over a batch; accumulates d(total)/d(param) into *grads when non-null.
template <typename T>
LossValue loss_and_grad(const ModelConfig& config, const ParamRef<T>& params, const std::vector<SequenceRef>& batch,
                        const LossConfig& loss, Grads<T>* grads);

template <typename T>
void forward(const ModelConfig& config, const ParamRef<T>& params, const SequenceRef& seq, bool ablate_prompt_attention,
             bool want_logits, Mat<T>* logits, Mat<T>* hidden);

// Hinge loss over L2-normalized rows of H (L x d):
// mean over l != j of max(0, rho - 1 + cos(h_l, h_j)). Zero when L < 2.
template <typename T>
T contrastive_loss(const Mat<T>& H, T margin, Mat<T>* dH);

// h_p rows for instruction i (P x d) and its backward.
template <typename T>
Mat<T> prompt_vectors(const ModelConfig& config, const ParamRef<T>& params, std::size_t i);

}  // namespace critgen::engine
