#include "critgen/engine.hpp"

#include <cmath>

#include "critgen/error.hpp"

namespace critgen::engine {
namespace {

constexpr double kLnEps = 1e-5;

template <typename T>
using MapC = Eigen::Map<const Mat<T>>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using RowC = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <typename T>
using RowM = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;

template <typename T>
MapC<T> mat(const ParamRef<T>& p, std::size_t i) {
  return MapC<T>(p.data[i], static_cast<Eigen::Index>(p.rows[i]), static_cast<Eigen::Index>(p.cols[i]));
}
template <typename T>
RowC<T> rowv(const ParamRef<T>& p, std::size_t i) {
  return RowC<T>(p.data[i], static_cast<Eigen::Index>(p.rows[i] * p.cols[i]));
}
template <typename T>
MapM<T> gmat(Grads<T>& g, const ParamRef<T>& p, std::size_t i) {
  return MapM<T>(g[i].data(), static_cast<Eigen::Index>(p.rows[i]), static_cast<Eigen::Index>(p.cols[i]));
}
template <typename T>
RowM<T> grow(Grads<T>& g, std::size_t i) {
  return RowM<T>(g[i].data(), static_cast<Eigen::Index>(g[i].size()));
}

template <typename T>
struct NormCache {
  Mat<T> xhat;
  Vec<T> rstd;
};

template <typename T>
void norm_forward(const Mat<T>& x, const RowC<T>& g, const RowC<T>& b, Mat<T>& y, NormCache<T>& c) {
  const auto n = x.rows();
  c.xhat.resize(n, x.cols());
  c.rstd.resize(n);
  y.resize(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = x.row(i).mean();
    const T var = (x.row(i).array() - mu).square().mean();
    const T r = T(1) / std::sqrt(var + T(kLnEps));
    c.rstd(i) = r;
    c.xhat.row(i) = (x.row(i).array() - mu) * r;
    y.row(i) = c.xhat.row(i).array() * g.array() + b.array();
  }
}

template <typename T>
void norm_backward(const Mat<T>& dy, const RowC<T>& g, const NormCache<T>& c, Mat<T>& dx, RowM<T>* dg, RowM<T>* db) {
  if (dg) *dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  if (db) *db += dy.colwise().sum();
  const auto n = dy.rows();
  const T inv_d = T(1) / static_cast<T>(dy.cols());
  dx.resize(n, dy.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto dxhat = (dy.row(i).array() * g.array()).eval();
    const T m1 = dxhat.sum() * inv_d;
    const T m2 = (dxhat * c.xhat.row(i).array()).sum() * inv_d;
    dx.row(i) = c.rstd(i) * (dxhat - m1 - c.xhat.row(i).array() * m2);
  }
}

template <typename T>
T gelu(T u) {
  const T c = T(0.7978845608028654);
  return T(0.5) * u * (T(1) + std::tanh(c * (u + T(0.044715) * u * u * u)));
}

template <typename T>
T gelu_grad(T u) {
  const T c = T(0.7978845608028654);
  const T t = std::tanh(c * (u + T(0.044715) * u * u * u));
  return T(0.5) * (T(1) + t) + T(0.5) * u * (T(1) - t * t) * c * (T(1) + T(3) * T(0.044715) * u * u);
}

struct SeqInfo {
  std::size_t offset = 0;  // first row in the stacked batch
  std::size_t prompt = 0;  // prompt rows
  std::size_t text = 0;    // text rows
  int instruction = -1;
  std::size_t rows() const { return prompt + text; }
};

template <typename T>
struct LayerCache {
  Mat<T> xin, a, qkv, o, xmid, b, u, g;
  NormCache<T> n1, n2;
  std::vector<Mat<T>> probs;  // per (sequence, head)
};

template <typename T>
struct PromptCache {
  Vec<T> e, act;  // table row, tanh output
};

template <typename T>
struct Forward {
  std::vector<SeqInfo> seqs;
  std::vector<LayerCache<T>> layers;
  std::vector<PromptCache<T>> prompts;
  Mat<T> x_last, f;
  NormCache<T> nf;
};

template <typename T>
Vec<T> prompt_base(const ModelConfig& cfg, const ParamRef<T>& p, std::size_t i, PromptCache<T>* cache) {
  const Layout L(cfg.n_layers);
  if (i >= p.rows[L.prompt_table()]) {
    throw Error("instruction index " + std::to_string(i) + " out of range");
  }
  const auto table = mat(p, L.prompt_table());
  Vec<T> e = table.row(static_cast<Eigen::Index>(i)).transpose();
  Vec<T> z = mat(p, L.prompt_w1()).transpose() * e + rowv(p, L.prompt_b1()).transpose();
  Vec<T> act = z.array().tanh();
  Vec<T> h = mat(p, L.prompt_w2()).transpose() * act + rowv(p, L.prompt_b2()).transpose();
  if (cache) {
    cache->e = std::move(e);
    cache->act = act;
  }
  return h;
}

template <typename T>
void run_forward(const ModelConfig& cfg, const ParamRef<T>& p, const std::vector<SequenceRef>& batch, bool ablate,
                 Forward<T>& fw) {
  const Layout L(cfg.n_layers);
  const std::size_t d = cfg.d_model, H = cfg.n_heads, dh = d / H, P = cfg.prompt_len;
  std::size_t total = 0;
  fw.seqs.clear();
  for (const auto& s : batch) {
    SeqInfo info;
    info.offset = total;
    info.instruction = s.instruction_index;
    info.prompt = s.instruction_index >= 0 ? P : 0;
    info.text = s.ids->size();
    if (info.rows() > cfg.context_window) {
      throw ConfigError("sequence of " + std::to_string(info.rows()) + " positions exceeds context window " +
                        std::to_string(cfg.context_window));
    }
    if (info.text == 0) throw Error("empty sequence");
    total += info.rows();
    fw.seqs.push_back(info);
  }

  Mat<T> x(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(d));
  const auto tok = mat(p, Layout::kTok);
  const auto pos = mat(p, Layout::kPos);
  fw.prompts.assign(batch.size(), {});
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& info = fw.seqs[s];
    if (info.prompt) {
      const Vec<T> h = prompt_base(cfg, p, static_cast<std::size_t>(info.instruction), &fw.prompts[s]);
      for (std::size_t r = 0; r < P; ++r) {
        x.row(static_cast<Eigen::Index>(info.offset + r)) = h.transpose();
        if (P > 1) x.row(static_cast<Eigen::Index>(info.offset + r)) += mat(p, L.prompt_pos()).row(static_cast<Eigen::Index>(r));
      }
    }
    for (std::size_t i = 0; i < info.text; ++i) {
      const auto id = (*batch[s].ids)[i];
      if (id < 0 || static_cast<std::size_t>(id) >= p.rows[Layout::kTok]) throw Error("token id out of range");
      x.row(static_cast<Eigen::Index>(info.offset + info.prompt + i)) = tok.row(id) + pos.row(static_cast<Eigen::Index>(i));
    }
  }

  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  fw.layers.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto& c = fw.layers[l];
    c.xin = x;
    norm_forward<T>(x, rowv(p, L.layer(l, Layout::kLn1G)), rowv(p, L.layer(l, Layout::kLn1B)), c.a, c.n1);
    c.qkv.noalias() = c.a * mat(p, L.layer(l, Layout::kWqkv));
    c.qkv.rowwise() += rowv(p, L.layer(l, Layout::kBqkv));
    c.o.setZero(x.rows(), x.cols());
    c.probs.assign(batch.size() * H, {});
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const auto& info = fw.seqs[s];
      const auto n = static_cast<Eigen::Index>(info.rows());
      const auto off = static_cast<Eigen::Index>(info.offset);
      for (std::size_t h = 0; h < H; ++h) {
        const auto q = c.qkv.block(off, static_cast<Eigen::Index>(h * dh), n, static_cast<Eigen::Index>(dh));
        const auto k = c.qkv.block(off, static_cast<Eigen::Index>(d + h * dh), n, static_cast<Eigen::Index>(dh));
        const auto v = c.qkv.block(off, static_cast<Eigen::Index>(2 * d + h * dh), n, static_cast<Eigen::Index>(dh));
        Mat<T>& pr = c.probs[s * H + h];
        pr.noalias() = (q * k.transpose()) * scale;
        for (Eigen::Index i = 0; i < n; ++i) {
          const bool text_row = static_cast<std::size_t>(i) >= info.prompt;
          const Eigen::Index lo = (ablate && text_row) ? static_cast<Eigen::Index>(info.prompt) : 0;
          T mx = -std::numeric_limits<T>::infinity();
          for (Eigen::Index j = lo; j <= i; ++j) mx = std::max(mx, pr(i, j));
          T sum = 0;
          for (Eigen::Index j = 0; j < n; ++j) {
            if (j < lo || j > i) {
              pr(i, j) = 0;
            } else {
              pr(i, j) = std::exp(pr(i, j) - mx);
              sum += pr(i, j);
            }
          }
          pr.row(i) /= sum;
        }
        c.o.block(off, static_cast<Eigen::Index>(h * dh), n, static_cast<Eigen::Index>(dh)).noalias() = pr * v;
      }
    }
    c.xmid = x;
    c.xmid.noalias() += c.o * mat(p, L.layer(l, Layout::kWo));
    c.xmid.rowwise() += rowv(p, L.layer(l, Layout::kBo));
    norm_forward<T>(c.xmid, rowv(p, L.layer(l, Layout::kLn2G)), rowv(p, L.layer(l, Layout::kLn2B)), c.b, c.n2);
    c.u.noalias() = c.b * mat(p, L.layer(l, Layout::kW1));
    c.u.rowwise() += rowv(p, L.layer(l, Layout::kB1));
    c.g = c.u.unaryExpr([](T v) { return gelu(v); });
    x = c.xmid;
    x.noalias() += c.g * mat(p, L.layer(l, Layout::kW2));
    x.rowwise() += rowv(p, L.layer(l, Layout::kB2));
  }
  fw.x_last = x;
  norm_forward<T>(x, rowv(p, L.lnf_g()), rowv(p, L.lnf_b()), fw.f, fw.nf);
}

template <typename T>
void run_backward(const ModelConfig& cfg, const ParamRef<T>& p, const std::vector<SequenceRef>& batch, bool ablate,
                  const Forward<T>& fw, const Mat<T>& df, Grads<T>& g) {
  (void)ablate;  // masked probabilities are exact zeros, so the backward needs no mask
  const Layout L(cfg.n_layers);
  const std::size_t d = cfg.d_model, H = cfg.n_heads, dh = d / H, P = cfg.prompt_len;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  Mat<T> dx;
  {
    RowM<T> dg = grow(g, L.lnf_g()), db = grow(g, L.lnf_b());
    norm_backward<T>(df, rowv(p, L.lnf_g()), fw.nf, dx, &dg, &db);
  }
  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const auto& c = fw.layers[li];
    // MLP branch
    gmat(g, p, L.layer(li, Layout::kW2)).noalias() += c.g.transpose() * dx;
    grow(g, L.layer(li, Layout::kB2)) += dx.colwise().sum();
    Mat<T> du = dx * mat(p, L.layer(li, Layout::kW2)).transpose();
    du.array() *= c.u.unaryExpr([](T v) { return gelu_grad(v); }).array();
    gmat(g, p, L.layer(li, Layout::kW1)).noalias() += c.b.transpose() * du;
    grow(g, L.layer(li, Layout::kB1)) += du.colwise().sum();
    Mat<T> db_ = du * mat(p, L.layer(li, Layout::kW1)).transpose();
    Mat<T> dmid;
    {
      RowM<T> gg = grow(g, L.layer(li, Layout::kLn2G)), gb = grow(g, L.layer(li, Layout::kLn2B));
      norm_backward<T>(db_, rowv(p, L.layer(li, Layout::kLn2G)), c.n2, dmid, &gg, &gb);
    }
    dmid += dx;  // residual
    // attention branch
    gmat(g, p, L.layer(li, Layout::kWo)).noalias() += c.o.transpose() * dmid;
    grow(g, L.layer(li, Layout::kBo)) += dmid.colwise().sum();
    Mat<T> dout = dmid * mat(p, L.layer(li, Layout::kWo)).transpose();
    Mat<T> dqkv = Mat<T>::Zero(c.qkv.rows(), c.qkv.cols());
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const auto& info = fw.seqs[s];
      const auto n = static_cast<Eigen::Index>(info.rows());
      const auto off = static_cast<Eigen::Index>(info.offset);
      for (std::size_t h = 0; h < H; ++h) {
        const auto hd = static_cast<Eigen::Index>(h * dh), w = static_cast<Eigen::Index>(dh);
        const auto q = c.qkv.block(off, hd, n, w);
        const auto k = c.qkv.block(off, static_cast<Eigen::Index>(d) + hd, n, w);
        const auto v = c.qkv.block(off, static_cast<Eigen::Index>(2 * d) + hd, n, w);
        const Mat<T>& pr = c.probs[s * H + h];
        const auto dO = dout.block(off, hd, n, w);
        Mat<T> dp = dO * v.transpose();
        dqkv.block(off, static_cast<Eigen::Index>(2 * d) + hd, n, w).noalias() += pr.transpose() * dO;
        const Vec<T> rowdot = (dp.array() * pr.array()).rowwise().sum();
        Mat<T> ds = (pr.array() * (dp.colwise() - rowdot).array()).matrix() * scale;
        dqkv.block(off, hd, n, w).noalias() += ds * k;
        dqkv.block(off, static_cast<Eigen::Index>(d) + hd, n, w).noalias() += ds.transpose() * q;
      }
    }
    gmat(g, p, L.layer(li, Layout::kWqkv)).noalias() += c.a.transpose() * dqkv;
    grow(g, L.layer(li, Layout::kBqkv)) += dqkv.colwise().sum();
    Mat<T> da = dqkv * mat(p, L.layer(li, Layout::kWqkv)).transpose();
    Mat<T> dxin;
    {
      RowM<T> gg = grow(g, L.layer(li, Layout::kLn1G)), gb = grow(g, L.layer(li, Layout::kLn1B));
      norm_backward<T>(da, rowv(p, L.layer(li, Layout::kLn1G)), c.n1, dxin, &gg, &gb);
    }
    dx = dxin + dmid;
  }

  // embeddings
  auto gtok = gmat(g, p, Layout::kTok);
  auto gpos = gmat(g, p, Layout::kPos);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& info = fw.seqs[s];
    for (std::size_t i = 0; i < info.text; ++i) {
      const auto r = static_cast<Eigen::Index>(info.offset + info.prompt + i);
      gtok.row((*batch[s].ids)[i]) += dx.row(r);
      gpos.row(static_cast<Eigen::Index>(i)) += dx.row(r);
    }
    if (info.prompt) {
      Vec<T> dh_p = Vec<T>::Zero(static_cast<Eigen::Index>(d));
      for (std::size_t r = 0; r < P; ++r) {
        const auto row = dx.row(static_cast<Eigen::Index>(info.offset + r));
        dh_p += row.transpose();
        if (P > 1) gmat(g, p, L.prompt_pos()).row(static_cast<Eigen::Index>(r)) += row;
      }
      const auto& pc = fw.prompts[s];
      grow(g, L.prompt_b2()) += dh_p.transpose();
      gmat(g, p, L.prompt_w2()).noalias() += pc.act * dh_p.transpose();
      Vec<T> dz = mat(p, L.prompt_w2()) * dh_p;
      dz.array() *= (T(1) - pc.act.array().square());
      grow(g, L.prompt_b1()) += dz.transpose();
      gmat(g, p, L.prompt_w1()).noalias() += pc.e * dz.transpose();
      gmat(g, p, L.prompt_table()).row(info.instruction) += (mat(p, L.prompt_w1()) * dz).transpose();
    }
  }
}

}  // namespace

bool is_output_segment(Segment s) { return s == Segment::kRationale || s == Segment::kTarget; }

ParamRef<float> view(const ModelState& state) {
  ParamRef<float> r;
  for (const auto& t : state.tensors) {
    r.data.push_back(t.data.data());
    r.rows.push_back(t.rows);
    r.cols.push_back(t.cols);
  }
  return r;
}

template <typename T>
ParamRef<T> ParamCopy<T>::ref() const {
  ParamRef<T> r;
  for (const auto& v : values) r.data.push_back(v.data());
  r.rows = rows;
  r.cols = cols;
  return r;
}

template <typename T>
ParamCopy<T> copy_params(const ModelState& state) {
  ParamCopy<T> c;
  for (const auto& t : state.tensors) {
    c.values.emplace_back(t.data.begin(), t.data.end());
    c.rows.push_back(t.rows);
    c.cols.push_back(t.cols);
  }
  return c;
}

template <typename T>
Grads<T> zero_grads(const ModelState& state) {
  Grads<T> g;
  for (const auto& t : state.tensors) g.emplace_back(t.size(), T(0));
  return g;
}

template <typename T>
T contrastive_loss(const Mat<T>& Hs, T margin, Mat<T>* dH) {
  const auto n = Hs.rows();
  if (dH) dH->setZero(Hs.rows(), Hs.cols());
  if (n < 2) return T(0);
  Vec<T> norms = Hs.rowwise().norm();
  norms = norms.cwiseMax(T(1e-12));
  const Mat<T> U = norms.cwiseInverse().asDiagonal() * Hs;
  const Mat<T> S = U * U.transpose();
  const T inv = T(1) / static_cast<T>(n * (n - 1));
  T loss = 0;
  Mat<T> dS = Mat<T>::Zero(n, n);
  for (Eigen::Index l = 0; l < n; ++l) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (l == j) continue;
      const T term = margin - T(1) + S(l, j);
      if (term > 0) {
        loss += term;
        dS(l, j) = inv;
      }
    }
  }
  loss *= inv;
  if (dH) {
    const Mat<T> dU = (dS + dS.transpose()) * U;
    for (Eigen::Index l = 0; l < n; ++l) {
      const T proj = U.row(l).dot(dU.row(l));
      dH->row(l) = (dU.row(l) - proj * U.row(l)) / norms(l);
    }
  }
  return loss;
}

template <typename T>
Mat<T> prompt_vectors(const ModelConfig& config, const ParamRef<T>& params, std::size_t i) {
  const Layout L(config.n_layers);
  const Vec<T> h = prompt_base<T>(config, params, i, nullptr);
  Mat<T> out(static_cast<Eigen::Index>(config.prompt_len), static_cast<Eigen::Index>(config.d_model));
  for (std::size_t r = 0; r < config.prompt_len; ++r) {
    out.row(static_cast<Eigen::Index>(r)) = h.transpose();
    if (config.prompt_len > 1) out.row(static_cast<Eigen::Index>(r)) += mat(params, L.prompt_pos()).row(static_cast<Eigen::Index>(r));
  }
  return out;
}

template <typename T>
void forward(const ModelConfig& config, const ParamRef<T>& params, const SequenceRef& seq, bool ablate,
             bool want_logits, Mat<T>* logits, Mat<T>* hidden) {
  Forward<T> fw;
  run_forward(config, params, {seq}, ablate, fw);
  if (want_logits && logits) logits->noalias() = fw.f * mat(params, Layout::kTok).transpose();
  if (hidden) *hidden = std::move(fw.f);
}

template <typename T>
LossValue loss_and_grad(const ModelConfig& config, const ParamRef<T>& p, const std::vector<SequenceRef>& batch,
                        const LossConfig& lc, Grads<T>* grads) {
  if (batch.empty()) throw Error("empty batch");
  Forward<T> fw;
  run_forward(config, p, batch, lc.ablate_prompt_attention, fw);
  const auto B = static_cast<T>(batch.size());
  LossValue out;
  Mat<T> df = Mat<T>::Zero(fw.f.rows(), fw.f.cols());

  if (lc.mle) {
    std::vector<Eigen::Index> rows;
    std::vector<TokenId> targets;
    std::vector<T> weights;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const auto& info = fw.seqs[s];
      const auto& ids = *batch[s].ids;
      if (!batch[s].segments) continue;
      const auto& seg = *batch[s].segments;
      std::size_t count = 0;
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) count += is_output_segment(seg[i + 1]);
      if (count == 0) continue;
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        if (!is_output_segment(seg[i + 1])) continue;
        rows.push_back(static_cast<Eigen::Index>(info.offset + info.prompt + i));
        targets.push_back(ids[i + 1]);
        weights.push_back(T(1) / (static_cast<T>(count) * B));
      }
    }
    if (rows.empty()) throw Error("batch has no loss positions");
    const auto M = static_cast<Eigen::Index>(rows.size());
    Mat<T> fl(M, fw.f.cols());
    for (Eigen::Index r = 0; r < M; ++r) fl.row(r) = fw.f.row(rows[static_cast<std::size_t>(r)]);
    const auto tok = mat(p, Layout::kTok);
    Mat<T> logits = fl * tok.transpose();
    double loss = 0;
    for (Eigen::Index r = 0; r < M; ++r) {
      const T mx = logits.row(r).maxCoeff();
      logits.row(r).array() = (logits.row(r).array() - mx).exp();
      const T sum = logits.row(r).sum();
      logits.row(r) /= sum;
      const auto t = targets[static_cast<std::size_t>(r)];
      const double nll = -std::log(static_cast<double>(std::max(logits(r, t), std::numeric_limits<T>::min())));
      out.nll_sum += nll;
      loss += nll * static_cast<double>(weights[static_cast<std::size_t>(r)]);
      if (grads) {
        logits(r, t) -= T(1);
        logits.row(r) *= weights[static_cast<std::size_t>(r)];
      }
    }
    out.nll_count = rows.size();
    out.mle = loss;
    if (grads) {
      gmat(*grads, p, Layout::kTok).noalias() += logits.transpose() * fl;
      const Mat<T> dfl = logits * tok;
      for (Eigen::Index r = 0; r < M; ++r) df.row(rows[static_cast<std::size_t>(r)]) += dfl.row(r);
    }
  }

  if (lc.contrastive) {
    double total = 0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      if (!batch[s].segments) continue;
      const auto& info = fw.seqs[s];
      const auto& seg = *batch[s].segments;
      std::vector<Eigen::Index> rows;
      for (std::size_t i = 0; i < info.text; ++i) {
        if (is_output_segment(seg[i])) rows.push_back(static_cast<Eigen::Index>(info.offset + info.prompt + i));
      }
      if (rows.size() < 2) continue;
      Mat<T> hs(static_cast<Eigen::Index>(rows.size()), fw.f.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) hs.row(static_cast<Eigen::Index>(r)) = fw.f.row(rows[r]);
      Mat<T> dh;
      total += static_cast<double>(contrastive_loss<T>(hs, static_cast<T>(lc.margin), grads ? &dh : nullptr));
      if (grads) {
        for (std::size_t r = 0; r < rows.size(); ++r) df.row(rows[r]) += dh.row(static_cast<Eigen::Index>(r)) / B;
      }
    }
    out.cl = total / static_cast<double>(batch.size());
  }

  if (grads) run_backward(config, p, batch, lc.ablate_prompt_attention, fw, df, *grads);
  return out;
}

template struct ParamCopy<float>;
template struct ParamCopy<double>;
template ParamCopy<float> copy_params<float>(const ModelState&);
template ParamCopy<double> copy_params<double>(const ModelState&);
template Grads<float> zero_grads<float>(const ModelState&);
template Grads<double> zero_grads<double>(const ModelState&);
template float contrastive_loss<float>(const Mat<float>&, float, Mat<float>*);
template double contrastive_loss<double>(const Mat<double>&, double, Mat<double>*);
template Mat<float> prompt_vectors<float>(const ModelConfig&, const ParamRef<float>&, std::size_t);
template Mat<double> prompt_vectors<double>(const ModelConfig&, const ParamRef<double>&, std::size_t);
template void forward<float>(const ModelConfig&, const ParamRef<float>&, const SequenceRef&, bool, bool, Mat<float>*,
                             Mat<float>*);
template void forward<double>(const ModelConfig&, const ParamRef<double>&, const SequenceRef&, bool, bool,
                              Mat<double>*, Mat<double>*);
template LossValue loss_and_grad<float>(const ModelConfig&, const ParamRef<float>&, const std::vector<SequenceRef>&,
                                        const LossConfig&, Grads<float>*);
template LossValue loss_and_grad<double>(const ModelConfig&, const ParamRef<double>&, const std::vector<SequenceRef>&,
                                         const LossConfig&, Grads<double>*);

}  // namespace critgen::engine
