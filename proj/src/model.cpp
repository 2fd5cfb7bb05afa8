#include "critgen/model.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "critgen/engine.hpp"
#include "critgen/error.hpp"
#include "critgen/rng.hpp"

namespace critgen {

using nlohmann::json;

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_ff == 0) throw ConfigError("model sizes must be positive");
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (context_window == 0 || context_window > 1024) throw ConfigError("context_window must be in [1, 1024]");
  if (prompt_len == 0) throw ConfigError("prompt_len must be >= 1");
  if (prompt_len >= context_window) throw ConfigError("prompt_len must be smaller than context_window");
  if (prompt_dim == 0 || prompt_hidden == 0) throw ConfigError("prompt sizes must be positive");
}

int InstructionRegistry::index_of(std::string_view tag) const {
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == tag) return static_cast<int>(i);
  }
  return -1;
}

Tensor& ModelState::tensor(std::string_view name) {
  for (auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw Error("no tensor named " + std::string(name));
}

const Tensor& ModelState::tensor(std::string_view name) const {
  return const_cast<ModelState*>(this)->tensor(name);
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

void ModelState::set_all_trainable() {
  for (auto& t : tensors) t.trainable = {0, t.rows};
}

void ModelState::freeze_all() {
  for (auto& t : tensors) t.trainable = {0, 0};
}

namespace {

Tensor make_tensor(std::string name, std::size_t rows, std::size_t cols) {
  Tensor t;
  t.name = std::move(name);
  t.rows = rows;
  t.cols = cols;
  t.data.assign(rows * cols, 0.0f);
  t.trainable = {0, rows};
  return t;
}

void fill_uniform(Tensor& t, std::uint64_t seed, float bound) {
  Rng rng(derive_seed(seed, t.name));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
}

std::vector<Tensor> build_tensors(const ModelConfig& c, std::size_t n_instructions) {
  std::vector<Tensor> ts;
  const std::size_t d = c.d_model;
  ts.push_back(make_tensor("tok_emb", c.vocab_size, d));
  ts.push_back(make_tensor("pos_emb", c.context_window, d));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    ts.push_back(make_tensor(p + "ln1.g", 1, d));
    ts.push_back(make_tensor(p + "ln1.b", 1, d));
    ts.push_back(make_tensor(p + "attn.wqkv", d, 3 * d));
    ts.push_back(make_tensor(p + "attn.bqkv", 1, 3 * d));
    ts.push_back(make_tensor(p + "attn.wo", d, d));
    ts.push_back(make_tensor(p + "attn.bo", 1, d));
    ts.push_back(make_tensor(p + "ln2.g", 1, d));
    ts.push_back(make_tensor(p + "ln2.b", 1, d));
    ts.push_back(make_tensor(p + "mlp.w1", d, c.d_ff));
    ts.push_back(make_tensor(p + "mlp.b1", 1, c.d_ff));
    ts.push_back(make_tensor(p + "mlp.w2", c.d_ff, d));
    ts.push_back(make_tensor(p + "mlp.b2", 1, d));
  }
  ts.push_back(make_tensor("lnf.g", 1, d));
  ts.push_back(make_tensor("lnf.b", 1, d));
  ts.push_back(make_tensor("prompt.E_r", n_instructions, c.prompt_dim));
  ts.push_back(make_tensor("prompt.w1", c.prompt_dim, c.prompt_hidden));
  ts.push_back(make_tensor("prompt.b1", 1, c.prompt_hidden));
  ts.push_back(make_tensor("prompt.w2", c.prompt_hidden, d));
  ts.push_back(make_tensor("prompt.b2", 1, d));
  if (c.prompt_len > 1) ts.push_back(make_tensor("prompt.pos", c.prompt_len, d));
  return ts;
}

}  // namespace

void init_prompt_row(const ModelConfig& config, std::size_t row, float* out) {
  Rng rng(derive_seed(config.seed, "prompt.E_r", row));
  for (std::size_t j = 0; j < config.prompt_dim; ++j) out[j] = static_cast<float>(rng.uniform(-1.0, 1.0));
}

ModelState init_model(const ModelConfig& config_in, Vocabulary vocab, const std::vector<std::string>& instructions) {
  ModelConfig config = config_in;
  config.vocab_size = vocab.size();
  config.validate();
  ModelState st;
  st.config = config;
  for (const auto& tag : instructions) {
    if (st.registry.index_of(tag) >= 0) throw ConfigError("duplicate instruction tag '" + tag + "'");
    vocab.register_instruction(tag);
    st.registry.tags.push_back(tag);
  }
  st.vocab = std::move(vocab);
  st.tensors = build_tensors(config, instructions.size());

  const float resid = 1.0f / std::sqrt(2.0f * static_cast<float>(config.n_layers));
  for (auto& t : st.tensors) {
    const auto ends = [&t](std::string_view s) { return t.name.size() >= s.size() && t.name.ends_with(s); };
    if (t.name == "tok_emb") {
      fill_uniform(t, config.seed, 0.05f);
    } else if (t.name == "pos_emb" || t.name == "prompt.pos") {
      fill_uniform(t, config.seed, 0.02f);
    } else if (ends(".g")) {
      std::fill(t.data.begin(), t.data.end(), 1.0f);
    } else if (t.name == "prompt.E_r") {
      for (std::size_t r = 0; r < t.rows; ++r) init_prompt_row(config, r, t.row(r));
    } else if (ends("wqkv") || ends("w1")) {
      fill_uniform(t, config.seed, 1.0f / std::sqrt(static_cast<float>(t.rows)));
    } else if (ends("attn.wo") || ends("mlp.w2")) {
      fill_uniform(t, config.seed, resid / std::sqrt(static_cast<float>(t.rows)));
    } else if (t.name == "prompt.w2") {
      fill_uniform(t, config.seed, 1.0f / std::sqrt(static_cast<float>(t.rows)));
    }
  }
  return st;
}

Eigen::MatrixXf embed_instruction(const ModelState& state, std::size_t i) {
  if (i >= state.registry.tags.size()) {
    throw Error("instruction index " + std::to_string(i) + " out of range (" +
                std::to_string(state.registry.tags.size()) + " registered)");
  }
  return engine::prompt_vectors<float>(state.config, engine::view(state), i);
}

Eigen::MatrixXf forward_logits(const ModelState& state, const PromptSequence& seq, const ForwardOptions& options) {
  const auto ids = seq.ids();
  const auto segs = seq.segments();
  const bool prompt = options.use_prompt && seq.instruction_index >= 0;
  const std::size_t offset = prompt ? state.config.prompt_len : 0;
  if (offset + ids.size() > state.config.context_window) {
    static constexpr const char* kNames[] = {"setup", "exemplar", "instruction", "rationale", "target"};
    const std::size_t first_over = state.config.context_window - offset;
    throw ConfigError(std::string("context overflow in segment '") + kNames[static_cast<int>(segs[first_over])] +
                      "': " + std::to_string(offset + ids.size()) + " positions > " +
                      std::to_string(state.config.context_window));
  }
  engine::SequenceRef ref{&ids, &segs, prompt ? seq.instruction_index : -1};
  engine::Mat<float> logits;
  engine::forward<float>(state.config, engine::view(state), ref, options.ablate_prompt_attention, true, &logits,
                         nullptr);
  return logits;
}

Eigen::MatrixXf final_hidden(const ModelState& state, const std::vector<TokenId>& ids) {
  if (ids.size() > state.config.context_window) throw ConfigError("sequence exceeds context window");
  engine::SequenceRef ref{&ids, nullptr, -1};
  engine::Mat<float> hidden;
  engine::forward<float>(state.config, engine::view(state), ref, false, false, nullptr, &hidden);
  return hidden;
}

std::vector<double> token_nll(const Eigen::MatrixXf& logits, const std::vector<TokenId>& targets,
                              const std::vector<bool>& mask) {
  if (targets.size() != static_cast<std::size_t>(logits.rows()) || mask.size() != targets.size()) {
    throw Error("token_nll: shape mismatch");
  }
  std::vector<double> out;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    const double mx = logits.row(r).maxCoeff();
    double sum = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) sum += std::exp(static_cast<double>(logits(r, j)) - mx);
    out.push_back(mx + std::log(sum) - logits(r, targets[static_cast<std::size_t>(r)]));
  }
  if (out.empty()) throw Error("token_nll: empty mask");
  return out;
}

std::string backbone_digest(const ModelState& state) {
  std::uint64_t h = fnv1a64("backbone");
  const auto bytes = [](const float* p, std::size_t n) {
    return std::string_view(reinterpret_cast<const char*>(p), n * sizeof(float));
  };
  for (std::size_t i = 0; i < state.layout().backbone_end(); ++i) {
    const auto& t = state.tensors[i];
    h = fnv1a64(t.name, h);
    if (i == Layout::kTok) {
      // Instruction-token rows never reach a setup encoding; skipping them keeps
      // store keys valid when only new instruction rows are trained.
      const auto lo = static_cast<std::size_t>(tok::kFixedCount);
      const auto hi = static_cast<std::size_t>(state.vocab.first_word_id());
      h = fnv1a64(bytes(t.data.data(), lo * t.cols), h);
      h = fnv1a64(bytes(t.row(hi), (t.rows - hi) * t.cols), h);
    } else {
      h = fnv1a64(bytes(t.data.data(), t.data.size()), h);
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},         {"n_heads", c.n_heads},
          {"d_model", c.d_model},           {"d_ff", c.d_ff},
          {"context_window", c.context_window}, {"vocab_size", c.vocab_size},
          {"prompt_dim", c.prompt_dim},     {"prompt_hidden", c.prompt_hidden},
          {"prompt_len", c.prompt_len},     {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.d_model = j.at("d_model");
  c.d_ff = j.at("d_ff");
  c.context_window = j.at("context_window");
  c.vocab_size = j.at("vocab_size");
  c.prompt_dim = j.at("prompt_dim");
  c.prompt_hidden = j.at("prompt_hidden");
  c.prompt_len = j.at("prompt_len");
  c.seed = j.at("seed");
  return c;
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& dir) {
  static_assert(std::endian::native == std::endian::little, "checkpoint blob is little-endian");
  std::filesystem::create_directories(dir);
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& t : state.tensors) {
    tensors.push_back({{"name", t.name},
                       {"shape", {t.rows, t.cols}},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"trainable_rows", {t.trainable.begin, t.trainable.end}}});
    offset += t.size() * sizeof(float);
  }
  json manifest{{"format", "critgen-checkpoint-1"},
                {"config", config_to_json(state.config)},
                {"registry", {{"tags", state.registry.tags}, {"frozen_prefix_len", state.registry.frozen_prefix_len}}},
                {"tensors", tensors},
                {"blob_bytes", offset}};
  {
    std::ofstream out(dir / "blob.bin", std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / "blob.bin").string());
    for (const auto& t : state.tensors) {
      out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
  }
  {
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << manifest.dump(1) << '\n';
  }
  state.vocab.save(dir / "vocab.txt");
}

ModelState load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream min(dir / "manifest.json", std::ios::binary);
  if (!min) throw Error("no checkpoint manifest in " + dir.string());
  ModelState st;
  json manifest;
  try {
    manifest = json::parse(min);
    st.config = config_from_json(manifest.at("config"));
    st.registry.tags = manifest.at("registry").at("tags").get<std::vector<std::string>>();
    st.registry.frozen_prefix_len = manifest.at("registry").at("frozen_prefix_len");
  } catch (const json::exception& e) {
    throw FormatError("bad checkpoint manifest: " + std::string(e.what()));
  }
  st.config.validate();
  st.vocab = Vocabulary::load(dir / "vocab.txt");
  if (st.vocab.size() != st.config.vocab_size) throw FormatError("vocabulary size does not match checkpoint config");
  if (st.vocab.instructions() != st.registry.tags) throw FormatError("vocabulary instructions do not match registry");

  st.tensors = build_tensors(st.config, st.registry.tags.size());
  const auto& listed = manifest.at("tensors");
  if (listed.size() != st.tensors.size()) throw FormatError("checkpoint tensor count mismatch");

  std::ifstream blob(dir / "blob.bin", std::ios::binary | std::ios::ate);
  if (!blob) throw Error("no checkpoint blob in " + dir.string());
  const auto blob_size = static_cast<std::size_t>(blob.tellg());
  if (blob_size != manifest.at("blob_bytes").get<std::size_t>()) {
    throw FormatError("checkpoint blob is " + std::to_string(blob_size) + " bytes, manifest says " +
                      manifest.at("blob_bytes").dump());
  }
  for (std::size_t i = 0; i < st.tensors.size(); ++i) {
    auto& t = st.tensors[i];
    const auto& m = listed[i];
    const auto shape = m.at("shape").get<std::vector<std::size_t>>();
    if (m.at("name") != t.name || shape.size() != 2 || shape[0] != t.rows || shape[1] != t.cols ||
        m.at("dtype") != "f32") {
      throw FormatError("checkpoint tensor " + m.at("name").get<std::string>() + " does not match the config");
    }
    const auto off = m.at("offset").get<std::size_t>();
    if (off + t.size() * sizeof(float) > blob_size) throw FormatError("checkpoint tensor " + t.name + " past blob end");
    blob.seekg(static_cast<std::streamoff>(off));
    blob.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    const auto rows = m.at("trainable_rows").get<std::vector<std::size_t>>();
    t.trainable = {rows.at(0), rows.at(1)};
  }
  if (!blob) throw FormatError("checkpoint blob read failed");
  return st;
}

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<const Eigen::VectorXf>;

MapC tmat(const Tensor& t) {
  return MapC(t.data.data(), static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
}
VecMap tvec(const Tensor& t) { return VecMap(t.data.data(), static_cast<Eigen::Index>(t.size())); }

Eigen::VectorXf layer_norm(const Eigen::VectorXf& x, const Tensor& g, const Tensor& b) {
  const float mu = x.mean();
  const float var = (x.array() - mu).square().mean();
  const float r = 1.0f / std::sqrt(var + 1e-5f);
  return ((x.array() - mu) * r * tvec(g).array() + tvec(b).array()).matrix();
}

float gelu(float u) {
  const float c = 0.7978845608028654f;
  return 0.5f * u * (1.0f + std::tanh(c * (u + 0.044715f * u * u * u)));
}

}  // namespace

Decoder::Decoder(const ModelState& state, int instruction_index) : state_(&state) {
  const auto& c = state.config;
  k_.assign(c.n_layers, RowMat::Zero(static_cast<Eigen::Index>(c.context_window), static_cast<Eigen::Index>(c.d_model)));
  v_ = k_;
  if (instruction_index >= 0) {
    const Eigen::MatrixXf hp = embed_instruction(state, static_cast<std::size_t>(instruction_index));
    for (Eigen::Index r = 0; r < hp.rows(); ++r) push_row(hp.row(r).transpose());
  }
}

std::size_t Decoder::capacity_left() const { return state_->config.context_window - rows_; }

void Decoder::feed(TokenId id) {
  const auto& st = *state_;
  if (rows_ >= st.config.context_window) throw Error("decoder context window exhausted");
  if (id < 0 || static_cast<std::size_t>(id) >= st.config.vocab_size) throw Error("token id out of range");
  Eigen::VectorXf x = tmat(st.tensors[Layout::kTok]).row(id).transpose() +
                      tmat(st.tensors[Layout::kPos]).row(static_cast<Eigen::Index>(text_len_)).transpose();
  ++text_len_;
  push_row(std::move(x));
}

void Decoder::push_row(Eigen::VectorXf x) {
  const auto& st = *state_;
  const auto& c = st.config;
  const Layout L = st.layout();
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto H = static_cast<Eigen::Index>(c.n_heads);
  const Eigen::Index dh = d / H;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const auto r = static_cast<Eigen::Index>(rows_);
  const auto& T = st.tensors;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const Eigen::VectorXf a = layer_norm(x, T[L.layer(l, Layout::kLn1G)], T[L.layer(l, Layout::kLn1B)]);
    const Eigen::VectorXf qkv =
        tmat(T[L.layer(l, Layout::kWqkv)]).transpose() * a + tvec(T[L.layer(l, Layout::kBqkv)]);
    k_[l].row(r) = qkv.segment(d, d).transpose();
    v_[l].row(r) = qkv.segment(2 * d, d).transpose();
    Eigen::VectorXf o(d);
    for (Eigen::Index h = 0; h < H; ++h) {
      const auto q = qkv.segment(h * dh, dh);
      Eigen::VectorXf s = (k_[l].block(0, h * dh, r + 1, dh) * q) * scale;
      s = (s.array() - s.maxCoeff()).exp();
      s /= s.sum();
      o.segment(h * dh, dh) = v_[l].block(0, h * dh, r + 1, dh).transpose() * s;
    }
    x += tmat(T[L.layer(l, Layout::kWo)]).transpose() * o + tvec(T[L.layer(l, Layout::kBo)]);
    const Eigen::VectorXf b = layer_norm(x, T[L.layer(l, Layout::kLn2G)], T[L.layer(l, Layout::kLn2B)]);
    Eigen::VectorXf u = tmat(T[L.layer(l, Layout::kW1)]).transpose() * b + tvec(T[L.layer(l, Layout::kB1)]);
    u = u.unaryExpr([](float v) { return gelu(v); });
    x += tmat(T[L.layer(l, Layout::kW2)]).transpose() * u + tvec(T[L.layer(l, Layout::kB2)]);
  }
  ++rows_;
  const Eigen::VectorXf f = layer_norm(x, T[L.lnf_g()], T[L.lnf_b()]);
  logits_ = tmat(T[Layout::kTok]) * f;
}

}  // namespace critgen
