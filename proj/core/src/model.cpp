#include "embalign/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "embalign/errors.hpp"
#include "embalign/ops.hpp"

namespace embalign {

namespace {

constexpr Real kMaskedLogit = -1e9;

template <typename Params, typename Fn>
void visit_block(Params& b, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".attn.wq", b.attn.wq);
  fn(prefix + ".attn.wk", b.attn.wk);
  fn(prefix + ".attn.wv", b.attn.wv);
  fn(prefix + ".attn.wc", b.attn.wc);
  fn(prefix + ".ln1.gamma", b.ln1_gamma);
  fn(prefix + ".ln1.beta", b.ln1_beta);
  fn(prefix + ".ln2.gamma", b.ln2_gamma);
  fn(prefix + ".ln2.beta", b.ln2_beta);
  fn(prefix + ".ffn.w1", b.w1);
  fn(prefix + ".ffn.w2", b.w2);
}

// Visits every parameter tensor in checkpoint order. Works for const and
// non-const ModelParams.
template <typename Model, typename Fn>
void visit_params(Model& m, Fn&& fn) {
  fn(std::string("vision.patch_embed"), m.vision.patch_embed);
  fn(std::string("vision.patch_bias"), m.vision.patch_bias);
  fn(std::string("vision.pos"), m.vision.pos);
  for (std::size_t i = 0; i < m.vision.blocks.size(); ++i) {
    visit_block(m.vision.blocks[i], "vision.block" + std::to_string(i), fn);
  }
  fn(std::string("vision.proj"), m.vision.proj);
  fn(std::string("text.token_embed"), m.text.token_embed);
  fn(std::string("text.pos"), m.text.pos);
  for (std::size_t i = 0; i < m.text.blocks.size(); ++i) {
    visit_block(m.text.blocks[i], "text.block" + std::to_string(i), fn);
  }
  fn(std::string("text.proj"), m.text.proj);
}

Tensor random_normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(dist(rng));
  return Tensor::from_data(std::move(shape), std::move(v));
}

BlockParams init_block(std::size_t d, const ModelConfig& c, std::mt19937_64& rng) {
  const std::size_t hk = c.heads * c.head_dim;
  BlockParams b;
  b.attn.heads = c.heads;
  b.attn.head_dim = c.head_dim;
  b.attn.wq = random_normal({d, hk}, 1.0 / std::sqrt(double(d)), rng);
  b.attn.wk = random_normal({d, hk}, 1.0 / std::sqrt(double(d)), rng);
  b.attn.wv = random_normal({d, hk}, 1.0 / std::sqrt(double(d)), rng);
  b.attn.wc = random_normal({hk, d}, 1.0 / std::sqrt(double(hk)), rng);
  b.ln1_gamma = Tensor::full({1, d}, 1.0);
  b.ln1_beta = Tensor::zeros({1, d});
  b.ln2_gamma = Tensor::full({1, d}, 1.0);
  b.ln2_beta = Tensor::zeros({1, d});
  b.w1 = random_normal({d, c.mlp_dim}, std::sqrt(2.0 / double(d)), rng);
  b.w2 = random_normal({c.mlp_dim, d}, 1.0 / std::sqrt(double(c.mlp_dim)), rng);
  return b;
}

// Tiles an [n x d] tensor `times` times along rows.
Tensor tile_rows(const Tensor& t, std::size_t times) {
  if (times == 1) return t;
  std::vector<Tensor> parts(times, t);
  return ops::concat_rows(parts);
}

// Constant [batch x batch*n] matrix averaging the unmasked rows of each sequence.
Tensor pooling_matrix(std::size_t batch, std::size_t n, std::span<const Real> weights) {
  std::vector<Real> m(batch * batch * n, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += weights.empty() ? 1.0 : weights[b * n + j];
    for (std::size_t j = 0; j < n; ++j) {
      double w = weights.empty() ? 1.0 : weights[b * n + j];
      m[b * batch * n + b * n + j] = static_cast<Real>(w / total);
    }
  }
  return Tensor::from_data({batch, batch * n}, std::move(m));
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (image_size == 0 || patch_size == 0) fail("image and patch sizes must be positive");
  if (image_size % patch_size != 0) {
    fail("image size " + std::to_string(image_size) + " is not divisible by patch size " +
         std::to_string(patch_size));
  }
  if (vision_dim == 0 || text_dim == 0 || embed_dim == 0 || mlp_dim == 0) fail("dimensions must be positive");
  if (heads == 0 || head_dim == 0) fail("head layout must be positive");
  if (vision_depth == 0 || text_depth == 0) fail("depths must be positive");
  if (vocab_size <= kUnknownId) fail("vocabulary must hold the reserved pad and unknown ids");
  if (max_text_len == 0) fail("max text length must be positive");
  if (!(temperature > 0.0)) fail("temperature must be positive");
  if (!(ln_eps > 0.0)) fail("layer norm eps must be positive");
  if (!(pixel_std > 0.0)) fail("pixel std must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},     {"patch_size", c.patch_size},
                     {"vision_dim", c.vision_dim},     {"text_dim", c.text_dim},
                     {"embed_dim", c.embed_dim},       {"heads", c.heads},
                     {"head_dim", c.head_dim},         {"vision_depth", c.vision_depth},
                     {"text_depth", c.text_depth},     {"mlp_dim", c.mlp_dim},
                     {"vocab_size", c.vocab_size},     {"max_text_len", c.max_text_len},
                     {"temperature", c.temperature},   {"ln_eps", c.ln_eps},
                     {"pixel_mean", c.pixel_mean},     {"pixel_std", c.pixel_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.vision_dim = j.value("vision_dim", d.vision_dim);
  c.text_dim = j.value("text_dim", d.text_dim);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.heads = j.value("heads", d.heads);
  c.head_dim = j.value("head_dim", d.head_dim);
  c.vision_depth = j.value("vision_depth", d.vision_depth);
  c.text_depth = j.value("text_depth", d.text_depth);
  c.mlp_dim = j.value("mlp_dim", d.mlp_dim);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_text_len = j.value("max_text_len", d.max_text_len);
  c.temperature = j.value("temperature", d.temperature);
  c.ln_eps = j.value("ln_eps", d.ln_eps);
  c.pixel_mean = j.value("pixel_mean", d.pixel_mean);
  c.pixel_std = j.value("pixel_std", d.pixel_std);
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParams m;
  m.config = config;
  const std::size_t dv = config.vision_dim, dt = config.text_dim, e = config.embed_dim;
  m.vision.patch_embed = random_normal({config.patch_width(), dv}, 1.0 / std::sqrt(double(config.patch_width())), rng);
  m.vision.patch_bias = Tensor::zeros({1, dv});
  m.vision.pos = random_normal({config.num_patches(), dv}, 0.1, rng);
  for (std::size_t i = 0; i < config.vision_depth; ++i) m.vision.blocks.push_back(init_block(dv, config, rng));
  m.vision.proj = random_normal({dv, e}, 1.0 / std::sqrt(double(dv)), rng);
  m.text.token_embed = random_normal({config.vocab_size, dt}, 1.0, rng);
  m.text.pos = random_normal({config.max_text_len, dt}, 0.1, rng);
  for (std::size_t i = 0; i < config.text_depth; ++i) m.text.blocks.push_back(init_block(dt, config, rng));
  m.text.proj = random_normal({dt, e}, 1.0 / std::sqrt(double(dt)), rng);
  return m;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  visit_params(*this, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams copy = *this;
  visit_params(copy, [](const std::string&, Tensor& t) {
    bool rg = t.requires_grad();
    t = t.detach();
    t.set_requires_grad(rg);
  });
  return copy;
}

void ModelParams::set_trainable(bool on) {
  visit_params(*this, [on](const std::string&, Tensor& t) { t.set_requires_grad(on); });
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit_params(*this, [&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

Embedding normalize_embedding(std::span<const Real> v) {
  double ss = 0.0;
  for (Real x : v) ss += static_cast<double>(x) * x;
  const double norm = std::sqrt(ss);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw DegenerateEmbeddingError("cannot normalize a zero or non-finite vector");
  }
  std::vector<Real> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<Real>(v[i] / norm);
  return Embedding(std::move(out));
}

double dot(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) throw DimensionError("embedding dimensions differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

double cosine(const Embedding& a, const Embedding& b) {
  double na = dot(a, a), nb = dot(b, b);
  return dot(a, b) / std::sqrt(na * nb);
}

Tensor attention_block(const Tensor& x, const BlockParams& p, std::size_t seq_len, Real ln_eps,
                       std::span<const Real> key_bias, AttentionProbe* probe) {
  const std::size_t rows = x.rows(), d = x.cols();
  const std::size_t heads = p.attn.heads, k = p.attn.head_dim;
  if (seq_len == 0 || rows % seq_len != 0) {
    throw DimensionError("attention_block: " + std::to_string(rows) + " rows do not split into sequences of " +
                         std::to_string(seq_len));
  }
  if (p.attn.wq.rows() != d || p.attn.wq.cols() != heads * k || p.attn.wc.cols() != d) {
    throw DimensionError("attention_block: parameters do not match input " + shape_string(x.shape()));
  }
  if (!key_bias.empty() && key_bias.size() != rows) {
    throw DimensionError("attention_block: key bias needs one value per row");
  }
  const std::size_t batch = rows / seq_len;
  const Real inv_sqrt_k = 1.0 / std::sqrt(static_cast<Real>(k));

  Tensor q = ops::matmul(x, p.attn.wq);
  Tensor kk = ops::matmul(x, p.attn.wk);
  Tensor v = ops::matmul(x, p.attn.wv);

  std::vector<Tensor> per_seq;
  per_seq.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t r0 = b * seq_len, r1 = r0 + seq_len;
    Tensor qb = batch == 1 ? q : ops::slice_rows(q, r0, r1);
    Tensor kb = batch == 1 ? kk : ops::slice_rows(kk, r0, r1);
    Tensor vb = batch == 1 ? v : ops::slice_rows(v, r0, r1);
    Tensor bias;
    bool masked = false;
    if (!key_bias.empty()) {
      std::vector<Real> bm(seq_len * seq_len);
      for (std::size_t i = 0; i < seq_len; ++i) {
        for (std::size_t j = 0; j < seq_len; ++j) {
          bm[i * seq_len + j] = key_bias[r0 + j];
          masked = masked || key_bias[r0 + j] != 0.0;
        }
      }
      if (masked) bias = Tensor::from_data({seq_len, seq_len}, std::move(bm));
    }
    std::vector<Tensor> head_out;
    head_out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor qh = heads == 1 ? qb : ops::slice_cols(qb, h * k, (h + 1) * k);
      Tensor kh = heads == 1 ? kb : ops::slice_cols(kb, h * k, (h + 1) * k);
      Tensor vh = heads == 1 ? vb : ops::slice_cols(vb, h * k, (h + 1) * k);
      Tensor scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt_k);
      if (masked) scores = ops::add(scores, bias);
      Tensor alpha = ops::softmax_rows(scores);
      if (probe) probe->weights.push_back(alpha);
      head_out.push_back(ops::matmul(alpha, vh));
    }
    per_seq.push_back(heads == 1 ? head_out[0] : ops::concat_cols(head_out));
  }
  Tensor mixed = batch == 1 ? per_seq[0] : ops::concat_rows(per_seq);
  Tensor attn_out = ops::matmul(mixed, p.attn.wc);

  Tensor u = ops::layer_norm(ops::add(x, attn_out), p.ln1_gamma, p.ln1_beta, ln_eps);
  Tensor ff = ops::matmul(ops::relu(ops::matmul(u, p.w1)), p.w2);
  return ops::layer_norm(ops::add(u, ff), p.ln2_gamma, p.ln2_beta, ln_eps);
}

Tensor attention_block(const Tensor& x, const BlockParams& params, Real ln_eps, AttentionProbe* probe) {
  return attention_block(x, params, x.rows(), ln_eps, {}, probe);
}

void check_image(const Tensor& image, const ModelConfig& config) {
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != config.image_size || s[1] != config.image_size || s[2] != 3) {
    throw ConfigError("image shape " + shape_string(s) + " does not match model input [" +
                      std::to_string(config.image_size) + "x" + std::to_string(config.image_size) + "x3]");
  }
}

Tensor image_embeddings(std::span<const Tensor> images, const ModelParams& params) {
  const ModelConfig& c = params.config;
  if (images.empty()) throw ContractError("image_embeddings: empty batch");
  const std::size_t n = c.num_patches();
  const std::vector<Real> shift(c.patch_width(), -c.pixel_mean / c.pixel_std);
  const Tensor shift_row = Tensor::from_data({1, c.patch_width()}, shift);

  std::vector<Tensor> patches;
  patches.reserve(images.size());
  for (const auto& img : images) {
    check_image(img, c);
    patches.push_back(ops::patchify(img, c.patch_size));
  }
  Tensor flat = images.size() == 1 ? patches[0] : ops::concat_rows(patches);
  flat = ops::add_row(ops::scale(flat, 1.0 / c.pixel_std), shift_row);

  Tensor tokens = ops::add_row(ops::matmul(flat, params.vision.patch_embed), params.vision.patch_bias);
  tokens = ops::add(tokens, tile_rows(params.vision.pos, images.size()));
  for (const auto& block : params.vision.blocks) tokens = attention_block(tokens, block, n, c.ln_eps);

  Tensor pooled = ops::matmul(pooling_matrix(images.size(), n, {}), tokens);
  return ops::l2_normalize_rows(ops::matmul(pooled, params.vision.proj));
}

Tensor image_embedding(const Tensor& image, const ModelParams& params) {
  return image_embeddings(std::span<const Tensor>(&image, 1), params);
}

Tensor text_embeddings(std::span<const TokenIds> tokens, const ModelParams& params) {
  const ModelConfig& c = params.config;
  if (tokens.empty()) throw ContractError("text_embeddings: empty batch");
  std::size_t len = 0;
  for (const auto& t : tokens) {
    if (t.empty() || t.size() > c.max_text_len) {
      throw ContractError("token sequence length " + std::to_string(t.size()) + " outside [1, " +
                          std::to_string(c.max_text_len) + "]");
    }
    len = std::max(len, t.size());
  }
  const std::size_t batch = tokens.size();
  std::vector<std::size_t> ids(batch * len, kPadId);
  std::vector<Real> keep(batch * len, 0.0);
  std::vector<Real> key_bias(batch * len, kMaskedLogit);
  for (std::size_t b = 0; b < batch; ++b) {
    bool any = false;
    for (std::size_t j = 0; j < tokens[b].size(); ++j) {
      std::size_t id = tokens[b][j];
      if (id >= c.vocab_size) {
        throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " +
                              std::to_string(c.vocab_size));
      }
      ids[b * len + j] = id;
      if (id != kPadId) {
        keep[b * len + j] = 1.0;
        key_bias[b * len + j] = 0.0;
        any = true;
      }
    }
    if (!any) throw ContractError("token sequence contains only padding");
  }

  Tensor x = ops::gather_rows(params.text.token_embed, ids);
  Tensor pos = len == c.max_text_len ? params.text.pos : ops::slice_rows(params.text.pos, 0, len);
  x = ops::add(x, tile_rows(pos, batch));
  for (const auto& block : params.text.blocks) x = attention_block(x, block, len, c.ln_eps, key_bias);

  Tensor pooled = ops::matmul(pooling_matrix(batch, len, keep), x);
  return ops::l2_normalize_rows(ops::matmul(pooled, params.text.proj));
}

namespace {

std::vector<Embedding> split_rows(const Tensor& t) {
  std::vector<Embedding> out;
  const std::size_t e = t.cols();
  auto v = t.data();
  for (std::size_t r = 0; r < t.rows(); ++r) out.push_back(normalize_embedding(v.subspan(r * e, e)));
  return out;
}

// Inference batches are capped so activations stay small.
constexpr std::size_t kInferenceBatch = 64;

}  // namespace

Embedding encode_image(const Tensor& image, const ModelParams& params) {
  return normalize_embedding(image_embedding(image.detach(), params).data());
}

std::vector<Embedding> encode_images(std::span<const Tensor> images, const ModelParams& params) {
  std::vector<Embedding> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); i += kInferenceBatch) {
    std::vector<Tensor> chunk;
    for (std::size_t j = i; j < std::min(images.size(), i + kInferenceBatch); ++j) {
      chunk.push_back(images[j].detach());
    }
    for (auto& e : split_rows(image_embeddings(chunk, params))) out.push_back(std::move(e));
  }
  return out;
}

Embedding encode_text(const TokenIds& tokens, const ModelParams& params) {
  return normalize_embedding(text_embeddings(std::span<const TokenIds>(&tokens, 1), params).data());
}

std::vector<Embedding> encode_texts(std::span<const TokenIds> tokens, const ModelParams& params) {
  std::vector<Embedding> out;
  out.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); i += kInferenceBatch) {
    auto chunk = tokens.subspan(i, std::min(kInferenceBatch, tokens.size() - i));
    for (auto& e : split_rows(text_embeddings(chunk, params))) out.push_back(std::move(e));
  }
  return out;
}

std::vector<double> zero_shot_classify(const Embedding& image, std::span<const Embedding> texts,
                                       double temperature) {
  if (texts.empty()) throw ContractError("zero_shot_classify: empty candidate list");
  if (!(temperature > 0.0)) throw ContractError("zero_shot_classify: temperature must be positive");
  std::vector<double> logits(texts.size());
  for (std::size_t j = 0; j < texts.size(); ++j) logits[j] = dot(image, texts[j]) / temperature;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& l : logits) {
    l = std::exp(l - mx);
    z += l;
  }
  for (auto& l : logits) l /= z;
  return logits;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ContractError("argmax of an empty sequence");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::size_t predict_label(const Embedding& image, std::span<const Embedding> texts) {
  if (texts.empty()) throw ContractError("predict_label: empty candidate list");
  std::vector<double> scores(texts.size());
  for (std::size_t j = 0; j < texts.size(); ++j) scores[j] = dot(image, texts[j]);
  return argmax(scores);
}

}  // namespace embalign
