#pragma once

#include <cstddef>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "embalign/tensor.hpp"

namespace embalign {

using TokenIds = std::vector<std::size_t>;

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnknownId = 1;

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t vision_dim = 64;
  std::size_t text_dim = 64;
  std::size_t embed_dim = 32;
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t vision_depth = 3;
  std::size_t text_depth = 2;
  std::size_t mlp_dim = 128;
  std::size_t vocab_size = 40;
  std::size_t max_text_len = 8;
  Real temperature = 0.07;
  Real ln_eps = 1e-5;
  // Per-channel pixel standardization applied before patch embedding.
  Real pixel_mean = 0.5;
  Real pixel_std = 0.25;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_width() const { return 3 * patch_size * patch_size; }

  // Throws ConfigError describing the first inconsistency.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Head h owns columns [h*k, (h+1)*k) of wq/wk/wv and rows [h*k, (h+1)*k) of wc.
struct AttentionParams {
  Tensor wq, wk, wv;  // d x H*k
  Tensor wc;          // H*k x d
  std::size_t heads = 0;
  std::size_t head_dim = 0;
};

struct BlockParams {
  AttentionParams attn;
  Tensor ln1_gamma, ln1_beta;
  Tensor ln2_gamma, ln2_beta;
  Tensor w1;  // d x m
  Tensor w2;  // m x d
};

struct VisionTower {
  Tensor patch_embed;  // 3p^2 x d
  Tensor patch_bias;   // 1 x d
  Tensor pos;          // n x d
  std::vector<BlockParams> blocks;
  Tensor proj;  // d x e
};

struct TextTower {
  Tensor token_embed;  // V x d_t
  Tensor pos;          // max_len x d_t
  std::vector<BlockParams> blocks;
  Tensor proj;  // d_t x e
};

struct ModelParams {
  ModelConfig config;
  VisionTower vision;
  TextTower text;

  // Random initialization; fully determined by (config, seed).
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  // Stable name -> tensor table, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  // Deep copy with fresh, independent tensors.
  ModelParams clone() const;
  void set_trainable(bool on);
  std::size_t parameter_count() const;
};

// Unit-norm vector in the shared space.
class Embedding {
 public:
  Embedding() = default;
  std::span<const Real> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  Real operator[](std::size_t i) const { return values_[i]; }

  friend Embedding normalize_embedding(std::span<const Real> v);

 private:
  explicit Embedding(std::vector<Real> v) : values_(std::move(v)) {}
  std::vector<Real> values_;
};

// v / ||v||; throws DegenerateEmbeddingError on a zero vector.
Embedding normalize_embedding(std::span<const Real> v);
double dot(const Embedding& a, const Embedding& b);
double cosine(const Embedding& a, const Embedding& b);

// Optional capture of attention weights (one n x n matrix per sequence and head).
struct AttentionProbe {
  std::vector<Tensor> weights;
};

// One transformer block over a batch of equal-length sequences stacked as
// rows: x is [batch*seq_len x d]. key_bias (empty, or batch*seq_len values)
// is added to the attention logits of each key column; a large negative value
// masks the key out.
Tensor attention_block(const Tensor& x, const BlockParams& params, std::size_t seq_len, Real ln_eps,
                       std::span<const Real> key_bias = {}, AttentionProbe* probe = nullptr);

// Single-sequence convenience: x is [n x d].
Tensor attention_block(const Tensor& x, const BlockParams& params, Real ln_eps = 1e-5,
                       AttentionProbe* probe = nullptr);

void check_image(const Tensor& image, const ModelConfig& config);

// Differentiable encoders. Outputs are row-normalized embeddings [batch x e].
Tensor image_embeddings(std::span<const Tensor> images, const ModelParams& params);
Tensor image_embedding(const Tensor& image, const ModelParams& params);
Tensor text_embeddings(std::span<const TokenIds> tokens, const ModelParams& params);

Embedding encode_image(const Tensor& image, const ModelParams& params);
std::vector<Embedding> encode_images(std::span<const Tensor> images, const ModelParams& params);
Embedding encode_text(const TokenIds& tokens, const ModelParams& params);
std::vector<Embedding> encode_texts(std::span<const TokenIds> tokens, const ModelParams& params);

// Softmax over dot(img, text_j) / temperature.
std::vector<double> zero_shot_classify(const Embedding& image, std::span<const Embedding> texts,
                                       double temperature);
// Argmax with ties broken towards the lowest index.
std::size_t argmax(std::span<const double> values);
std::size_t predict_label(const Embedding& image, std::span<const Embedding> texts);

}  // namespace embalign
